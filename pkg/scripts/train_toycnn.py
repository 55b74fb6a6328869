#!/usr/bin/env python3
"""Train the bundled toy CNN classifier and freeze it as test fixtures.

Produces, under tests/fixtures/:
  toycnn.sim / toycnn.sim.bin   stripped model (deployment layouts, no attrs)
  dataset/img_NN.pgm            20 held-out samples (10 per class)
  dataset/labels.txt            manifest with ground-truth labels

Task: 16x16 grayscale images with a soft bright blob either in the left
half (class 0) or the right half (class 1) over background noise. The
contrast is kept small so the trained classifier is accurate on clean
inputs yet within reach of an 8/255 L-inf budget.

Run from the repository root:  python3 scripts/train_toycnn.py
"""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from reprobe.dataset import write_pnm  # noqa: E402
from reprobe.rebuild import (  # noqa: E402
    ComputationalGraph,
    InputNode,
    OperatorNode,
    ParameterNode,
)
from reprobe.runtime.session import Session, mse_loss  # noqa: E402
from reprobe.simfmt import SimOp, SimTensor, StrippedGraph, save_sim  # noqa: E402

SIZE = 16
BLOB_CONTRAST = 28.0
NOISE = 12.0
BACKGROUND = 120.0


def make_image(rng: np.random.Generator, label: int) -> np.ndarray:
    img = BACKGROUND + rng.uniform(-NOISE, NOISE, size=(SIZE, SIZE))
    cy = rng.uniform(5, 11)
    cx = rng.uniform(3.0, 5.0) if label == 0 else rng.uniform(11.0, 13.0)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    blob = BLOB_CONTRAST * np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / 8.0))
    return np.clip(img + blob, 0, 255).round().astype(np.uint8)


def build_graph(rng: np.random.Generator) -> ComputationalGraph:
    w1 = (rng.normal(size=(3, 3, 1, 4)) * 0.3).astype(np.float32)
    b1 = np.zeros(4, dtype=np.float32)
    w2 = (rng.normal(size=(64, 2)) * 0.3).astype(np.float32)
    b2 = np.zeros(2, dtype=np.float32)
    return ComputationalGraph((
        InputNode("in0", (1, SIZE, SIZE, 1)),
        ParameterNode("p1", (3, 3, 1, 4), w1),
        ParameterNode("p2", (4,), b1),
        ParameterNode("p7", (64, 2), w2),
        ParameterNode("p8", (2,), b2),
        OperatorNode("n3", "conv2d", ("in0", "p1", "p2"), (1, 8, 8, 4),
                     {"filters": 4, "kernel_size": (3, 3), "strides": (2, 2),
                      "padding": "same"}),
        OperatorNode("n4", "relu", ("n3",), (1, 8, 8, 4), {}),
        OperatorNode("n5", "avg_pool2d", ("n4",), (1, 4, 4, 4),
                     {"pool_size": 2, "padding": "same"}),
        OperatorNode("n6", "reshape", ("n5",), (1, 64), {"target_shape": (1, 64)}),
        OperatorNode("n9", "dense", ("n6", "p7", "p8"), (1, 2), {"units": 2}),
        OperatorNode("n10", "softmax", ("n9",), (1, 2), {}),
    ), ("n10",))


def train(g: ComputationalGraph, rng: np.random.Generator,
          steps: int = 3000, lr: float = 0.5) -> None:
    """SGD toward smoothed targets; smoothing keeps the softmax off its
    saturation plateau and leaves the decision margin deliberately small."""
    session = Session(g)
    params = {p.name: p.values for p in g.parameters()}
    for step in range(steps):
        label = step % 2
        x = make_image(rng, label).astype(np.float64)[None, :, :, None] / 255.0
        target = np.full((1, 2), 0.25)
        target[0, label] = 0.75
        out = session.forward({"in0": x})["n10"]
        _, grad = mse_loss(out, target)
        session.backward({"n10": grad})
        for name, values in params.items():
            g_p = session.gradients.get(name)
            if g_p is not None:
                values -= (lr * g_p).astype(np.float32)


def accuracy(g: ComputationalGraph, images, labels) -> float:
    session = Session(g)
    hits = 0
    for img, lab in zip(images, labels):
        x = img.astype(np.float64)[None, :, :, None] / 255.0
        out = session.forward({"in0": x})["n10"]
        hits += int(np.argmax(out) == lab)
    return hits / len(labels)


def export_sim(g: ComputationalGraph, path: Path) -> None:
    """Write the stripped model using deployment-style layouts."""
    by = g.by_name
    w1 = np.transpose(by["p1"].values, (3, 0, 1, 2))  # HWIO -> OHWI
    w2 = np.transpose(by["p7"].values, (1, 0))        # IO -> OI
    tensors = (
        SimTensor(0, (1, SIZE, SIZE, 1), "f32"),
        SimTensor(1, w1.shape, "f32", data=w1, layout="OHWI"),
        SimTensor(2, (4,), "f32", data=by["p2"].values, layout="RAW"),
        SimTensor(3, (1, 8, 8, 4), "f32"),
        SimTensor(4, (1, 8, 8, 4), "f32"),
        SimTensor(5, (1, 4, 4, 4), "f32"),
        SimTensor(6, (1, 64), "f32"),
        SimTensor(7, w2.shape, "f32", data=w2, layout="OI"),
        SimTensor(8, (2,), "f32", data=by["p8"].values, layout="RAW"),
        SimTensor(9, (1, 2), "f32"),
        SimTensor(10, (1, 2), "f32"),
    )
    ops = (
        SimOp(1, (0, 1, 2), (3,)),
        SimOp(15, (3,), (4,)),
        SimOp(5, (4,), (5,)),
        SimOp(14, (5,), (6,)),
        SimOp(10, (6, 7, 8), (9,)),
        SimOp(17, (9,), (10,)),
    )
    save_sim(StrippedGraph(tensors, ops, (0,), (10,)), path)


def main() -> None:
    fixtures = ROOT / "tests" / "fixtures"
    (fixtures / "dataset").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(2024)

    g = build_graph(rng)
    train(g, rng)

    test_rng = np.random.default_rng(7)
    images, labels = [], []
    for i in range(20):
        lab = i % 2
        images.append(make_image(test_rng, lab))
        labels.append(lab)
    acc = accuracy(g, images, labels)
    print(f"clean accuracy on the 20 held-out samples: {acc:.2f}")
    if acc < 1.0:
        raise SystemExit("refusing to freeze a model that misclassifies clean samples")

    export_sim(g, fixtures / "toycnn.sim")
    manifest = []
    for i, (img, lab) in enumerate(zip(images, labels)):
        name = f"img_{i:02d}.pgm"
        write_pnm(fixtures / "dataset" / name, img)
        manifest.append(f"{name} {lab}")
    (fixtures / "dataset" / "labels.txt").write_text("\n".join(manifest) + "\n")
    print(f"fixtures written under {fixtures}")


if __name__ == "__main__":
    main()
