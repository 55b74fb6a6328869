"""PGD robustness assessment: attack, task metrics, SSIM, flagging verdict.

The attack iterates x <- Proj(x + alpha * sgn(grad_x MSE(f(x), y_ref)))
inside the L-inf ball of radius epsilon around the original input,
clamping to the valid input range after every step. The budget is stated
in raw input units; the config records both the raw value and the value
after input scaling (8 on 0..255 images becomes 8/255 once the processing
code divides by 255).

Four task metrics quantify the attack's effect; a model is flagged when
the aggregate metric is strictly larger than the threshold (0.6).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .interp import interpret
from .runtime.ops import ShapeMismatch
from .runtime.session import Session, mse_loss

__all__ = [
    "AttackConfig", "TaskSpec", "RobustnessReport", "SampleOutcome",
    "pgd_attack", "metric_type1", "metric_type2", "metric_type3",
    "metric_type4", "ssim", "assess", "evaluate_sample", "aggregate_outcomes",
    "format_report", "EmptyDataset", "EmptyDetections", "ImageTooSmall",
    "decode_argmax", "decode_boxes", "decode_pixel_labels", "ProcessingHarness",
]


class EmptyDataset(ValueError):
    pass


class EmptyDetections(ValueError):
    pass


class ImageTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    """L-inf PGD configuration; epsilon/alpha are in raw input units."""

    epsilon: float
    alpha: float
    iterations: int
    input_scale: float = 1.0  # raw units -> model input units
    clamp: tuple[float, float] = (0.0, 1.0)
    threshold: float = 0.6
    targeted: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    @property
    def epsilon_scaled(self) -> float:
        return self.epsilon * self.input_scale

    @property
    def alpha_scaled(self) -> float:
        return self.alpha * self.input_scale


@dataclass(frozen=True)
class TaskSpec:
    """Task family plus the decoding from model outputs to comparable results.

    decoder: model output -> labels / boxes / pixel-label map / image.
    encode_target: ground-truth string -> tensor in model-output space;
    required for type-1/2 tasks (the attack ascends away from it), ignored
    for types 3/4 where the clean output is the reference.
    """

    task_type: str  # "t1" | "t2" | "t3" | "t4"
    decoder: object
    encode_target: object | None = None

    def __post_init__(self):
        if self.task_type not in ("t1", "t2", "t3", "t4"):
            raise ValueError(f"unknown task type {self.task_type!r}")


@dataclass(frozen=True)
class SampleOutcome:
    name: str
    clean: object
    attacked: object
    contribution: float


@dataclass(frozen=True)
class RobustnessReport:
    task_type: str
    per_sample: tuple[SampleOutcome, ...]
    aggregate: float
    flagged: bool
    config: AttackConfig
    threshold: float


def pgd_attack(
    session: Session,
    x: np.ndarray,
    y_ref: np.ndarray,
    cfg: AttackConfig,
    input_name: str | None = None,
    output_name: str | None = None,
    step_callback=None,
) -> np.ndarray:
    """Iterated sign-gradient ascent on MSE, projected into the eps-ball.

    `x` is the model-input tensor (already scaled); `y_ref` the reference
    output the loss is measured against. With cfg.targeted the steps
    descend toward y_ref instead.
    """
    if input_name is None:
        inputs = session.graph.inputs()
        if len(inputs) != 1:
            raise ShapeMismatch("input_name required for multi-input graphs")
        input_name = inputs[0].name
    if output_name is None:
        if len(session.graph.outputs) != 1:
            raise ShapeMismatch("output_name required for multi-output graphs")
        output_name = session.graph.outputs[0]

    x = np.asarray(x, dtype=np.float64)
    eps = cfg.epsilon_scaled
    alpha = cfg.alpha_scaled
    lo = np.maximum(x - eps, cfg.clamp[0])
    hi = np.minimum(x + eps, cfg.clamp[1])
    direction = -1.0 if cfg.targeted else 1.0
    x_adv = x.copy()
    for t in range(cfg.iterations):
        out = session.forward({input_name: x_adv})
        _, grad_out = mse_loss(out[output_name], y_ref)
        grad_in = session.backward({output_name: grad_out})[input_name]
        x_adv = x_adv + direction * alpha * np.sign(grad_in)
        x_adv = np.minimum(np.maximum(x_adv, lo), hi)
        if step_callback is not None:
            step_callback(t, x_adv.copy())
    return x_adv


# ---- task metrics ----

def metric_type1(labels, attacked_labels) -> float:
    """Fraction of samples whose inferred label changed."""
    if len(labels) != len(attacked_labels):
        raise ShapeMismatch("label lists must pair up")
    if len(labels) == 0:
        raise EmptyDataset("no samples")
    changed = sum(1 for a, b in zip(labels, attacked_labels) if a != b)
    return changed / len(labels)


def _iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = a[:4]
    bx1, by1, bx2, by2 = b[:4]
    ix1, iy1 = max(ax1, bx1), max(ay1, by1)
    ix2, iy2 = min(ax2, bx2), min(ay2, by2)
    iw, ih = max(0.0, ix2 - ix1), max(0.0, iy2 - iy1)
    inter = iw * ih
    area_a = max(0.0, ax2 - ax1) * max(0.0, ay2 - ay1)
    area_b = max(0.0, bx2 - bx1) * max(0.0, by2 - by1)
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def metric_type2(boxes, attacked_boxes, iou_threshold: float = 0.5) -> float:
    """Fraction of original boxes whose class changed under attack.

    Boxes are (x1, y1, x2, y2, class). Pairs are matched greedily by
    descending IoU at the given threshold; an original box with no match
    counts as changed.
    """
    if len(boxes) == 0:
        raise EmptyDetections("no detections on the clean inputs")
    pairs = sorted(
        ((_iou(b, a), i, j) for i, b in enumerate(boxes) for j, a in enumerate(attacked_boxes)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    matched_orig: dict[int, int] = {}
    used_adv: set[int] = set()
    for iou, i, j in pairs:
        if iou < iou_threshold:
            break
        if i in matched_orig or j in used_adv:
            continue
        matched_orig[i] = j
        used_adv.add(j)
    changed = 0
    for i, b in enumerate(boxes):
        j = matched_orig.get(i)
        if j is None or boxes[i][4] != attacked_boxes[j][4]:
            changed += 1
    return changed / len(boxes)


def metric_type3(label_map, attacked_map) -> float:
    """Fraction of pixels whose semantic label changed."""
    a = np.asarray(label_map)
    b = np.asarray(attacked_map)
    if a.shape != b.shape:
        raise ShapeMismatch(f"label maps differ in shape: {a.shape} vs {b.shape}")
    return float(np.mean(a != b))


def metric_type4(out_clean, out_attacked, data_range: float = 1.0,
                 window: int = 8) -> float:
    """Drop in structural similarity between clean and attacked outputs."""
    return 1.0 - ssim(out_clean, out_attacked, data_range=data_range, window=window)


def ssim(a, b, data_range: float = 1.0, window: int = 8) -> float:
    """Windowed SSIM with a uniform window; multichannel inputs averaged.

    Stabilizers are C1=(0.01*R)^2 and C2=(0.03*R)^2 for dynamic range R.
    Symmetric in its arguments.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"images differ in shape: {a.shape} vs {b.shape}")
    a = _as_hwc(a)
    b = _as_hwc(b)
    if a.shape[0] < window or a.shape[1] < window:
        raise ImageTooSmall(f"image {a.shape[:2]} smaller than the {window}x{window} window")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    vals = []
    for c in range(a.shape[2]):
        vals.append(_ssim_channel(a[:, :, c], b[:, :, c], window, c1, c2))
    return float(np.mean(vals))


def _as_hwc(x: np.ndarray) -> np.ndarray:
    x = np.squeeze(x)
    if x.ndim == 2:
        return x[:, :, None]
    if x.ndim == 3:
        return x
    raise ShapeMismatch(f"expected an image, got shape {x.shape}")


def _box_mean(x: np.ndarray, w: int) -> np.ndarray:
    """Mean over every w-by-w window (stride 1) via integral images."""
    c = np.cumsum(np.cumsum(x, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    total = c[w:, w:] - c[:-w, w:] - c[w:, :-w] + c[:-w, :-w]
    return total / (w * w)


def _ssim_channel(a, b, w, c1, c2) -> float:
    mu_a = _box_mean(a, w)
    mu_b = _box_mean(b, w)
    var_a = _box_mean(a * a, w) - mu_a * mu_a
    var_b = _box_mean(b * b, w) - mu_b * mu_b
    cov = _box_mean(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# ---- standard decoders ----

def decode_argmax(output: np.ndarray) -> int:
    return int(np.argmax(np.asarray(output).reshape(-1)))


def decode_pixel_labels(output: np.ndarray) -> np.ndarray:
    out = np.asarray(output)
    out = out.reshape(out.shape[-3], out.shape[-2], out.shape[-1])
    return np.argmax(out, axis=-1)


def decode_boxes(output: np.ndarray) -> list[tuple]:
    """Rows of [x1, y1, x2, y2, class scores...] -> (coords..., argmax class)."""
    out = np.asarray(output)
    out = out.reshape(-1, out.shape[-1])
    boxes = []
    for row in out:
        boxes.append((float(row[0]), float(row[1]), float(row[2]), float(row[3]),
                      int(np.argmax(row[4:])) if len(row) > 5 else int(row[4])))
    return boxes


# ---- end-to-end assessment ----

@dataclass
class ProcessingHarness:
    """Runs emitted processing code around the model session.

    The pre-processing program computes the model input from the raw
    sample; the inference primitive is intercepted to capture that tensor
    and to inject model outputs back into the post-processing code.
    """

    program: object  # ProcessingProgram
    infer_name: str
    input_extern: str

    def model_input(self, session: Session, raw_value) -> np.ndarray:
        captured: list = []
        out_name = session.graph.outputs[0]
        dummy = [0.0] * int(np.prod(session.graph.shape_of(out_name)))

        def infer_stub(*args):
            captured.append(args)
            return list(dummy)

        interpret(self.program,
                  inputs={self.input_extern: raw_value},
                  externs={self.infer_name: infer_stub})
        if not captured:
            raise EmptyDataset("processing program never invoked the inference primitive")
        arg = captured[0][0] if len(captured[0]) == 1 else list(captured[0])
        shape = session.graph.inputs()[0].shape
        return np.asarray(arg, dtype=np.float64).reshape(shape)

    def decode(self, raw_value, model_output: np.ndarray):
        flat = np.asarray(model_output).reshape(-1).tolist()

        def infer_stub(*_args):
            return flat

        result = interpret(self.program,
                           inputs={self.input_extern: raw_value},
                           externs={self.infer_name: infer_stub})
        return result


def evaluate_sample(
    session: Session,
    sample,
    task: TaskSpec,
    cfg: AttackConfig,
    model_input_fn=None,
    decode_fn=None,
) -> SampleOutcome:
    """Attack one sample and decode both the clean and attacked outputs."""
    input_node = session.graph.inputs()[0]
    out_name = session.graph.outputs[0]
    if model_input_fn is not None:
        x = model_input_fn(sample)
    else:
        raw = np.asarray(sample.image, dtype=np.float64)
        x = (raw * cfg.input_scale).reshape(input_node.shape)
    clean_out = session.forward({input_node.name: x})[out_name]

    if task.task_type in ("t1", "t2") and task.encode_target is not None:
        y_ref = np.asarray(task.encode_target(sample.truth, clean_out.shape),
                           dtype=np.float64)
    else:
        y_ref = clean_out
    x_adv = pgd_attack(session, x, y_ref, cfg,
                       input_name=input_node.name, output_name=out_name)
    adv_out = session.forward({input_node.name: x_adv})[out_name]

    if decode_fn is not None:
        dec_clean = decode_fn(sample, clean_out)
        dec_adv = decode_fn(sample, adv_out)
    else:
        dec_clean = task.decoder(clean_out)
        dec_adv = task.decoder(adv_out)

    if task.task_type == "t1":
        contrib = 0.0 if dec_clean == dec_adv else 1.0
    elif task.task_type == "t2":
        contrib = metric_type2(dec_clean, dec_adv) if dec_clean else 0.0
    elif task.task_type == "t3":
        contrib = metric_type3(dec_clean, dec_adv)
    else:
        contrib = metric_type4(dec_clean, dec_adv)
    return SampleOutcome(sample.name, dec_clean, dec_adv, contrib)


def aggregate_outcomes(task: TaskSpec, outcomes: list[SampleOutcome],
                       cfg: AttackConfig) -> RobustnessReport:
    """Single-threaded reduction of per-sample outcomes into the verdict."""
    if not outcomes:
        raise EmptyDataset("dataset is empty")
    if task.task_type == "t1":
        aggregate = metric_type1([o.clean for o in outcomes],
                                 [o.attacked for o in outcomes])
    elif task.task_type == "t2":
        boxes_clean: list = []
        boxes_adv: list = []
        for o in outcomes:
            boxes_clean.extend(o.clean)
            boxes_adv.extend(o.attacked)
        aggregate = metric_type2(boxes_clean, boxes_adv)
    else:
        aggregate = float(np.mean([o.contribution for o in outcomes]))
    return RobustnessReport(
        task_type=task.task_type,
        per_sample=tuple(outcomes),
        aggregate=aggregate,
        flagged=aggregate > cfg.threshold,
        config=cfg,
        threshold=cfg.threshold,
    )


def assess(
    session: Session,
    dataset,
    task: TaskSpec,
    cfg: AttackConfig,
    model_input_fn=None,
    decode_fn=None,
) -> RobustnessReport:
    """Attack every sample and aggregate the task metric into a verdict.

    model_input_fn(sample) -> model input tensor (defaults to scaling the
    raw image by cfg.input_scale); decode_fn(sample, output) -> decoded
    result (defaults to task.decoder on the raw output).
    """
    samples = list(dataset)
    if not samples:
        raise EmptyDataset("dataset is empty")
    outcomes = [
        evaluate_sample(session, s, task, cfg, model_input_fn, decode_fn)
        for s in samples
    ]
    return aggregate_outcomes(task, outcomes, cfg)


def format_report(report: RobustnessReport, tool_version: str = "0.1.0") -> str:
    cfg = report.config
    lines = [
        "RREPORT v1",
        f"tool reprobe {tool_version}",
        f"task {report.task_type}",
        f"epsilon_raw {cfg.epsilon!r}",
        f"epsilon_scaled {cfg.epsilon_scaled!r}",
        f"alpha_raw {cfg.alpha!r}",
        f"alpha_scaled {cfg.alpha_scaled!r}",
        f"iterations {cfg.iterations}",
        f"input_scale {cfg.input_scale!r}",
        f"clamp {cfg.clamp[0]!r} {cfg.clamp[1]!r}",
        f"threshold {report.threshold!r}",
        f"seed {cfg.seed}",
        f"targeted {str(cfg.targeted).lower()}",
    ]
    for o in report.per_sample:
        lines.append(
            f"sample {o.name} clean={_short(o.clean)} attacked={_short(o.attacked)} "
            f"contribution={o.contribution!r}")
    lines.append(f"aggregate {report.aggregate!r}")
    lines.append(f"flagged {str(report.flagged).lower()}")
    return "\n".join(lines) + "\n"


def _short(value) -> str:
    if isinstance(value, (int, float, str)):
        return str(value)
    arr = np.asarray(value)
    return f"<{arr.dtype}{list(arr.shape)}>"
