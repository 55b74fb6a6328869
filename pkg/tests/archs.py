"""Synthetic architecture builder: reference graph + stripped SIM twin.

Builds a linear chain of operators from declared attributes, computing
every tensor shape, then emits (a) the reference computational graph with
canonical-layout float32 weights and (b) the stripped SIM with deployment
layouts (OHWI kernels, OI dense, 1HWO depthwise) and no attributes, so
tests can check that attribute completion recovers the declared attrs
exactly and that the rebuilt model computes identically.
"""
from __future__ import annotations

import numpy as np

from reprobe.rebuild import (
    ComputationalGraph,
    InputNode,
    OperatorNode,
    ParameterNode,
    derive_output_shape,
)
from reprobe.simfmt import OP_NAMES, SimOp, SimTensor, StrippedGraph

WEIGHTED = {"conv2d", "depthwise_conv2d", "conv2d_transpose", "dense"}


def _make_weight(op_type: str, attrs: dict, in_shape, rng) -> np.ndarray:
    if op_type == "conv2d" or op_type == "conv2d_transpose":
        kh, kw = attrs["kernel_size"]
        return rng.normal(size=(kh, kw, in_shape[-1], attrs["filters"])).astype(np.float32)
    if op_type == "depthwise_conv2d":
        kh, kw = attrs["kernel_size"]
        return rng.normal(
            size=(kh, kw, in_shape[-1], attrs["depth_multiplier"])).astype(np.float32)
    if op_type == "dense":
        return rng.normal(size=(in_shape[-1], attrs["units"])).astype(np.float32)
    raise ValueError(op_type)


def _deploy_layout(op_type: str, w: np.ndarray) -> tuple[np.ndarray, str]:
    if op_type in ("conv2d", "conv2d_transpose"):
        return np.transpose(w, (3, 0, 1, 2)), "OHWI"
    if op_type == "depthwise_conv2d":
        kh, kw, c, m = w.shape
        return w.reshape(1, kh, kw, c * m), "1HWO"
    return np.transpose(w, (1, 0)), "OI"


def quantize_exact(w: np.ndarray, scale: float = 2.0 ** -6,
                   zero_point: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Snap weights onto the q8 grid; returns (grid-exact float32, q8)."""
    q = np.clip(np.round(w / scale) + zero_point, 0, 255).astype(np.uint8)
    exact = (scale * (q.astype(np.float64) - zero_point)).astype(np.float32)
    return exact, q


def build_chain(input_shape, layers, rng, quantized_layers=frozenset(),
                scale: float = 2.0 ** -6, zero_point: int = 128):
    """Returns (StrippedGraph, reference ComputationalGraph, declared attrs).

    `layers` is a list of (op_type, attrs) applied in order; layers listed
    in `quantized_layers` store their weights as q8 on an exact grid, and
    the reference graph carries the identical grid values.
    """
    tensors: list[SimTensor] = [SimTensor(0, tuple(input_shape), "f32")]
    ops: list[SimOp] = []
    ref_nodes: list = [InputNode("in0", tuple(input_shape))]
    tid = 0
    cur_shape = tuple(input_shape)
    cur_name = "in0"
    declared: list[dict] = []

    for li, (op_type, attrs) in enumerate(layers):
        op_inputs = [tid]
        ref_inputs = [cur_name]
        if op_type in WEIGHTED:
            w = _make_weight(op_type, attrs, cur_shape, rng)
            if li in quantized_layers:
                w, q = quantize_exact(w, scale, zero_point)
            tid += 1
            w_dep, layout = _deploy_layout(op_type, w)
            if li in quantized_layers:
                q_dep, _ = _deploy_layout(op_type, q.astype(np.float32))
                tensors.append(SimTensor(tid, w_dep.shape, "q8", scale, zero_point,
                                         q_dep.astype(np.uint8), layout))
            else:
                tensors.append(SimTensor(tid, w_dep.shape, "f32", data=w_dep,
                                         layout=layout))
            ref_nodes.append(ParameterNode(f"p{tid}", w.shape, w))
            op_inputs.append(tid)
            ref_inputs.append(f"p{tid}")
            # bias
            n_out = w.shape[-1] if op_type != "depthwise_conv2d" else w.shape[2] * w.shape[3]
            bias = rng.normal(size=(n_out,)).astype(np.float32)
            tid += 1
            tensors.append(SimTensor(tid, bias.shape, "f32", data=bias, layout="RAW"))
            ref_nodes.append(ParameterNode(f"p{tid}", bias.shape, bias))
            op_inputs.append(tid)
            ref_inputs.append(f"p{tid}")

        out_shape = derive_output_shape(op_type, attrs, (cur_shape,))
        tid += 1
        tensors.append(SimTensor(tid, out_shape, "f32"))
        ops.append(SimOp(OP_NAMES[op_type], tuple(op_inputs), (tid,)))
        ref_nodes.append(OperatorNode(f"n{tid}", op_type, tuple(ref_inputs),
                                      out_shape, dict(attrs)))
        declared.append(dict(attrs))
        cur_shape = out_shape
        cur_name = f"n{tid}"

    sg = StrippedGraph(tuple(tensors), tuple(ops), (0,), (tid,))
    ref = ComputationalGraph(tuple(ref_nodes), (cur_name,))
    return sg, ref, declared


ARCHITECTURES = [
    # every shape-bearing family, both padding modes where representable
    ("conv_valid_same", (1, 13, 13, 3), [
        ("conv2d", {"filters": 4, "kernel_size": (3, 3), "strides": (1, 1), "padding": "valid"}),
        ("conv2d", {"filters": 8, "kernel_size": (3, 3), "strides": (2, 2), "padding": "same"}),
        ("relu", {}),
    ]),
    ("depthwise_both", (1, 12, 12, 3), [
        ("depthwise_conv2d", {"filters": 6, "kernel_size": (3, 3), "strides": (1, 1),
                              "padding": "same", "depth_multiplier": 2}),
        ("depthwise_conv2d", {"filters": 6, "kernel_size": (3, 3), "strides": (2, 2),
                              "padding": "valid", "depth_multiplier": 1}),
    ]),
    ("tconv_valid", (1, 5, 5, 2), [
        ("conv2d_transpose", {"filters": 3, "kernel_size": (3, 3), "strides": (2, 2),
                              "padding": "valid"}),
        ("relu", {}),
    ]),
    ("tconv_same", (1, 6, 6, 2), [
        ("conv2d_transpose", {"filters": 3, "kernel_size": (3, 3), "strides": (2, 2),
                              "padding": "same"}),
    ]),
    ("pools_valid", (1, 7, 7, 4), [
        ("max_pool2d", {"pool_size": 2, "padding": "valid"}),
        ("relu", {}),
    ]),
    ("pools_same", (1, 7, 7, 4), [
        ("max_pool2d", {"pool_size": 2, "padding": "same"}),
        ("avg_pool2d", {"pool_size": 2, "padding": "same"}),
    ]),
    ("avg_valid_up2", (1, 9, 9, 2), [
        ("avg_pool2d", {"pool_size": 2, "padding": "valid"}),
        ("upsampling2d", {"size": 2}),
    ]),
    ("up3_pad", (1, 5, 5, 2), [
        ("upsampling2d", {"size": 3}),
        ("pad", {"paddings": ((1, 1), (1, 2))}),
        ("mirror_pad", {"paddings": ((1, 1), (2, 2))}),
    ]),
    ("space2batch", (1, 8, 8, 2), [
        ("space_to_batch", {"block_size": 2, "paddings": ((0, 0), (0, 0))}),
        ("relu", {}),
    ]),
    ("space2batch_padded", (1, 7, 7, 2), [
        ("space_to_batch", {"block_size": 3, "paddings": ((1, 1), (1, 1))}),
    ]),
    ("cnn_head", (1, 10, 10, 1), [
        ("conv2d", {"filters": 4, "kernel_size": (3, 3), "strides": (1, 1), "padding": "same"}),
        ("relu", {}),
        ("max_pool2d", {"pool_size": 2, "padding": "valid"}),
        ("reshape", {"target_shape": (1, 100)}),
        ("dense", {"units": 5}),
        ("softmax", {}),
    ]),
    ("sigmoid_tail", (1, 8, 8, 2), [
        ("conv2d", {"filters": 2, "kernel_size": (1, 1), "strides": (1, 1), "padding": "valid"}),
        ("sigmoid", {}),
    ]),
]
