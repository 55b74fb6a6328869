"""Computational-graph reconstruction from a stripped model.

The rebuilt graph has three node kinds: input, parameter, and operator
nodes. Operator attributes stripped at deployment are recovered from
tensor shapes alone (activation layout [batch, height, width, channels]):
kernel sizes come from weight shapes, strides from input/output spatial
ratios, pool sizes and upsampling factors from spatial ratios, paddings
from shape differences. The padding mode is chosen by a consistency
procedure: compute the valid-padding output shape; if it matches the
recorded one the mode is valid, else if the same-padding output matches it
is same, otherwise the shapes are inconsistent.

Quantized parameters are undone elementwise with v = s * (q - z); weight
tensors are permuted from their declared source layout to the canonical
orders (conv kernels [kh, kw, in, out], depthwise [kh, kw, ch, mult],
dense [in, out]).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .simfmt import OPCODES, SimTensor, StrippedGraph

__all__ = [
    "InputNode", "ParameterNode", "OperatorNode", "ComputationalGraph",
    "UnknownOpcode", "CycleDetected", "InconsistentShapes",
    "NonIntegerMultiplier", "UnknownLayout",
    "extract_structure", "complete_attributes", "dequantize",
    "normalize_weight_axes", "complete_model", "derive_output_shape",
    "rebuild_model",
]

SHAPED_FAMILIES = (
    "conv2d", "depthwise_conv2d", "conv2d_transpose", "max_pool2d",
    "avg_pool2d", "upsampling2d", "pad", "mirror_pad", "space_to_batch",
)

_POOL_EPS = 1e-9


class UnknownOpcode(ValueError):
    pass


class CycleDetected(ValueError):
    pass


class InconsistentShapes(ValueError):
    pass


class NonIntegerMultiplier(ValueError):
    pass


class UnknownLayout(ValueError):
    pass


@dataclass(frozen=True)
class InputNode:
    name: str
    shape: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class ParameterNode:
    name: str
    shape: tuple[int, ...]
    values: np.ndarray
    quant: tuple[float, int] | None = None  # (scale, zero_point) while still q8
    layout: str | None = None               # source axis order until normalized

    def __eq__(self, other):
        return (
            isinstance(other, ParameterNode)
            and self.name == other.name
            and self.shape == other.shape
            and self.quant == other.quant
            and self.layout == other.layout
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class OperatorNode:
    name: str
    op_type: str
    inputs: tuple[str, ...]  # producer node names, in operator input order
    output_shape: tuple[int, ...]
    attrs: dict | None = None

    def __eq__(self, other):
        return (
            isinstance(other, OperatorNode)
            and (self.name, self.op_type, self.inputs, self.output_shape, self.attrs)
            == (other.name, other.op_type, other.inputs, other.output_shape, other.attrs)
        )


Node = InputNode | ParameterNode | OperatorNode


@dataclass(frozen=True)
class ComputationalGraph:
    nodes: tuple[Node, ...]
    outputs: tuple[str, ...]

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    @property
    def by_name(self) -> dict[str, Node]:
        return {n.name: n for n in self.nodes}

    def shape_of(self, name: str) -> tuple[int, ...]:
        n = self.node(name)
        return n.output_shape if isinstance(n, OperatorNode) else n.shape

    def operators(self) -> list[OperatorNode]:
        return [n for n in self.nodes if isinstance(n, OperatorNode)]

    def parameters(self) -> list[ParameterNode]:
        return [n for n in self.nodes if isinstance(n, ParameterNode)]

    def inputs(self) -> list[InputNode]:
        return [n for n in self.nodes if isinstance(n, InputNode)]

    def topo_order(self) -> list[str]:
        """Operator names in dependency order; raises CycleDetected."""
        by = self.by_name
        indeg: dict[str, int] = {}
        consumers: dict[str, list[str]] = {}
        for n in self.nodes:
            if isinstance(n, OperatorNode):
                ins = [i for i in n.inputs if isinstance(by[i], OperatorNode)]
                indeg[n.name] = len(ins)
                for i in ins:
                    consumers.setdefault(i, []).append(n.name)
        ready = sorted(name for name, d in indeg.items() if d == 0)
        order = []
        while ready:
            name = ready.pop(0)
            order.append(name)
            for c in consumers.get(name, ()):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort()
        if len(order) != len(indeg):
            raise CycleDetected("operator wiring contains a cycle")
        return order


def extract_structure(sg: StrippedGraph) -> ComputationalGraph:
    """Rebuild graph structure from a stripped model; attributes stay unset."""
    producer: dict[int, str] = {}
    nodes: list[Node] = []
    for tid in sg.inputs:
        t = sg.tensor(tid)
        name = f"in{tid}"
        nodes.append(InputNode(name, t.shape))
        producer[tid] = name
    for t in sg.tensors:
        if t.is_param:
            name = f"p{t.id}"
            quant = (t.scale, t.zero_point) if t.dtype == "q8" else None
            nodes.append(ParameterNode(name, t.shape, t.data, quant, t.layout))
            producer[t.id] = name

    for op in sg.ops:
        if op.opcode not in OPCODES:
            raise UnknownOpcode(f"opcode {op.opcode}")
        if len(op.outputs) != 1:
            raise InconsistentShapes(f"opcode {op.opcode} must have exactly one output")
        producer[op.outputs[0]] = f"n{op.outputs[0]}"

    for op in sg.ops:
        out_tid = op.outputs[0]
        ins = []
        for tid in op.inputs:
            if tid not in producer:
                raise InconsistentShapes(f"tensor {tid} is consumed but never produced")
            ins.append(producer[tid])
        nodes.append(OperatorNode(f"n{out_tid}", OPCODES[op.opcode], tuple(ins),
                                  sg.tensor(out_tid).shape))

    g = ComputationalGraph(tuple(nodes), tuple(producer[tid] for tid in sg.outputs))
    g.topo_order()  # raises CycleDetected on cyclic wiring
    return g


# ---- attribute completion ----

def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def _kernel_hw(weight_shape: tuple[int, ...], layout: str | None, op_type: str) -> tuple[int, int]:
    layout = layout or ("1HWO" if op_type == "depthwise_conv2d" else "OHWI")
    pos = {
        "OHWI": (1, 2), "HWIO": (0, 1), "OIHW": (2, 3),
        "1HWO": (1, 2), "HWCM": (0, 1),
    }.get(layout)
    if pos is None or len(weight_shape) != 4:
        raise UnknownLayout(f"layout {layout!r} for {op_type} weight {weight_shape}")
    return weight_shape[pos[0]], weight_shape[pos[1]]


def _strides_from(in_sp, out_sp, kernel, transpose: bool) -> tuple[int, int]:
    strides = []
    for i in (0, 1):
        if transpose:
            num, den = out_sp[i] - kernel[i], in_sp[i] - 1
        else:
            num, den = in_sp[i] - kernel[i], out_sp[i] - 1
        if den <= 0:
            strides.append(max(1, num + 1))
        else:
            strides.append(max(1, _round_half_away(num / den)))
    return tuple(strides)


def _conv_out(in_sp: int, k: int, s: int, padding: str) -> int:
    if padding == "valid":
        return (in_sp - k) // s + 1
    return -(-in_sp // s)  # ceil


def _tconv_out(in_sp: int, k: int, s: int, padding: str) -> int:
    if padding == "valid":
        return (in_sp - 1) * s + k
    return in_sp * s


def _choose_padding(in_sp, out_sp, kernel, strides, out_rule) -> str:
    for mode in ("valid", "same"):
        if all(out_rule(in_sp[i], kernel[i], strides[i], mode) == out_sp[i] for i in (0, 1)):
            return mode
    raise InconsistentShapes(
        f"neither padding mode maps {in_sp} to {out_sp} with kernel {kernel}, strides {strides}")


def complete_attributes(
    op_type: str,
    input_shape: tuple[int, ...],
    output_shape: tuple[int, ...],
    weight_shape: tuple[int, ...] | None = None,
    weight_layout: str | None = None,
    extra_input_shapes: tuple[tuple[int, ...], ...] = (),
) -> dict:
    """Recover stripped attributes from shapes (activation layout NHWC)."""
    in_sp = input_shape[1:3] if len(input_shape) == 4 else None
    out_sp = output_shape[1:3] if len(output_shape) == 4 else None

    if op_type in ("conv2d", "depthwise_conv2d"):
        kernel = _kernel_hw(weight_shape, weight_layout, op_type)
        strides = _strides_from(in_sp, out_sp, kernel, transpose=False)
        padding = _choose_padding(in_sp, out_sp, kernel, strides, _conv_out)
        attrs = {
            "filters": output_shape[-1],
            "kernel_size": kernel,
            "strides": strides,
            "padding": padding,
        }
        if op_type == "depthwise_conv2d":
            if output_shape[-1] % input_shape[-1] != 0:
                raise NonIntegerMultiplier(
                    f"channels {input_shape[-1]} do not divide {output_shape[-1]}")
            attrs["depth_multiplier"] = output_shape[-1] // input_shape[-1]
        return attrs

    if op_type == "conv2d_transpose":
        kernel = _kernel_hw(weight_shape, weight_layout, op_type)
        strides = _strides_from(in_sp, out_sp, kernel, transpose=True)
        padding = _choose_padding(in_sp, out_sp, kernel, strides, _tconv_out)
        return {
            "filters": output_shape[-1],
            "kernel_size": kernel,
            "strides": strides,
            "padding": padding,
        }

    if op_type in ("max_pool2d", "avg_pool2d"):
        pool = max(1, _round_half_away(in_sp[0] / out_sp[0]))
        # published rule, epsilon pinned: same when floor(in/(p+eps)) < out
        same = all(math.floor(in_sp[i] / (pool + _POOL_EPS)) < out_sp[i] for i in (0, 1))
        padding = "same" if same else "valid"
        derived = tuple(_conv_out(in_sp[i], pool, pool, padding) for i in (0, 1))
        if derived != out_sp:
            raise InconsistentShapes(
                f"pool_size {pool} ({padding}) maps {in_sp} to {derived}, recorded {out_sp}")
        return {"pool_size": pool, "padding": padding}

    if op_type == "upsampling2d":
        size = out_sp[0] // in_sp[0]
        if size < 1 or any(in_sp[i] * size != out_sp[i] for i in (0, 1)):
            raise InconsistentShapes(f"no integer upsampling factor maps {in_sp} to {out_sp}")
        return {"size": size}

    if op_type in ("pad", "mirror_pad"):
        if input_shape[0] != output_shape[0] or input_shape[-1] != output_shape[-1]:
            raise InconsistentShapes("pad must keep batch and channel extents")
        pads = []
        for i in (1, 2):
            diff = output_shape[i] - input_shape[i]
            if diff < 0:
                raise InconsistentShapes(f"output axis {i} smaller than input")
            lo = diff // 2
            pads.append((lo, diff - lo))
        return {"paddings": (tuple(pads[0]), tuple(pads[1]))}

    if op_type == "space_to_batch":
        if output_shape[0] % input_shape[0] != 0:
            raise InconsistentShapes("batch extents incompatible with square blocks")
        ratio = output_shape[0] // input_shape[0]
        block = math.isqrt(ratio)
        if block * block != ratio or block < 1:
            raise InconsistentShapes(f"batch ratio {ratio} is not a square block size")
        pads = []
        for i in (0, 1):
            total = output_shape[i + 1] * block - input_shape[i + 1]
            if total < 0:
                raise InconsistentShapes("negative padding for space_to_batch")
            lo = total // 2
            pads.append((lo, total - lo))
        return {"block_size": block, "paddings": (tuple(pads[0]), tuple(pads[1]))}

    if op_type == "dense":
        return {"units": output_shape[-1]}

    if op_type == "concat":
        cands = []
        for axis in range(len(output_shape)):
            shapes = (input_shape,) + tuple(extra_input_shapes)
            if any(len(s) != len(output_shape) for s in shapes):
                continue
            if sum(s[axis] for s in shapes) != output_shape[axis]:
                continue
            if all(
                s[d] == output_shape[d]
                for s in shapes for d in range(len(output_shape)) if d != axis
            ):
                cands.append(axis)
        if not cands:
            raise InconsistentShapes("no axis makes the concatenation consistent")
        return {"axis": cands[0]}

    if op_type == "reshape":
        return {"target_shape": tuple(output_shape)}

    if op_type in ("add", "mul", "relu", "sigmoid", "softmax"):
        return {}

    raise UnknownOpcode(op_type)


def derive_output_shape(op_type: str, attrs: dict,
                        input_shapes: tuple[tuple[int, ...], ...]) -> tuple[int, ...]:
    """Shape implied by completed attributes; used as a consistency check."""
    x = input_shapes[0]
    if op_type in ("conv2d", "depthwise_conv2d", "conv2d_transpose"):
        k, s, pad = attrs["kernel_size"], attrs["strides"], attrs["padding"]
        rule = _tconv_out if op_type == "conv2d_transpose" else _conv_out
        sp = tuple(rule(x[1 + i], k[i], s[i], pad) for i in (0, 1))
        ch = attrs["filters"]
        return (x[0], sp[0], sp[1], ch)
    if op_type in ("max_pool2d", "avg_pool2d"):
        p, pad = attrs["pool_size"], attrs["padding"]
        sp = tuple(_conv_out(x[1 + i], p, p, pad) for i in (0, 1))
        return (x[0], sp[0], sp[1], x[3])
    if op_type == "upsampling2d":
        z = attrs["size"]
        return (x[0], x[1] * z, x[2] * z, x[3])
    if op_type in ("pad", "mirror_pad"):
        (t, b), (l, r) = attrs["paddings"]
        return (x[0], x[1] + t + b, x[2] + l + r, x[3])
    if op_type == "space_to_batch":
        blk = attrs["block_size"]
        (t, b), (l, r) = attrs["paddings"]
        return (x[0] * blk * blk, (x[1] + t + b) // blk, (x[2] + l + r) // blk, x[3])
    if op_type == "dense":
        return (x[0], attrs["units"])
    if op_type == "concat":
        axis = attrs["axis"]
        out = list(x)
        out[axis] = sum(s[axis] for s in input_shapes)
        return tuple(out)
    if op_type == "reshape":
        return tuple(attrs["target_shape"])
    if op_type in ("add", "mul", "relu", "sigmoid", "softmax"):
        return tuple(x)
    raise UnknownOpcode(op_type)


# ---- parameter completion ----

def dequantize(values: np.ndarray, scale: float, zero_point: int) -> np.ndarray:
    """v = scale * (q - zero_point), elementwise in float64."""
    q = np.asarray(values, dtype=np.float64)
    return scale * (q - float(zero_point))


_CONV_PERMS = {"HWIO": None, "OHWI": (1, 2, 3, 0), "OIHW": (2, 3, 1, 0)}
_DENSE_PERMS = {"IO": None, "OI": (1, 0)}


def normalize_weight_axes(values: np.ndarray, layout: str | None, op_family: str,
                          in_channels: int | None = None) -> np.ndarray:
    """Permute a parameter tensor from its source layout to the canonical one."""
    if layout is None or layout in ("RAW",):
        return values
    if op_family in ("conv2d", "conv2d_transpose"):
        if layout not in _CONV_PERMS:
            raise UnknownLayout(f"layout {layout!r} for {op_family}")
        perm = _CONV_PERMS[layout]
        return values if perm is None else np.transpose(values, perm)
    if op_family == "depthwise_conv2d":
        if layout == "HWCM":
            return values
        if layout == "1HWO":
            if values.shape[0] != 1:
                raise UnknownLayout("1HWO weight must have a leading extent of 1")
            if in_channels is None or values.shape[3] % in_channels != 0:
                raise NonIntegerMultiplier(
                    f"cannot factor {values.shape[3]} channels by {in_channels}")
            mult = values.shape[3] // in_channels
            return values.reshape(values.shape[1], values.shape[2], in_channels, mult)
        raise UnknownLayout(f"layout {layout!r} for depthwise weights")
    if op_family == "dense":
        if layout not in _DENSE_PERMS:
            raise UnknownLayout(f"layout {layout!r} for dense")
        perm = _DENSE_PERMS[layout]
        return values if perm is None else np.transpose(values, perm)
    return values


def complete_model(g: ComputationalGraph) -> ComputationalGraph:
    """Fill attributes, dequantize q8 parameters, normalize weight layouts."""
    by = g.by_name
    new: dict[str, Node] = {}

    def shape_of(name: str) -> tuple[int, ...]:
        n = by[name]
        return n.output_shape if isinstance(n, OperatorNode) else n.shape

    for n in g.nodes:
        if isinstance(n, OperatorNode):
            act_inputs = [i for i in n.inputs if not isinstance(by[i], ParameterNode)]
            params = [i for i in n.inputs if isinstance(by[i], ParameterNode)]
            if not act_inputs:
                raise InconsistentShapes(f"{n.name} has no activation input")
            w_shape = by[params[0]].shape if params else None
            w_layout = by[params[0]].layout if params else None
            attrs = complete_attributes(
                n.op_type,
                shape_of(act_inputs[0]),
                n.output_shape,
                weight_shape=w_shape,
                weight_layout=w_layout,
                extra_input_shapes=tuple(shape_of(i) for i in act_inputs[1:]),
            )
            derived = derive_output_shape(
                n.op_type, attrs, tuple(shape_of(i) for i in act_inputs))
            if derived != n.output_shape:
                raise InconsistentShapes(
                    f"{n.name}: attributes imply {derived}, recorded {n.output_shape}")
            new[n.name] = replace(n, attrs=attrs)
        else:
            new[n.name] = n

    # normalize parameters with knowledge of their consuming operator
    for n in g.nodes:
        if not isinstance(n, OperatorNode):
            continue
        params = [i for i in n.inputs if isinstance(by[i], ParameterNode)]
        for rank, pname in enumerate(params):
            p: ParameterNode = by[pname]
            values = p.values
            if p.quant is not None:
                values = dequantize(values, p.quant[0], p.quant[1])
            values = np.asarray(values, dtype=np.float32)
            if rank == 0 and n.op_type in ("conv2d", "conv2d_transpose",
                                           "depthwise_conv2d", "dense"):
                act = [i for i in n.inputs if not isinstance(by[i], ParameterNode)]
                channels = g.shape_of(act[0])[-1] if act else None
                values = normalize_weight_axes(values, p.layout, n.op_type, channels)
            new[pname] = ParameterNode(p.name, tuple(values.shape),
                                       np.ascontiguousarray(values), None, None)

    return ComputationalGraph(tuple(new[n.name] for n in g.nodes), g.outputs)


def rebuild_model(sg: StrippedGraph) -> ComputationalGraph:
    """Full pipeline: structure extraction then attribute/parameter completion."""
    return complete_model(extract_structure(sg))
