"""MBUILD v1 builder scripts and the named-tensor weights container.

An MBUILD script has the three parts a trainable model needs: operator
initialization (types plus completed attributes), flow construction (one
application per operator, in topological order), and weight loading (names
and shapes resolved against the binary container). Loading a script plus
its container reconstructs the computational graph exactly.

Weights container layout (little-endian): magic ``WTS1``, u32 entry count,
then per entry u16 name length, name bytes, u8 ndim, u32 extents, u64
offset into the payload area; float32 row-major payloads follow the index.
"""
from __future__ import annotations

import struct

import numpy as np

from .rebuild import (
    ComputationalGraph,
    CycleDetected,
    InputNode,
    Node,
    OperatorNode,
    ParameterNode,
    derive_output_shape,
)

__all__ = [
    "generate_model", "load_model", "pack_weights", "unpack_weights",
    "ModelIoError",
]

_MAGIC = b"WTS1"


class ModelIoError(ValueError):
    pass


def _fmt_attr(value) -> str:
    if isinstance(value, tuple):
        flat = []

        def rec(v):
            for x in v:
                if isinstance(x, tuple):
                    rec(x)
                else:
                    flat.append(str(x))

        rec(value)
        return ",".join(flat)
    return str(value)


def _parse_attr(key: str, text: str):
    if key in ("padding",):
        return text
    parts = text.split(",")
    ints = [int(p) for p in parts]
    if key in ("kernel_size", "strides"):
        return tuple(ints)
    if key == "paddings":
        return ((ints[0], ints[1]), (ints[2], ints[3]))
    if key == "target_shape":
        return tuple(ints)
    return ints[0] if len(ints) == 1 else tuple(ints)


def generate_model(g: ComputationalGraph) -> tuple[str, bytes]:
    """Emit the builder script and weights container for a completed graph."""
    for op in g.operators():
        if op.attrs is None:
            raise ModelIoError(f"operator {op.name} has unset attributes")
    order = g.topo_order()  # raises CycleDetected defensively
    by = g.by_name

    lines = ["MBUILD v1"]
    for n in g.inputs():
        lines.append(f"input {n.name} shape={','.join(map(str, n.shape))}")
    lines.append("init:")
    for name in order:
        op: OperatorNode = by[name]
        rec = [f"  {op.name} type={op.op_type}"]
        for k in sorted(op.attrs):
            rec.append(f"{k}={_fmt_attr(op.attrs[k])}")
        lines.append(" ".join(rec))
    lines.append("forward:")
    for name in order:
        op = by[name]
        lines.append(f"  {op.name} = {op.op_type}({', '.join(op.inputs)})")
    lines.append("outputs: " + " ".join(g.outputs))
    lines.append("weights:")
    params = g.parameters()
    for p in params:
        lines.append(f"  {p.name} shape={','.join(map(str, p.shape))}")
    return "\n".join(lines) + "\n", pack_weights(params)


def pack_weights(params: list[ParameterNode]) -> bytes:
    index = bytearray()
    payload = bytearray()
    for p in params:
        if p.quant is not None:
            raise ModelIoError(f"parameter {p.name} still quantized")
        name = p.name.encode("utf-8")
        arr = np.ascontiguousarray(p.values, dtype="<f4")
        index.extend(struct.pack("<H", len(name)))
        index.extend(name)
        index.extend(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            index.extend(struct.pack("<I", d))
        index.extend(struct.pack("<Q", len(payload)))
        payload.extend(arr.tobytes())
    return _MAGIC + struct.pack("<I", len(params)) + bytes(index) + bytes(payload)


def unpack_weights(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != _MAGIC:
        raise ModelIoError("bad weights container magic")
    (count,) = struct.unpack_from("<I", blob, 4)
    pos = 8
    entries = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        (offset,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        entries.append((name, tuple(shape), offset))
    out = {}
    base = pos
    for name, shape, offset in entries:
        n = int(np.prod(shape)) if shape else 1
        start = base + offset
        arr = np.frombuffer(blob[start:start + 4 * n], dtype="<f4").reshape(shape)
        out[name] = arr.astype(np.float32, copy=True)
    return out


def load_model(script: str, weights_blob: bytes) -> ComputationalGraph:
    """Rebuild the computational graph from MBUILD text plus its container."""
    lines = script.splitlines()
    if not lines or lines[0].strip() != "MBUILD v1":
        raise ModelIoError("not an MBUILD v1 script")
    weights = unpack_weights(weights_blob) if weights_blob else {}

    inputs: list[InputNode] = []
    init: dict[str, tuple[str, dict]] = {}
    flow: list[tuple[str, str, tuple[str, ...]]] = []
    outputs: tuple[str, ...] = ()
    weight_shapes: dict[str, tuple[int, ...]] = {}
    section = None
    for raw in lines[1:]:
        line = raw.rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        if stripped.startswith("input "):
            parts = stripped.split()
            name = parts[1]
            shape = tuple(int(x) for x in parts[2].split("=", 1)[1].split(","))
            inputs.append(InputNode(name, shape))
        elif stripped == "init:":
            section = "init"
        elif stripped == "forward:":
            section = "forward"
        elif stripped == "weights:":
            section = "weights"
        elif stripped.startswith("outputs:"):
            outputs = tuple(stripped[len("outputs:"):].split())
            section = None
        elif section == "init":
            parts = stripped.split()
            name = parts[0]
            attrs = {}
            op_type = None
            for kv in parts[1:]:
                k, v = kv.split("=", 1)
                if k == "type":
                    op_type = v
                else:
                    attrs[k] = _parse_attr(k, v)
            if op_type is None:
                raise ModelIoError(f"init line without type: {stripped!r}")
            init[name] = (op_type, attrs)
        elif section == "forward":
            lhs, rhs = stripped.split("=", 1)
            name = lhs.strip()
            call = rhs.strip()
            op_type = call.split("(", 1)[0]
            args = tuple(a.strip() for a in call.split("(", 1)[1].rstrip(")").split(",")
                         if a.strip())
            flow.append((name, op_type, args))
        elif section == "weights":
            parts = stripped.split()
            weight_shapes[parts[0]] = tuple(
                int(x) for x in parts[1].split("=", 1)[1].split(","))
        else:
            raise ModelIoError(f"unexpected MBUILD line {stripped!r}")

    nodes: list[Node] = list(inputs)
    for name, shape in weight_shapes.items():
        if name not in weights:
            raise ModelIoError(f"weights container missing {name!r}")
        arr = weights[name]
        if tuple(arr.shape) != shape:
            raise ModelIoError(f"weight {name!r} shape {arr.shape} != declared {shape}")
        nodes.append(ParameterNode(name, shape, arr))

    shapes: dict[str, tuple[int, ...]] = {n.name: n.shape for n in nodes}
    for name, op_type, args in flow:
        if name not in init:
            raise ModelIoError(f"forward line for uninitialized operator {name!r}")
        decl_type, attrs = init[name]
        if decl_type != op_type:
            raise ModelIoError(f"{name!r} declared {decl_type} but applied as {op_type}")
        act_shapes = tuple(shapes[a] for a in args if a in shapes and a not in weight_shapes)
        out_shape = derive_output_shape(op_type, attrs, act_shapes)
        shapes[name] = out_shape
        nodes.append(OperatorNode(name, op_type, args, out_shape, attrs))

    return ComputationalGraph(tuple(nodes), outputs)
