"""SIM v1: the stripped inference-only model container.

A model is a structured-text manifest plus a sidecar binary blob holding
little-endian row-major payloads (float32 or uint8) at manifest-declared
offsets. Operator records carry no attribute payload for the shape-bearing
op families; attributes are recovered later from tensor shapes. Quantized
(q8) tensors carry an affine per-tensor scale and zero point; f32 tensors
carry neither.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SimTensor", "SimOp", "StrippedGraph", "SimFormatError",
    "OPCODES", "OP_NAMES", "parse_sim", "dumps_sim", "load_sim", "save_sim",
]


class SimFormatError(ValueError):
    pass


# opcode -> operator type
OPCODES = {
    1: "conv2d",
    2: "depthwise_conv2d",
    3: "conv2d_transpose",
    4: "max_pool2d",
    5: "avg_pool2d",
    6: "upsampling2d",
    7: "pad",
    8: "mirror_pad",
    9: "space_to_batch",
    10: "dense",
    11: "add",
    12: "mul",
    13: "concat",
    14: "reshape",
    15: "relu",
    16: "sigmoid",
    17: "softmax",
}
OP_NAMES = {v: k for k, v in OPCODES.items()}

_DTYPE_SIZE = {"f32": 4, "q8": 1}


@dataclass(frozen=True)
class SimTensor:
    id: int
    shape: tuple[int, ...]
    dtype: str  # "f32" | "q8"
    scale: float | None = None
    zero_point: int | None = None
    data: np.ndarray | None = None  # float32 or uint8, already shaped
    layout: str | None = None       # axis order of a parameter payload

    @property
    def is_param(self) -> bool:
        return self.data is not None


@dataclass(frozen=True)
class SimOp:
    opcode: int
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]


@dataclass(frozen=True)
class StrippedGraph:
    tensors: tuple[SimTensor, ...]
    ops: tuple[SimOp, ...]
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]

    def tensor(self, tid: int) -> SimTensor:
        for t in self.tensors:
            if t.id == tid:
                return t
        raise KeyError(tid)


def _parse_kv(parts: list[str], line_no: int) -> dict[str, str]:
    kv = {}
    for p in parts:
        if "=" not in p:
            raise SimFormatError(f"bad manifest token {p!r} (line {line_no})")
        k, v = p.split("=", 1)
        kv[k] = v
    return kv


def parse_sim(manifest: str | bytes, blob: bytes = b"") -> StrippedGraph:
    """Parse and validate a SIM manifest with its payload blob."""
    if isinstance(manifest, bytes):
        manifest = manifest.decode("utf-8")
    lines = manifest.splitlines()
    if not lines or lines[0].strip() != "SIM v1":
        raise SimFormatError("malformed header: expected 'SIM v1'")

    tensors: list[SimTensor] = []
    ops: list[SimOp] = []
    g_inputs: list[int] = []
    g_outputs: list[int] = []

    for line_no, raw in enumerate(lines[1:], start=2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0]
        if kind == "tensor":
            tid = int(parts[1])
            kv = _parse_kv(parts[2:], line_no)
            if "shape" not in kv or "dtype" not in kv:
                raise SimFormatError(f"tensor {tid} needs shape= and dtype= (line {line_no})")
            shape = tuple(int(x) for x in kv["shape"].split(","))
            dtype = kv["dtype"]
            if dtype not in _DTYPE_SIZE:
                raise SimFormatError(f"unknown dtype {dtype!r} (line {line_no})")
            scale = float(kv["scale"]) if "scale" in kv else None
            zp = int(kv["zp"]) if "zp" in kv else None
            if dtype == "q8" and (scale is None or zp is None):
                raise SimFormatError(f"q8 tensor {tid} missing quant params (line {line_no})")
            if dtype == "f32" and (scale is not None or zp is not None):
                raise SimFormatError(f"f32 tensor {tid} must not carry quant params (line {line_no})")
            data = None
            if "data" in kv:
                loc = kv["data"]
                if not loc.startswith("@") or ":" not in loc:
                    raise SimFormatError(f"bad data locator {loc!r} (line {line_no})")
                off_s, len_s = loc[1:].split(":", 1)
                off, length = int(off_s), int(len_s)
                want = int(np.prod(shape)) * _DTYPE_SIZE[dtype]
                if length != want:
                    raise SimFormatError(
                        f"tensor {tid} payload length {length} != shape size {want} (line {line_no})")
                if off < 0 or off + length > len(blob):
                    raise SimFormatError(f"tensor {tid} payload outside blob (line {line_no})")
                np_dtype = np.float32 if dtype == "f32" else np.uint8
                data = np.frombuffer(blob[off:off + length], dtype="<f4" if dtype == "f32" else "u1")
                data = data.astype(np_dtype, copy=True).reshape(shape)
            tensors.append(SimTensor(tid, shape, dtype, scale, zp, data, kv.get("layout")))
        elif kind == "op":
            opcode = int(parts[1])
            kv = _parse_kv(parts[2:], line_no)
            ins = tuple(int(x) for x in kv.get("inputs", "").split(",") if x != "")
            outs = tuple(int(x) for x in kv.get("outputs", "").split(",") if x != "")
            if not outs:
                raise SimFormatError(f"op at line {line_no} has no outputs")
            ops.append(SimOp(opcode, ins, outs))
        elif kind == "input":
            g_inputs.append(int(parts[1]))
        elif kind == "output":
            g_outputs.append(int(parts[1]))
        else:
            raise SimFormatError(f"unknown manifest record {kind!r} (line {line_no})")

    ids = {t.id for t in tensors}
    if len(ids) != len(tensors):
        raise SimFormatError("duplicate tensor id")
    for op in ops:
        for tid in op.inputs + op.outputs:
            if tid not in ids:
                raise SimFormatError(f"dangling tensor id {tid}")
    for tid in tuple(g_inputs) + tuple(g_outputs):
        if tid not in ids:
            raise SimFormatError(f"dangling tensor id {tid} in graph io")
    if not g_inputs or not g_outputs:
        raise SimFormatError("graph must declare inputs and outputs")
    return StrippedGraph(tuple(tensors), tuple(ops), tuple(g_inputs), tuple(g_outputs))


def dumps_sim(sg: StrippedGraph) -> tuple[str, bytes]:
    """Serialize to (manifest text, blob bytes); inverse of parse_sim."""
    lines = ["SIM v1"]
    blob = bytearray()
    for t in sg.tensors:
        rec = [f"tensor {t.id}", "shape=" + ",".join(map(str, t.shape)), f"dtype={t.dtype}"]
        if t.dtype == "q8":
            rec.append(f"scale={t.scale!r}")
            rec.append(f"zp={t.zero_point}")
        if t.layout is not None:
            rec.append(f"layout={t.layout}")
        if t.data is not None:
            payload = np.ascontiguousarray(
                t.data, dtype=np.float32 if t.dtype == "f32" else np.uint8)
            raw = payload.astype("<f4" if t.dtype == "f32" else "u1").tobytes()
            rec.append(f"data=@{len(blob)}:{len(raw)}")
            blob.extend(raw)
        lines.append(" ".join(rec))
    for op in sg.ops:
        lines.append(
            f"op {op.opcode} inputs={','.join(map(str, op.inputs))} "
            f"outputs={','.join(map(str, op.outputs))}")
    for tid in sg.inputs:
        lines.append(f"input {tid}")
    for tid in sg.outputs:
        lines.append(f"output {tid}")
    return "\n".join(lines) + "\n", bytes(blob)


def load_sim(path) -> StrippedGraph:
    """Read `<path>` (manifest) and `<path>.bin` (blob)."""
    from pathlib import Path

    p = Path(path)
    manifest = p.read_text(encoding="utf-8")
    blob_path = p.with_suffix(p.suffix + ".bin")
    blob = blob_path.read_bytes() if blob_path.exists() else b""
    return parse_sim(manifest, blob)


def save_sim(sg: StrippedGraph, path) -> None:
    from pathlib import Path

    p = Path(path)
    manifest, blob = dumps_sim(sg)
    p.write_text(manifest, encoding="utf-8")
    p.with_suffix(p.suffix + ".bin").write_bytes(blob)
