"""Slicing criterion discovery at framework-invocation call sites.

Framework interfaces are external primitives with recognizable static
characteristics: a name pattern plus coarse parameter/return shapes. Each
matching call site yields one backward criterion over the values the call
uses and one forward criterion over the values it defines.
"""
from __future__ import annotations

import fnmatch
from dataclasses import dataclass

from .basis import QLabel
from .mir.ir import (
    Const,
    K_ARRAY_READ,
    K_ARRAY_WRITE,
    K_BINOP,
    K_CALL,
    K_CONST,
    K_NEWARRAY,
    K_UNOP,
    MirFunction,
    MirProgram,
    Var,
    def_use,
)

__all__ = [
    "SlicingCriterion", "FrameworkSignature", "NoCriterionFound",
    "parse_signatures", "find_criteria", "SignatureError",
]

SHAPES = ("int", "float", "intarr", "floatarr", "str", "any")


class NoCriterionFound(RuntimeError):
    """No statement matches any framework signature."""


class SignatureError(ValueError):
    pass


@dataclass(frozen=True)
class SlicingCriterion:
    stmt: QLabel
    values: frozenset
    direction: str  # "backward" | "forward"


@dataclass(frozen=True)
class FrameworkSignature:
    """Name glob plus coarse shape patterns; None means wildcard."""

    name: str = "*"
    params: tuple[str, ...] | None = None
    ret: str | None = None

    def __post_init__(self):
        if self.name == "*" and self.params is None and self.ret is None:
            raise SignatureError("signature must constrain at least one of name/params/ret")
        for s in (self.params or ()):
            if s not in SHAPES:
                raise SignatureError(f"unknown shape {s!r}")
        if self.ret is not None and self.ret not in SHAPES:
            raise SignatureError(f"unknown shape {self.ret!r}")


def parse_signatures(text: str) -> list[FrameworkSignature]:
    """One signature per line: name=<glob>;params=<shape,...>;ret=<shape>."""
    sigs = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, params, ret = "*", None, None
        for part in line.split(";"):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise SignatureError(f"bad signature clause {part!r} (line {line_no})")
            key, val = part.split("=", 1)
            key, val = key.strip(), val.strip()
            if key == "name":
                name = val
            elif key == "params":
                params = tuple(v.strip() for v in val.split(",") if v.strip())
            elif key == "ret":
                ret = val
            else:
                raise SignatureError(f"unknown signature key {key!r} (line {line_no})")
        try:
            sigs.append(FrameworkSignature(name, params, ret))
        except SignatureError as e:
            raise SignatureError(f"{e} (line {line_no})") from None
    if not sigs:
        raise SignatureError("signature config declares no signatures")
    return sigs


def infer_coarse_types(f: MirFunction) -> dict[str, str]:
    """Fixpoint inference of {'int','float','arr','any'} per local variable."""
    types: dict[str, str] = {v: "any" for v in f.locals}

    def join(a: str, b: str) -> str:
        if a == b:
            return a
        if "any" in (a, b):
            return a if b == "any" else b
        if {a, b} == {"int", "float"}:
            return "float"
        return "any"

    changed = True
    while changed:
        changed = False
        for s in f.body:
            new: tuple[str, str] | None = None
            if s.kind == K_CONST:
                new = (s.dest, "float" if isinstance(s.src.value, float) else "int")
            elif s.kind == K_NEWARRAY:
                new = (s.dest, "arr")
            elif s.kind == K_UNOP:
                if s.op in ("int2float",):
                    new = (s.dest, "float")
                elif s.op in ("float2int", "not"):
                    new = (s.dest, "int")
                elif isinstance(s.src, Var):
                    new = (s.dest, types[s.src.name])
            elif s.kind == K_BINOP:
                if s.op in ("<", "<=", "==", "!=", ">>", "<<", "%"):
                    new = (s.dest, "int")
                else:
                    parts = [
                        types[o.name] if isinstance(o, Var)
                        else ("float" if isinstance(o.value, float) else "int")
                        for o in (s.lhs, s.rhs)
                    ]
                    t = parts[0]
                    for q in parts[1:]:
                        t = join(t, q)
                    new = (s.dest, t if t in ("int", "float") else "any")
            elif s.kind in (K_ARRAY_READ, K_ARRAY_WRITE):
                # indexing marks the base as an array even without a newarray def
                if types[s.array] != "arr":
                    types[s.array] = "arr"
                    changed = True
            if new is not None:
                merged = join(types[new[0]], new[1])
                if merged != types[new[0]]:
                    types[new[0]] = merged
                    changed = True
    return types


def _shape_matches(pattern: str, coarse: str) -> bool:
    if pattern == "any" or coarse == "any":
        return True  # unknown types never veto a match
    if pattern == "str":
        return False  # MIR has no string values
    if pattern in ("intarr", "floatarr"):
        return coarse == "arr"
    return coarse == pattern


def _operand_type(o, types: dict[str, str]) -> str:
    if isinstance(o, Const):
        return "float" if isinstance(o.value, float) else "int"
    return types.get(o.name, "any")


def find_criteria(p: MirProgram, sigs: list[FrameworkSignature]) -> list[SlicingCriterion]:
    """Backward+forward criterion pair per matching extern call site.

    Deterministic, in document order. Raises NoCriterionFound when nothing
    matches (the program is not an inference app analogue).
    """
    if not sigs:
        raise SignatureError("no signatures given")
    ext_names = p.extern_names
    out: list[SlicingCriterion] = []
    for f in p.functions:
        types = infer_coarse_types(f)
        for s in f.body:
            if s.kind != K_CALL or s.callee not in ext_names:
                continue
            if not any(_matches(sig, s, types) for sig in sigs):
                continue
            q = QLabel(f.id, s.label)
            d, u = def_use(s)
            out.append(SlicingCriterion(q, frozenset(u), "backward"))
            out.append(SlicingCriterion(q, frozenset(d), "forward"))
    if not out:
        raise NoCriterionFound("no statement matches any framework signature")
    return out


def _matches(sig: FrameworkSignature, s, types) -> bool:
    if not fnmatch.fnmatchcase(s.callee, sig.name):
        return False
    if sig.params is not None:
        if len(sig.params) != len(s.args):
            return False
        if not all(_shape_matches(ps, _operand_type(a, types))
                   for ps, a in zip(sig.params, s.args)):
            return False
    if sig.ret is not None and sig.ret != "any":
        if s.dest is None:
            return False
        if not _shape_matches(sig.ret, types.get(s.dest, "any")):
            return False
    return True
