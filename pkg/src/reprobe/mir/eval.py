"""Direct evaluation of MIR programs (statement-by-statement CFG walk).

Integer operations are 64-bit two's-complement; floats are IEEE binary64.
External primitives are bound at run time: an arity-0 extern may be bound
to a plain value (an input), any extern may be bound to a callable. Every
extern call is recorded in order, which is what the slicing and
structurization oracles compare against.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

from .ir import (
    Const,
    FieldId,
    K_ARRAY_READ,
    K_ARRAY_WRITE,
    K_BINOP,
    K_CALL,
    K_CONST,
    K_FIELD_READ,
    K_FIELD_WRITE,
    K_GOTO,
    K_IF_GOTO,
    K_NEWARRAY,
    K_RETURN,
    K_UNOP,
    MirProgram,
    MirStatement,
    Operand,
    Var,
)

__all__ = [
    "run_program", "EvalError", "DivisionByZero", "OutOfBoundsArrayAccess",
    "UnboundInput", "ExternCall", "RunResult", "wrap64", "apply_binop",
    "apply_unop", "apply_cond",
]

_MASK = (1 << 64) - 1
_SIGN = 1 << 63


class EvalError(RuntimeError):
    pass


class DivisionByZero(EvalError):
    pass


class OutOfBoundsArrayAccess(EvalError):
    pass


class UnboundInput(EvalError):
    pass


def wrap64(v: int) -> int:
    v &= _MASK
    return v - (1 << 64) if v & _SIGN else v


def _as_int(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise EvalError(f"integer operation on non-integer {v!r}")
    return v


def apply_binop(op: str, a, b):
    if op == "+":
        r = a + b
    elif op == "-":
        r = a - b
    elif op == "*":
        r = a * b
    elif op == "/":
        if b == 0:
            raise DivisionByZero("division by zero")
        if isinstance(a, int) and isinstance(b, int):
            q = abs(a) // abs(b)
            r = q if (a >= 0) == (b >= 0) else -q
        else:
            r = a / b
    elif op == "%":
        if b == 0:
            raise DivisionByZero("modulo by zero")
        if isinstance(a, int) and isinstance(b, int):
            q = abs(a) // abs(b)
            q = q if (a >= 0) == (b >= 0) else -q
            r = a - q * b
        else:
            r = a - b * int(a / b)
    elif op == "<":
        return 1 if a < b else 0
    elif op == "<=":
        return 1 if a <= b else 0
    elif op == "==":
        return 1 if a == b else 0
    elif op == "!=":
        return 1 if a != b else 0
    elif op == ">>":
        r = _as_int(a) >> (_as_int(b) & 63)
    elif op == "<<":
        r = _as_int(a) << (_as_int(b) & 63)
    else:
        raise EvalError(f"unknown operator {op!r}")
    return wrap64(r) if isinstance(r, int) else r


def apply_unop(op: str, v):
    if op == "neg":
        return wrap64(-v) if isinstance(v, int) else -v
    if op == "not":
        return 0 if v != 0 else 1
    if op == "int2float":
        return float(v)
    if op == "float2int":
        return wrap64(int(v))
    raise EvalError(f"unknown unary operator {op!r}")


def apply_cond(op: str, a, b) -> bool:
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    if op == "==":
        return a == b
    if op == "!=":
        return a != b
    raise EvalError(f"unknown condition {op!r}")


@dataclass
class ExternCall:
    name: str
    args: tuple
    result: object
    site: tuple[str, str]  # (function, label)


@dataclass
class RunResult:
    value: object
    extern_calls: list[ExternCall]
    fields: dict[FieldId, object]
    field_reads_before_write: list[FieldId] = dc_field(default_factory=list)

    def calls_to(self, name: str) -> list[ExternCall]:
        return [c for c in self.extern_calls if c.name == name]


class _Machine:
    def __init__(self, program: MirProgram, externs: dict, max_steps: int):
        self.program = program
        self.externs = externs
        self.max_steps = max_steps
        self.steps = 0
        self.fields: dict[FieldId, object] = {}
        self.written: set[FieldId] = set()
        self.reads_before_write: list[FieldId] = []
        self.calls: list[ExternCall] = []

    def _extern(self, name: str, args: tuple, site):
        if name not in self.externs:
            raise UnboundInput(f"extern {name!r} not bound")
        impl = self.externs[name]
        result = impl(*args) if callable(impl) else impl
        # snapshot array arguments: the caller may mutate them afterwards
        snap = tuple(list(a) if isinstance(a, list) else a for a in args)
        self.calls.append(ExternCall(name, snap, result, site))
        return result

    def run_function(self, fid: str, args: tuple) -> object:
        f = self.program.function(fid)
        if len(args) != len(f.params):
            raise EvalError(f"{fid} expects {len(f.params)} args")
        env: dict[str, object] = dict(zip(f.params, args))
        index = {s.label: i for i, s in enumerate(f.body)}
        i = 0

        def val(o: Operand):
            if isinstance(o, Const):
                return o.value
            if o.name not in env:
                raise EvalError(f"unbound variable {o.name!r} in {fid}")
            return env[o.name]

        while i < len(f.body):
            self.steps += 1
            if self.steps > self.max_steps:
                raise EvalError("step budget exceeded (non-terminating program?)")
            s: MirStatement = f.body[i]
            k = s.kind
            if k == K_CONST:
                env[s.dest] = s.src.value
            elif k == K_BINOP:
                env[s.dest] = apply_binop(s.op, val(s.lhs), val(s.rhs))
            elif k == K_UNOP:
                env[s.dest] = apply_unop(s.op, val(s.src))
            elif k == K_CALL:
                argv = tuple(val(a) for a in s.args)
                if s.callee in self.program.extern_names:
                    r = self._extern(s.callee, argv, (fid, s.label))
                else:
                    r = self.run_function(s.callee, argv)
                if s.dest is not None:
                    env[s.dest] = r
            elif k == K_FIELD_READ:
                if s.fld not in self.written and s.fld not in self.reads_before_write:
                    self.reads_before_write.append(s.fld)
                env[s.dest] = self.fields.get(s.fld, 0)
            elif k == K_FIELD_WRITE:
                self.fields[s.fld] = val(s.src)
                self.written.add(s.fld)
            elif k == K_ARRAY_READ:
                arr = env.get(s.array)
                if not isinstance(arr, list):
                    raise EvalError(f"{s.array!r} is not an array")
                idx = val(s.index)
                if not isinstance(idx, int) or not (0 <= idx < len(arr)):
                    raise OutOfBoundsArrayAccess(f"index {idx} out of bounds for {s.array!r}")
                env[s.dest] = arr[idx]
            elif k == K_ARRAY_WRITE:
                arr = env.get(s.array)
                if not isinstance(arr, list):
                    raise EvalError(f"{s.array!r} is not an array")
                idx = val(s.index)
                if not isinstance(idx, int) or not (0 <= idx < len(arr)):
                    raise OutOfBoundsArrayAccess(f"index {idx} out of bounds for {s.array!r}")
                arr[idx] = val(s.src)
            elif k == K_NEWARRAY:
                n = val(s.size)
                if not isinstance(n, int) or n < 0:
                    raise EvalError(f"bad array size {n!r}")
                env[s.dest] = [0] * n
            elif k == K_IF_GOTO:
                if apply_cond(s.op, val(s.lhs), val(s.rhs)):
                    i = index[s.target]
                    continue
            elif k == K_GOTO:
                i = index[s.target]
                continue
            elif k == K_RETURN:
                return val(s.src)
            i += 1
        return 0


def run_program(
    program: MirProgram,
    externs: dict | None = None,
    entry: str | None = None,
    entry_args: tuple = (),
    max_steps: int = 1_000_000,
) -> RunResult:
    """Evaluate `program` from its entry function and record extern traffic."""
    m = _Machine(program, externs or {}, max_steps)
    value = m.run_function(entry or program.entry, entry_args)
    return RunResult(value, m.calls, m.fields, m.reads_before_write)
