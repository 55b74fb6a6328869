"""Parser and interpreter for emitted PPROG v1 processing programs.

The interpreter is the toolkit's execution vehicle for re-synthesized
processing code. Arity-0 input primitives are bound to plain values; all
other external primitives are bound to callables. Calls to declared output
primitives are recorded as the program's named outputs. Arithmetic follows
MIR semantics (64-bit two's-complement integers, binary64 floats).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

from .codegen import ProcessingProgram
from .mir.eval import (
    DivisionByZero,
    EvalError,
    OutOfBoundsArrayAccess,
    UnboundInput,
    apply_binop,
    apply_cond,
    apply_unop,
)
from .mir.ir import (
    Const,
    FieldId,
    K_ARRAY_READ,
    K_ARRAY_WRITE,
    K_BINOP,
    K_CALL,
    K_CONST,
    K_FIELD_READ,
    K_FIELD_WRITE,
    K_NEWARRAY,
    K_RETURN,
    K_UNOP,
    Var,
)
from .mir.parser import MirParseError, _Cursor, _parse_statement, _tokenize
from .structure import Cond, FuncAst, If, Prim, While

__all__ = [
    "parse_pprog", "interpret", "InterpResult", "PprogError",
    "DivisionByZero", "OutOfBoundsArrayAccess", "UnboundInput",
]


class PprogError(ValueError):
    pass


@dataclass
class InterpResult:
    outputs: dict[str, list[tuple]]
    fields: dict[FieldId, object]
    extern_calls: list[tuple[str, tuple, object]]
    field_reads_before_write: list[FieldId] = dc_field(default_factory=list)

    def single(self, name: str):
        """Sole recorded value of an output primitive called exactly once with one arg."""
        calls = self.outputs.get(name, [])
        if len(calls) != 1 or len(calls[0]) != 1:
            raise KeyError(f"output {name!r} was not a single one-argument call")
        return calls[0][0]


# ---- parsing ----

def _parse_cond(text: str, line_no: int) -> Cond:
    cur = _Cursor(_tokenize(text, line_no), line_no)
    kind, tok, _ = cur.next()
    lhs = Const(float(tok) if "." in tok else int(tok)) if kind == "num" else Var(tok)
    _, op, col = cur.next()
    if op not in ("<", "<=", ">", ">=", "==", "!="):
        raise PprogError(f"bad condition operator {op!r} (line {line_no})")
    kind2, tok2, _ = cur.next()
    rhs = Const(float(tok2) if "." in tok2 else int(tok2)) if kind2 == "num" else Var(tok2)
    cur.require_done()
    return Cond(lhs, op, rhs)


def parse_pprog(text: str) -> ProcessingProgram:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "PPROG v1":
        raise PprogError("not a PPROG v1 file")

    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    externs: list[tuple[str, int]] = []
    fields: list[FieldId] = []
    by_name: dict[str, list[FieldId]] = {}
    by_qual: dict[str, FieldId] = {}
    functions: list[FuncAst] = []
    main_order: list[str] = []
    label_counter = [0]

    i = 1
    n = len(lines)

    def indent_of(s: str) -> int:
        return (len(s) - len(s.lstrip())) // 2

    def parse_block(start: int, level: int) -> tuple[tuple, int]:
        nodes: list = []
        j = start
        while j < n:
            raw = lines[j]
            if not raw.strip() or raw.lstrip().startswith("#"):
                j += 1
                continue
            ind = indent_of(raw)
            if ind < level:
                break
            if ind > level:
                raise PprogError(f"unexpected indent (line {j + 1})")
            stripped = raw.strip()
            if stripped == "pass":
                j += 1
                continue
            if stripped.startswith("while ") and stripped.endswith(":"):
                cond = _parse_cond(stripped[len("while "):-1], j + 1)
                body, j2 = parse_block(j + 1, level + 1)
                label_counter[0] += 1
                nodes.append(While(f"w{label_counter[0]}", cond, body))
                j = j2
                continue
            if stripped.startswith("if ") and stripped.endswith(":"):
                cond = _parse_cond(stripped[len("if "):-1], j + 1)
                then, j2 = parse_block(j + 1, level + 1)
                els: tuple = ()
                if j2 < n and lines[j2].strip() == "else:" and indent_of(lines[j2]) == level:
                    els, j2 = parse_block(j2 + 1, level + 1)
                label_counter[0] += 1
                nodes.append(If(f"i{label_counter[0]}", cond, then, els))
                j = j2
                continue
            if stripped == "else:":
                break
            label_counter[0] += 1
            cur = _Cursor(_tokenize(stripped, j + 1), j + 1)
            try:
                stmt = _parse_statement(f"s{label_counter[0]}", cur, by_name, by_qual)
                cur.require_done()
            except MirParseError as e:
                raise PprogError(f"bad statement {stripped!r}: {e}") from None
            nodes.append(Prim(stmt))
            j += 1
        return tuple(nodes), j

    while i < n:
        raw = lines[i]
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            i += 1
            continue
        if stripped.startswith("inputs:"):
            inputs = tuple(stripped[len("inputs:"):].split())
            i += 1
        elif stripped.startswith("outputs:"):
            outputs = tuple(stripped[len("outputs:"):].split())
            i += 1
        elif stripped.startswith("extern "):
            name, arity = stripped[len("extern "):].split("/")
            externs.append((name.strip(), int(arity)))
            i += 1
        elif stripped.startswith("field "):
            cls, fname = stripped[len("field "):].split(".")
            fld = FieldId(cls.strip(), fname.strip())
            fields.append(fld)
            by_qual[str(fld)] = fld
            by_name.setdefault(fld.name, []).append(fld)
            i += 1
        elif stripped.startswith("func "):
            head = stripped[len("func "):]
            name, rest = head.split("(", 1)
            params = tuple(x.strip() for x in rest.split(")")[0].split(",") if x.strip())
            body, i = parse_block(i + 1, 1)
            functions.append(FuncAst(name.strip(), params, body))
        elif stripped == "main:":
            body, i = parse_block(i + 1, 1)
            for node in body:
                if not (isinstance(node, Prim) and node.stmt.kind == K_CALL
                        and node.stmt.dest is None):
                    raise PprogError("main: section may only contain bare calls")
                main_order.append(node.stmt.callee)
        else:
            raise PprogError(f"unexpected line {stripped!r} (line {i + 1})")

    return ProcessingProgram(
        functions=tuple(functions),
        main_order=tuple(main_order),
        inputs=inputs,
        outputs=outputs,
        externs=tuple(externs),
        fields=tuple(fields),
    )


# ---- interpretation ----

class _Return(Exception):
    def __init__(self, value):
        self.value = value


class _Runner:
    def __init__(self, p: ProcessingProgram, inputs: dict, externs: dict):
        self.p = p
        self.by_id = {f.id: f for f in p.functions}
        self.inputs = inputs
        self.externs = externs
        self.fields: dict[FieldId, object] = {}
        self.written: set[FieldId] = set()
        self.reads_before_write: list[FieldId] = []
        self.outputs: dict[str, list[tuple]] = {name: [] for name in p.outputs}
        self.calls: list[tuple[str, tuple, object]] = []
        self.out_names = set(p.outputs)

    def call_extern(self, name: str, args: tuple):
        if name in self.inputs:
            impl = self.inputs[name]
            result = impl(*args) if callable(impl) else impl
        elif name in self.externs:
            result = self.externs[name](*args)
        elif name in self.out_names:
            result = 0  # output primitives default to a recording sink
        else:
            raise UnboundInput(f"extern {name!r} not bound")
        # snapshot array arguments: the caller may mutate them afterwards
        snap = tuple(list(a) if isinstance(a, list) else a for a in args)
        if name in self.out_names:
            self.outputs[name].append(snap)
        self.calls.append((name, snap, result))
        return result

    def call_function(self, fid: str, args: tuple):
        f = self.by_id[fid]
        env = dict(zip(f.params, args))
        try:
            self.exec_block(f.body, env)
        except _Return as r:
            return r.value
        return 0

    def exec_block(self, nodes, env) -> None:
        for node in nodes:
            if isinstance(node, Prim):
                self.exec_stmt(node.stmt, env)
            elif isinstance(node, If):
                if self.eval_cond(node.cond, env):
                    self.exec_block(node.then, env)
                else:
                    self.exec_block(node.els, env)
            elif isinstance(node, While):
                while self.eval_cond(node.cond, env):
                    self.exec_block(node.body, env)

    def eval_cond(self, c: Cond, env) -> bool:
        return apply_cond(c.op, self.val(c.lhs, env), self.val(c.rhs, env))

    def val(self, o, env):
        if isinstance(o, Const):
            return o.value
        if o.name not in env:
            raise EvalError(f"unbound variable {o.name!r}")
        return env[o.name]

    def exec_stmt(self, s, env) -> None:
        k = s.kind
        if k == K_CONST:
            env[s.dest] = s.src.value
        elif k == K_BINOP:
            env[s.dest] = apply_binop(s.op, self.val(s.lhs, env), self.val(s.rhs, env))
        elif k == K_UNOP:
            env[s.dest] = apply_unop(s.op, self.val(s.src, env))
        elif k == K_CALL:
            args = tuple(self.val(a, env) for a in s.args)
            if s.callee in self.by_id:
                r = self.call_function(s.callee, args)
            else:
                r = self.call_extern(s.callee, args)
            if s.dest is not None:
                env[s.dest] = r
        elif k == K_FIELD_READ:
            if s.fld not in self.written and s.fld not in self.reads_before_write:
                self.reads_before_write.append(s.fld)
            env[s.dest] = self.fields.get(s.fld, 0)
        elif k == K_FIELD_WRITE:
            self.fields[s.fld] = self.val(s.src, env)
            self.written.add(s.fld)
        elif k == K_ARRAY_READ:
            arr = self.val(Var(s.array), env)
            idx = self.val(s.index, env)
            if not isinstance(arr, list):
                raise EvalError(f"{s.array!r} is not an array")
            if not isinstance(idx, int) or not (0 <= idx < len(arr)):
                raise OutOfBoundsArrayAccess(f"index {idx} out of bounds for {s.array!r}")
            env[s.dest] = arr[idx]
        elif k == K_ARRAY_WRITE:
            arr = self.val(Var(s.array), env)
            idx = self.val(s.index, env)
            if not isinstance(arr, list):
                raise EvalError(f"{s.array!r} is not an array")
            if not isinstance(idx, int) or not (0 <= idx < len(arr)):
                raise OutOfBoundsArrayAccess(f"index {idx} out of bounds for {s.array!r}")
            arr[idx] = self.val(s.src, env)
        elif k == K_NEWARRAY:
            size = self.val(s.size, env)
            if not isinstance(size, int) or size < 0:
                raise EvalError(f"bad array size {size!r}")
            env[s.dest] = [0] * size
        elif k == K_RETURN:
            raise _Return(self.val(s.src, env))
        else:
            raise EvalError(f"statement kind {k!r} cannot appear in a PPROG")


def interpret(p: ProcessingProgram, inputs: dict | None = None,
              externs: dict | None = None) -> InterpResult:
    """Run a processing program: heads in main order, inputs bound by name."""
    inputs = inputs or {}
    missing = [name for name in p.inputs if name not in inputs]
    if missing:
        raise UnboundInput(f"inputs not bound: {', '.join(missing)}")
    r = _Runner(p, inputs, externs or {})
    for head in p.main_order:
        f = r.by_id[head]
        r.call_function(head, tuple(0 for _ in f.params))
    return InterpResult(r.outputs, r.fields, r.calls, r.reads_before_write)
