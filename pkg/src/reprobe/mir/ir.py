"""Three-address mini-IR (MIR).

A MIR program is a set of functions over 64-bit ints, 64-bit floats and
flat arrays, plus globally visible class fields and external primitives.
Statements are labeled; control flow is goto/if-goto/return only, so every
function body doubles as its own CFG node list.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

Label = str
VarId = str
FunctionId = str

BINARY_OPS = ("+", "-", "*", "/", "%", "<", "<=", "==", "!=", ">>", "<<")
UNARY_OPS = ("neg", "not", "int2float", "float2int")
COND_OPS = ("<", "<=", ">", ">=", "==", "!=")


@dataclass(frozen=True)
class FieldId:
    """A class field, resolved statically to (class, name)."""

    cls: str
    name: str

    def __str__(self) -> str:
        return f"{self.cls}.{self.name}"


@dataclass(frozen=True)
class Var:
    name: VarId

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Const:
    value: int | float

    def __str__(self) -> str:
        return format_const(self.value)


Operand = Var | Const


def format_const(value: int | float) -> str:
    if isinstance(value, float):
        # repr keeps round-trip exactness for 64-bit floats
        return repr(value)
    return str(value)


# Statement kinds
K_CONST = "const"
K_BINOP = "binop"
K_UNOP = "unop"
K_CALL = "call"
K_FIELD_READ = "field_read"
K_FIELD_WRITE = "field_write"
K_ARRAY_READ = "array_read"
K_ARRAY_WRITE = "array_write"
K_NEWARRAY = "newarray"
K_IF_GOTO = "if_goto"
K_GOTO = "goto"
K_RETURN = "return"

ALL_KINDS = (
    K_CONST, K_BINOP, K_UNOP, K_CALL, K_FIELD_READ, K_FIELD_WRITE,
    K_ARRAY_READ, K_ARRAY_WRITE, K_NEWARRAY, K_IF_GOTO, K_GOTO, K_RETURN,
)


@dataclass(frozen=True)
class MirStatement:
    """One labeled three-address statement.

    Only the operand slots relevant to `kind` are populated; the rest stay
    at their defaults.
    """

    label: Label
    kind: str
    dest: VarId | None = None
    op: str | None = None
    lhs: Operand | None = None
    rhs: Operand | None = None
    src: Operand | None = None
    callee: str | None = None
    args: tuple[Operand, ...] = ()
    fld: FieldId | None = None
    receiver: VarId | None = None  # None for static Class.F access
    array: VarId | None = None
    index: Operand | None = None
    size: Operand | None = None
    target: Label | None = None

    def __str__(self) -> str:
        return f"{self.label}: {format_statement(self)}"


@dataclass(frozen=True)
class MirFunction:
    id: FunctionId
    params: tuple[VarId, ...]
    body: tuple[MirStatement, ...]
    locals: frozenset[VarId]

    def stmt(self, label: Label) -> MirStatement:
        return self._by_label[label]

    @cached_property
    def _by_label(self) -> dict[Label, MirStatement]:
        return {s.label: s for s in self.body}


@dataclass(frozen=True)
class MirProgram:
    functions: tuple[MirFunction, ...]
    fields_decl: tuple[FieldId, ...]
    externs: tuple[tuple[str, int], ...]  # (name, arity)
    entry: FunctionId

    def function(self, fid: FunctionId) -> MirFunction:
        for f in self.functions:
            if f.id == fid:
                return f
        raise KeyError(fid)

    @property
    def extern_names(self) -> frozenset[str]:
        return frozenset(name for name, _ in self.externs)


def _operand_vars(*ops: Operand | None) -> set[VarId]:
    return {o.name for o in ops if isinstance(o, Var)}


def def_use(stmt: MirStatement) -> tuple[frozenset, frozenset]:
    """Return (defined values, used values) for one statement.

    Values are VarId strings for locals and FieldId objects for fields.
    Array accesses use whole-array granularity: a write to arr[i] defines
    arr but also uses it (other elements flow through), so earlier element
    writes stay live.
    """
    k = stmt.kind
    if k == K_CONST:
        return frozenset({stmt.dest}), frozenset()
    if k == K_BINOP:
        return frozenset({stmt.dest}), frozenset(_operand_vars(stmt.lhs, stmt.rhs))
    if k == K_UNOP:
        return frozenset({stmt.dest}), frozenset(_operand_vars(stmt.src))
    if k == K_CALL:
        d = frozenset({stmt.dest}) if stmt.dest is not None else frozenset()
        return d, frozenset(_operand_vars(*stmt.args))
    if k == K_FIELD_READ:
        uses: set = {stmt.fld}
        if stmt.receiver is not None:
            uses.add(stmt.receiver)
        return frozenset({stmt.dest}), frozenset(uses)
    if k == K_FIELD_WRITE:
        uses = _operand_vars(stmt.src)
        if stmt.receiver is not None:
            uses.add(stmt.receiver)
        return frozenset({stmt.fld}), frozenset(uses)
    if k == K_ARRAY_READ:
        return frozenset({stmt.dest}), frozenset({stmt.array} | _operand_vars(stmt.index))
    if k == K_ARRAY_WRITE:
        return (
            frozenset({stmt.array}),
            frozenset({stmt.array} | _operand_vars(stmt.index, stmt.src)),
        )
    if k == K_NEWARRAY:
        return frozenset({stmt.dest}), frozenset(_operand_vars(stmt.size))
    if k == K_IF_GOTO:
        return frozenset(), frozenset(_operand_vars(stmt.lhs, stmt.rhs))
    if k == K_GOTO:
        return frozenset(), frozenset()
    if k == K_RETURN:
        return frozenset(), frozenset(_operand_vars(stmt.src))
    raise ValueError(f"unknown statement kind {k!r}")


def format_statement(s: MirStatement) -> str:
    """Statement text without the label prefix."""
    k = s.kind
    if k == K_CONST:
        return f"{s.dest} = const {s.src}"
    if k == K_BINOP:
        return f"{s.dest} = {s.lhs} {s.op} {s.rhs}"
    if k == K_UNOP:
        return f"{s.dest} = {s.op} {s.src}"
    if k == K_CALL:
        call = f"call {s.callee}({', '.join(str(a) for a in s.args)})"
        return f"{s.dest} = {call}" if s.dest is not None else call
    if k == K_FIELD_READ:
        recv = s.receiver if s.receiver is not None else s.fld.cls
        return f"{s.dest} = {recv}.{s.fld.name}"
    if k == K_FIELD_WRITE:
        recv = s.receiver if s.receiver is not None else s.fld.cls
        return f"{recv}.{s.fld.name} = {s.src}"
    if k == K_ARRAY_READ:
        return f"{s.dest} = {s.array}[{s.index}]"
    if k == K_ARRAY_WRITE:
        return f"{s.array}[{s.index}] = {s.src}"
    if k == K_NEWARRAY:
        return f"{s.dest} = newarray {s.size}"
    if k == K_IF_GOTO:
        return f"if {s.lhs} {s.op} {s.rhs} goto {s.target}"
    if k == K_GOTO:
        return f"goto {s.target}"
    if k == K_RETURN:
        return f"return {s.src}"
    raise ValueError(f"unknown statement kind {k!r}")


def print_mir(program: MirProgram) -> str:
    """Canonical textual form; parse(print(p)) is structurally identical to p."""
    lines: list[str] = []
    for fld in program.fields_decl:
        lines.append(f"field {fld}")
    for name, arity in program.externs:
        lines.append(f"extern {name}/{arity}")
    if lines:
        lines.append("")
    for i, f in enumerate(program.functions):
        if i:
            lines.append("")
        lines.append(f"func {f.id}({', '.join(f.params)}):")
        for s in f.body:
            lines.append(f"  {s}")
    return "\n".join(lines) + "\n"
