"""Re-synthesis of sliced statements into a runnable processing program.

Sliced statements are grouped by function and structured (module
structure); functions connected by sliced call sites form function groups,
each led by its caller-less head. Heads are ordered by the Write-before-
Read principle: groups that read no field keep document order (R1), and a
field's writer group is placed before its readers (R2), subtracting placed
writes from the remaining read sets until all groups are placed.

The emitted program is a versioned text form (PPROG v1) executed by the
bundled interpreter (module interp).
"""
from __future__ import annotations

from dataclasses import dataclass

from .basis import QLabel
from .mir.cfg import CallGraph, build_cfg, dominators
from .mir.ir import (
    FieldId,
    K_CALL,
    MirProgram,
    def_use,
)
from .slicer import ProcessingSlice
from .structure import FuncAst, If, Prim, While, reconstruct_loops

__all__ = [
    "FunctionGroup", "ProcessingProgram", "UnsatisfiableOrder",
    "group_functions", "order_heads", "emit_program", "format_pprog",
]


class UnsatisfiableOrder(RuntimeError):
    def __init__(self, residual: dict[str, frozenset[FieldId]]):
        pretty = "; ".join(
            f"{head} still reads {{{', '.join(sorted(map(str, flds)))}}}"
            for head, flds in sorted(residual.items())
        )
        super().__init__(f"cyclic field dependencies, no valid head order: {pretty}")
        self.residual = residual


@dataclass(frozen=True)
class FunctionGroup:
    members: frozenset[str]
    head: str
    reads: frozenset[FieldId]
    writes: frozenset[FieldId]


@dataclass(frozen=True)
class ProcessingProgram:
    functions: tuple[FuncAst, ...]
    main_order: tuple[str, ...]
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    externs: tuple[tuple[str, int], ...]
    fields: tuple[FieldId, ...]


def _sliced_by_function(slices: list[ProcessingSlice]) -> dict[str, set[str]]:
    acc: dict[str, set[str]] = {}
    for ps in slices:
        for q in ps.union:
            acc.setdefault(q.func, set()).add(q.label)
    return acc


def group_functions(slices: list[ProcessingSlice], cg: CallGraph,
                    program: MirProgram) -> list[FunctionGroup]:
    """Connected components of sliced functions under sliced call sites."""
    by_func = _sliced_by_function(slices)
    union: set[QLabel] = set()
    for ps in slices:
        union |= ps.union

    live_edges = [
        (caller, lab, callee)
        for caller, lab, callee in cg.edges
        if QLabel(caller, lab) in union
    ]
    members: set[str] = set(by_func)
    for _, _, callee in live_edges:
        members.add(callee)  # an empty callee still has to be defined

    doc_order = [f.id for f in program.functions if f.id in members]
    parent: dict[str, str] = {m: m for m in members}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for caller, _, callee in live_edges:
        ra, rb = find(caller), find(callee)
        if ra != rb:
            parent[rb] = ra

    comp: dict[str, list[str]] = {}
    for m in doc_order:
        comp.setdefault(find(m), []).append(m)

    groups = []
    for root in sorted(comp, key=lambda r: doc_order.index(comp[r][0])):
        mem = comp[root]
        callees_in = {callee for caller, _, callee in live_edges if caller in mem}
        heads = [m for m in mem if m not in callees_in]
        if not heads:
            heads = mem  # a call cycle: every member has a caller
        head = _pick_head(heads, mem, live_edges)
        reads: set[FieldId] = set()
        writes: set[FieldId] = set()
        for m in mem:
            f = program.function(m)
            labs = by_func.get(m, ())
            for s in f.body:
                if s.label not in labs:
                    continue
                d, u = def_use(s)
                writes |= {v for v in d if isinstance(v, FieldId)}
                reads |= {v for v in u if isinstance(v, FieldId)}
        groups.append(FunctionGroup(frozenset(mem), head, frozenset(reads), frozenset(writes)))
    return groups


def _pick_head(heads: list[str], members: list[str], edges) -> str:
    """Several caller-less functions: pick the one reaching the most members."""
    if len(heads) == 1:
        return heads[0]
    adj: dict[str, set[str]] = {}
    for caller, _, callee in edges:
        adj.setdefault(caller, set()).add(callee)

    def reach(start: str) -> int:
        seen = {start}
        work = [start]
        while work:
            n = work.pop()
            for d in adj.get(n, ()):
                if d not in seen:
                    seen.add(d)
                    work.append(d)
        return len(seen & set(members))

    return max(heads, key=lambda h: (reach(h), -members.index(h)))


def order_heads(groups: list[FunctionGroup]) -> list[str]:
    """Write-before-Read head order; raises UnsatisfiableOrder on cycles.

    A field no group writes cannot constrain the order, and a group's own
    writes satisfy its reads, so both are subtracted up front.
    """
    written_somewhere: set[FieldId] = set()
    for g in groups:
        written_somewhere |= g.writes
    residual: dict[str, set[FieldId]] = {
        g.head: set((g.reads - g.writes) & written_somewhere) for g in groups
    }
    remaining = list(groups)
    placed: list[str] = []
    while remaining:
        ready = [g for g in remaining if not residual[g.head]]
        if not ready:
            raise UnsatisfiableOrder(
                {g.head: frozenset(residual[g.head]) for g in remaining})
        g = ready[0]
        placed.append(g.head)
        remaining.remove(g)
        for other in remaining:
            residual[other.head] -= g.writes
    return placed


def _walk(nodes):
    for n in nodes:
        if isinstance(n, Prim):
            yield n.stmt
        elif isinstance(n, If):
            yield from _walk(n.then)
            yield from _walk(n.els)
        elif isinstance(n, While):
            yield from _walk(n.body)


def emit_program(program: MirProgram, slices: list[ProcessingSlice]) -> ProcessingProgram:
    """Structure every sliced function and assemble the ordered program."""
    by_func = _sliced_by_function(slices)
    groups = group_functions(slices, _cg(program), program)
    order = order_heads(groups)

    functions: list[FuncAst] = []
    all_members = set()
    for g in groups:
        all_members |= g.members
    for f in program.functions:
        if f.id not in all_members:
            continue
        labs = frozenset(by_func.get(f.id, frozenset()))
        if labs:
            cfg = build_cfg(f)
            functions.append(reconstruct_loops(f, cfg, dominators(cfg), sliced=labs))
        else:
            functions.append(FuncAst(f.id, f.params, ()))

    ext_arity = dict(program.externs)
    used_ext: dict[str, int] = {}
    inputs: set[str] = set()
    outputs: set[str] = set()
    fields: set[FieldId] = set()
    for fa in functions:
        for s in _walk(fa.body):
            if s.fld is not None:
                fields.add(s.fld)
            if s.kind == K_CALL and s.callee in ext_arity:
                used_ext[s.callee] = ext_arity[s.callee]
                if ext_arity[s.callee] == 0 and s.dest is not None:
                    inputs.add(s.callee)
                if s.dest is None:
                    outputs.add(s.callee)

    return ProcessingProgram(
        functions=tuple(functions),
        main_order=tuple(order),
        inputs=tuple(sorted(inputs)),
        outputs=tuple(sorted(outputs)),
        externs=tuple(sorted(used_ext.items())),
        fields=tuple(sorted(fields, key=str)),
    )


def _cg(program: MirProgram) -> CallGraph:
    from .mir.cfg import build_call_graph

    return build_call_graph(program)


# ---- PPROG v1 serialization ----

def _fmt_stmt_line(s) -> str:
    from .mir.ir import format_statement

    return format_statement(s)


def _emit_nodes(nodes, indent: int, lines: list[str]) -> None:
    pad = "  " * indent
    for n in nodes:
        if isinstance(n, Prim):
            lines.append(f"{pad}{_fmt_stmt_line(n.stmt)}")
        elif isinstance(n, If):
            lines.append(f"{pad}if {n.cond}:")
            _emit_nodes(n.then, indent + 1, lines)
            if not n.then:
                lines.append(f"{pad}  pass")
            if n.els:
                lines.append(f"{pad}else:")
                _emit_nodes(n.els, indent + 1, lines)
        elif isinstance(n, While):
            lines.append(f"{pad}while {n.cond}:")
            _emit_nodes(n.body, indent + 1, lines)
            if not n.body:
                lines.append(f"{pad}  pass")


def format_pprog(p: ProcessingProgram) -> str:
    lines = ["PPROG v1"]
    lines.append("inputs: " + " ".join(p.inputs))
    lines.append("outputs: " + " ".join(p.outputs))
    for name, arity in p.externs:
        lines.append(f"extern {name}/{arity}")
    for fld in p.fields:
        lines.append(f"field {fld}")
    for fa in p.functions:
        lines.append(f"func {fa.id}({', '.join(fa.params)}):")
        _emit_nodes(fa.body, 1, lines)
        if not fa.body:
            lines.append("  pass")
    lines.append("main:")
    for head in p.main_order:
        lines.append(f"  call {head}()")
    return "\n".join(lines) + "\n"
