"""Program-wide dependence graph used as the slicing basis.

Five edge kinds connect qualified statement labels:
  LOCAL_DEF_USE   def-clear local def -> use within one function
  FIELD_DEF_USE   field write -> field read, across functions
  CALL_ENTRY      call site -> callee entry statement
  CALL_RETURN     callee return -> call site
  BRANCH_CONTROL  branch -> statement whose execution it decides

LOCAL_DEF_USE edges are flow-sensitive: they come from a statement-level
reaching-definitions analysis, so a redefinition on every path cuts the
edge. Array writes generate a definition of the array without killing
earlier ones (whole-array cells, weak update). Parameters are defined at
function entry; uses reached by that virtual definition are recorded in
`param_uses` so the slicer can cross call boundaries precisely.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from enum import Enum
from functools import cached_property

from .mir.cfg import Cfg, CallGraph, build_call_graph, build_cfg, control_dependence, dominators
from .mir.ir import (
    FieldId,
    K_ARRAY_WRITE,
    K_CALL,
    K_RETURN,
    Label,
    MirFunction,
    MirProgram,
    MirStatement,
    def_use,
)

__all__ = ["EdgeKind", "QLabel", "BasisEdge", "SlicingBasis", "build_basis"]


class EdgeKind(Enum):
    LOCAL_DEF_USE = "local-def-use"
    FIELD_DEF_USE = "field-def-use"
    CALL_ENTRY = "call-entry"
    CALL_RETURN = "call-return"
    BRANCH_CONTROL = "branch-control"


@dataclass(frozen=True, order=True)
class QLabel:
    """Statement label qualified by its function."""

    func: str
    label: Label

    def __str__(self) -> str:
        return f"{self.func}:{self.label}"


@dataclass(frozen=True)
class BasisEdge:
    src: QLabel
    dst: QLabel
    kind: EdgeKind
    var: str | None = None       # LOCAL_DEF_USE carrier
    fld: FieldId | None = None   # FIELD_DEF_USE carrier


_PARAM_DEF = "<entry>"


def _reaching(f: MirFunction, cfg: Cfg) -> dict[Label, set[tuple[str, str]]]:
    """IN set per statement: (defining label or <entry>, variable)."""
    gen: dict[Label, set[tuple[str, str]]] = {}
    kill_vars: dict[Label, set[str]] = {}
    for s in f.body:
        d, _ = def_use(s)
        dv = {v for v in d if isinstance(v, str)}
        gen[s.label] = {(s.label, v) for v in dv}
        # array writes are weak updates: they do not kill earlier defs
        kill_vars[s.label] = set() if s.kind == K_ARRAY_WRITE else set(dv)

    ins: dict[Label, set[tuple[str, str]]] = {s.label: set() for s in f.body}
    entry_facts = {(_PARAM_DEF, p) for p in f.params}
    work = [s.label for s in f.body]
    while work:
        lab = work.pop(0)
        acc: set[tuple[str, str]] = set()
        for p in cfg.preds(lab):
            kv = kill_vars[p]
            acc |= gen[p] | {fact for fact in ins[p] if fact[1] not in kv}
        if lab == cfg.entry:
            acc |= entry_facts
        if acc != ins[lab]:
            ins[lab] = acc
            work.extend(cfg.succs(lab))
    return ins


@dataclass
class SlicingBasis:
    """Dependence graph plus the lookup tables the slicer needs."""

    program: MirProgram
    nodes: tuple[QLabel, ...]
    edges: tuple[BasisEdge, ...]
    cfgs: dict[str, Cfg]
    call_graph: CallGraph
    # (func, param) -> labels of uses reached by the parameter's entry def
    param_uses: dict[tuple[str, str], tuple[Label, ...]]

    def stmt(self, q: QLabel) -> MirStatement:
        return self.program.function(q.func).stmt(q.label)

    @cached_property
    def in_edges(self) -> dict[QLabel, tuple[BasisEdge, ...]]:
        acc: dict[QLabel, list[BasisEdge]] = {n: [] for n in self.nodes}
        for e in self.edges:
            acc[e.dst].append(e)
        return {n: tuple(v) for n, v in acc.items()}

    @cached_property
    def out_edges(self) -> dict[QLabel, tuple[BasisEdge, ...]]:
        acc: dict[QLabel, list[BasisEdge]] = {n: [] for n in self.nodes}
        for e in self.edges:
            acc[e.src].append(e)
        return {n: tuple(v) for n, v in acc.items()}

    @cached_property
    def def_use_map(self) -> dict[QLabel, tuple[frozenset, frozenset]]:
        return {n: def_use(self.stmt(n)) for n in self.nodes}

    def call_sites_of(self, callee: str) -> list[QLabel]:
        return [QLabel(caller, lab) for caller, lab, c in self.call_graph.edges if c == callee]

    def returns_of(self, func: str) -> list[QLabel]:
        f = self.program.function(func)
        return [QLabel(func, s.label) for s in f.body if s.kind == K_RETURN]

    def entry_of(self, func: str) -> QLabel:
        return QLabel(func, self.program.function(func).body[0].label)

    def param_bindings(self, site: QLabel) -> dict[str, object]:
        """Map callee parameter name -> argument operand at this call site."""
        s = self.stmt(site)
        callee = self.program.function(s.callee)
        return dict(zip(callee.params, s.args))


def build_basis(p: MirProgram) -> SlicingBasis:
    """Materialize all five dependence edge kinds for the whole program."""
    cfgs = {f.id: build_cfg(f) for f in p.functions}
    cg = build_call_graph(p)
    nodes: list[QLabel] = []
    edges: list[BasisEdge] = []
    param_uses: dict[tuple[str, str], list[Label]] = {}
    field_writes: list[tuple[QLabel, FieldId]] = []
    field_reads: list[tuple[QLabel, FieldId]] = []

    for f in p.functions:
        cfg = cfgs[f.id]
        ins = _reaching(f, cfg)
        for s in f.body:
            q = QLabel(f.id, s.label)
            nodes.append(q)
            d, u = def_use(s)
            for v in u:
                if isinstance(v, FieldId):
                    field_reads.append((q, v))
                    continue
                for src_lab, var in ins[s.label]:
                    if var != v:
                        continue
                    if src_lab == _PARAM_DEF:
                        param_uses.setdefault((f.id, v), []).append(s.label)
                    else:
                        edges.append(BasisEdge(QLabel(f.id, src_lab), q,
                                               EdgeKind.LOCAL_DEF_USE, var=v))
            for v in d:
                if isinstance(v, FieldId):
                    field_writes.append((q, v))
        for b, deps in control_dependence(cfg).items():
            for s_lab in sorted(deps):
                edges.append(BasisEdge(QLabel(f.id, b), QLabel(f.id, s_lab),
                                       EdgeKind.BRANCH_CONTROL))

    for w, wf in field_writes:
        for r, rf in field_reads:
            if wf == rf:
                edges.append(BasisEdge(w, r, EdgeKind.FIELD_DEF_USE, fld=wf))

    for caller, lab, callee in cg.edges:
        site = QLabel(caller, lab)
        entry = QLabel(callee, p.function(callee).body[0].label)
        edges.append(BasisEdge(site, entry, EdgeKind.CALL_ENTRY))
        for s in p.function(callee).body:
            if s.kind == K_RETURN:
                edges.append(BasisEdge(QLabel(callee, s.label), site, EdgeKind.CALL_RETURN))

    return SlicingBasis(
        program=p,
        nodes=tuple(nodes),
        edges=tuple(edges),
        cfgs=cfgs,
        call_graph=cg,
        param_uses={k: tuple(v) for k, v in param_uses.items()},
    )
