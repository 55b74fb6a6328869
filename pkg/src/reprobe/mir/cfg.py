"""Per-function CFGs, dominance analyses, and the program call graph."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

from .ir import (
    FunctionId,
    K_CALL,
    K_GOTO,
    K_IF_GOTO,
    K_RETURN,
    Label,
    MirFunction,
    MirProgram,
)

VIRTUAL_EXIT = "<exit>"


@dataclass(frozen=True)
class Cfg:
    nodes: tuple[Label, ...]
    edges: dict[Label, tuple[Label, ...]]
    entry: Label
    exits: frozenset[Label]

    def succs(self, n: Label) -> tuple[Label, ...]:
        return self.edges[n]

    @cached_property
    def preds_map(self) -> dict[Label, tuple[Label, ...]]:
        acc: dict[Label, list[Label]] = {n: [] for n in self.nodes}
        for src, dsts in self.edges.items():
            for d in dsts:
                acc[d].append(src)
        return {n: tuple(v) for n, v in acc.items()}

    def preds(self, n: Label) -> tuple[Label, ...]:
        return self.preds_map[n]


def build_cfg(f: MirFunction) -> Cfg:
    """Fall-through plus goto/if targets; entry is the first statement."""
    nodes = tuple(s.label for s in f.body)
    edges: dict[Label, tuple[Label, ...]] = {}
    exits = set()
    for i, s in enumerate(f.body):
        if s.kind == K_RETURN:
            edges[s.label] = ()
            exits.add(s.label)
        elif s.kind == K_GOTO:
            edges[s.label] = (s.target,)
        elif s.kind == K_IF_GOTO:
            edges[s.label] = (s.target, f.body[i + 1].label)
        else:
            edges[s.label] = (f.body[i + 1].label,)
    return Cfg(nodes, edges, f.body[0].label, frozenset(exits))


@dataclass(frozen=True)
class CallGraph:
    """One edge per resolved internal call site; externs excluded."""

    edges: tuple[tuple[FunctionId, Label, FunctionId], ...]

    def callees_of(self, fid: FunctionId) -> list[tuple[Label, FunctionId]]:
        return [(lab, callee) for caller, lab, callee in self.edges if caller == fid]

    def callers_of(self, fid: FunctionId) -> list[tuple[FunctionId, Label]]:
        return [(caller, lab) for caller, lab, callee in self.edges if callee == fid]


def build_call_graph(p: MirProgram) -> CallGraph:
    fnames = {f.id for f in p.functions}
    edges = []
    for f in p.functions:
        for s in f.body:
            if s.kind == K_CALL and s.callee in fnames:
                edges.append((f.id, s.label, s.callee))
    return CallGraph(tuple(edges))


def _rpo(nodes, entry, succs) -> list:
    order: list = []
    seen = set()

    def visit(n):
        stack = [(n, iter(succs(n)))]
        seen.add(n)
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append((nxt, iter(succs(nxt))))
                    advanced = True
                    break
            if not advanced:
                order.append(node)
                stack.pop()

    visit(entry)
    order.reverse()
    return order


def dominators(g: Cfg) -> dict[Label, frozenset[Label]]:
    """Iterative fixpoint over reverse postorder.

    Every node dominates itself and is dominated by the entry.
    """
    order = _rpo(g.nodes, g.entry, g.succs)
    all_nodes = frozenset(order)
    dom: dict[Label, frozenset[Label]] = {n: all_nodes for n in order}
    dom[g.entry] = frozenset({g.entry})
    changed = True
    while changed:
        changed = False
        for n in order:
            if n == g.entry:
                continue
            preds = [p for p in g.preds(n) if p in dom]
            new = frozenset.intersection(*(dom[p] for p in preds)) if preds else frozenset()
            new = new | {n}
            if new != dom[n]:
                dom[n] = new
                changed = True
    return dom


def idom_map(dom: dict[Label, frozenset[Label]], entry: Label) -> dict[Label, Label | None]:
    """Immediate dominator per node (None for the entry)."""
    out: dict[Label, Label | None] = {}
    for n, ds in dom.items():
        if n == entry:
            out[n] = None
            continue
        strict = ds - {n}
        # immediate = the strict dominator every other strict dominator dominates
        best = None
        for c in strict:
            if all(d in dom[c] for d in strict if d != c):
                best = c
                break
        out[n] = best
    return out


def postdominators(g: Cfg) -> dict[Label, frozenset[Label]]:
    """Post-dominance over the CFG extended with a virtual exit node.

    Nodes that cannot reach any exit post-dominate only themselves.
    """
    def rsuccs(n):
        if n == VIRTUAL_EXIT:
            return tuple(g.exits)
        return g.preds(n)

    order = _rpo(list(g.nodes) + [VIRTUAL_EXIT], VIRTUAL_EXIT, rsuccs)
    reachable = frozenset(order)
    pdom: dict[Label, frozenset[Label]] = {n: reachable for n in order}
    pdom[VIRTUAL_EXIT] = frozenset({VIRTUAL_EXIT})
    changed = True
    while changed:
        changed = False
        for n in order:
            if n == VIRTUAL_EXIT:
                continue
            succs_n = list(g.succs(n)) + ([VIRTUAL_EXIT] if n in g.exits else [])
            succs_n = [s for s in succs_n if s in pdom]
            new = frozenset.intersection(*(pdom[s] for s in succs_n)) if succs_n else frozenset()
            new = new | {n}
            if new != pdom[n]:
                pdom[n] = new
                changed = True
    return {n: pdom.get(n, frozenset({n})) - {VIRTUAL_EXIT} for n in g.nodes}


def control_dependence(g: Cfg) -> dict[Label, frozenset[Label]]:
    """Map branch label -> statements whose execution it decides.

    s is control-dependent on branch b when s post-dominates one arm of b
    but does not post-dominate b itself.
    """
    pdom = postdominators(g)
    out: dict[Label, frozenset[Label]] = {}
    for b in g.nodes:
        succs = g.succs(b)
        if len(succs) < 2:
            continue
        deps = {
            s
            for arm in succs
            for s in g.nodes
            if s != b and s in pdom[arm] and s not in pdom[b]
        }
        out[b] = frozenset(deps)
    return out
