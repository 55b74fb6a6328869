"""Loop reconstruction and goto elimination for sliced function bodies.

A loop is found where a statement's direct successor dominates it (a back
edge); the loop body is the intersection of the back-edge source's
ancestors and the header's descendants, which for reducible flow is the
natural loop. The loop condition is the one if statement in the body whose
target lies beyond it. Bodies are rebuilt as while nodes; the section of
the body between the header and the exit test is duplicated ahead of the
while so mid-body tests need no break statement. Plain branches become
if/else with the join at the immediate post-dominator; join tails shared
by both arms are duplicated rather than goto-linked.

Irreducible flow (a retreating edge whose target does not dominate its
source) is rejected, as are loop shapes with several conditional exits or
iterations that can bypass the exit test.
"""
from __future__ import annotations

from dataclasses import dataclass

from .mir.cfg import Cfg, dominators
from .mir.ir import (
    K_GOTO,
    K_IF_GOTO,
    K_RETURN,
    Label,
    MirFunction,
    MirStatement,
    Operand,
)

__all__ = [
    "Cond", "Prim", "If", "While", "FuncAst", "IrreducibleControlFlow",
    "reconstruct_loops", "negate_op",
]

_NEGATE = {"<": ">=", ">=": "<", ">": "<=", "<=": ">", "==": "!=", "!=": "=="}


class IrreducibleControlFlow(RuntimeError):
    pass


def negate_op(op: str) -> str:
    return _NEGATE[op]


@dataclass(frozen=True)
class Cond:
    lhs: Operand
    op: str
    rhs: Operand

    def negated(self) -> "Cond":
        return Cond(self.lhs, negate_op(self.op), self.rhs)

    def __str__(self) -> str:
        return f"{self.lhs} {self.op} {self.rhs}"


@dataclass(frozen=True)
class Prim:
    stmt: MirStatement


@dataclass(frozen=True)
class If:
    label: Label  # the branch statement this came from
    cond: Cond
    then: tuple
    els: tuple


@dataclass(frozen=True)
class While:
    label: Label  # the loop's exit-test statement
    cond: Cond
    body: tuple


@dataclass(frozen=True)
class FuncAst:
    id: str
    params: tuple[str, ...]
    body: tuple


@dataclass
class _Loop:
    header: Label
    body: frozenset[Label]
    latches: frozenset[Label]
    exit_branch: Label | None = None
    exit_target: Label | None = None
    stay: Label | None = None
    exit_on_true: bool = True


def _reachable_from(cfg: Cfg, start: Label) -> set[Label]:
    seen = {start}
    work = [start]
    while work:
        n = work.pop()
        for s in cfg.succs(n):
            if s not in seen:
                seen.add(s)
                work.append(s)
    return seen


def _find_loops(cfg: Cfg, dom: dict[Label, frozenset[Label]]) -> list[_Loop]:
    back: dict[Label, set[Label]] = {}
    for u in cfg.nodes:
        for v in cfg.succs(u):
            if v in dom[u]:
                back.setdefault(v, set()).add(u)

    # reducibility: the graph without back edges must be acyclic
    color: dict[Label, int] = {}
    stack = [(cfg.entry, 0)]
    order = []
    while stack:
        n, phase = stack.pop()
        if phase == 1:
            color[n] = 2
            continue
        if color.get(n) == 2:
            continue
        if color.get(n) == 1:
            continue
        color[n] = 1
        stack.append((n, 1))
        for s in cfg.succs(n):
            if s in back and n in back[s]:
                continue
            if color.get(s) == 1:
                raise IrreducibleControlFlow(
                    "retreating edge whose target does not dominate its source")
            if color.get(s, 0) == 0:
                stack.append((s, 0))
    del order

    loops = []
    for h in sorted(back):
        latches = back[h]
        body = {h} | set(latches)
        work = list(latches)
        while work:
            n = work.pop()
            if n == h:
                continue
            for p in cfg.preds(n):
                if p not in body:
                    body.add(p)
                    work.append(p)
        # the dominance rule also intersects with the header's descendants
        body &= _reachable_from(cfg, h) | {h}
        loops.append(_Loop(h, frozenset(body), frozenset(latches)))
    loops.sort(key=lambda l: (len(l.body), l.header))
    return loops


def _analyze_exits(cfg: Cfg, f: MirFunction, loop: _Loop) -> None:
    exits = []
    for lab in sorted(loop.body):
        s = f.stmt(lab)
        if s.kind != K_IF_GOTO:
            continue
        outside = [d for d in cfg.succs(lab) if d not in loop.body]
        if outside:
            exits.append((lab, outside))
    if len(exits) != 1:
        raise IrreducibleControlFlow(
            f"loop at {loop.header!r} needs exactly one conditional exit, found {len(exits)}")
    lab, outside = exits[0]
    if len(outside) != 1:
        raise IrreducibleControlFlow(f"loop exit {lab!r} leaves the loop on both arms")
    s = f.stmt(lab)
    loop.exit_branch = lab
    loop.exit_target = outside[0]
    loop.exit_on_true = s.target == outside[0]
    succs = cfg.succs(lab)
    loop.stay = succs[0] if succs[0] != loop.exit_target else succs[1]

    # every iteration must pass the exit test: with the test removed, no
    # latch may remain reachable from the header inside the loop
    if lab != loop.header:
        seen = {loop.header}
        work = [loop.header]
        while work:
            n = work.pop()
            if n in loop.latches:
                raise IrreducibleControlFlow(
                    f"loop at {loop.header!r}: an iteration can bypass the exit test")
            for d in cfg.succs(n):
                if d == loop.header or d == lab or d not in loop.body or d in seen:
                    continue
                seen.add(d)
                work.append(d)


class _Structurer:
    def __init__(self, f: MirFunction, cfg: Cfg, dom):
        self.f = f
        self.cfg = cfg
        self.loops = _find_loops(cfg, dom)
        for lp in self.loops:
            _analyze_exits(cfg, f, lp)

    def _direct_children(self, lp: _Loop) -> list[_Loop]:
        nested = [o for o in self.loops if o is not lp and o.body < lp.body]
        return [o for o in nested
                if not any(t is not o and o.body < t.body for t in nested)]

    def _top_level(self) -> list[_Loop]:
        return [lp for lp in self.loops
                if not any(o is not lp and lp.body < o.body for o in self.loops)]

    def structure(self) -> tuple:
        top = self._top_level()
        edges, rep = self._derived(set(self.cfg.nodes), top, set())
        return tuple(self._region(rep[self.cfg.entry], None, edges, top))

    def _derived(self, nodes: set[Label], level_loops: list[_Loop],
                 cut_edges: set[tuple[Label, Label]]):
        """Acyclic region graph with each level loop collapsed to its header."""
        rep = {}
        headers = {lp.header: lp for lp in level_loops}
        for n in nodes:
            rep[n] = n
            for lp in level_loops:
                if n in lp.body:
                    rep[n] = lp.header
                    break
        edges: dict[Label, list[Label]] = {rep[n]: [] for n in nodes}
        for n in nodes:
            if rep[n] != n:
                continue  # interior of a collapsed loop
            if n in headers:
                lp = headers[n]
                tgt = lp.exit_target
                if tgt in nodes and (lp.exit_branch, tgt) not in cut_edges:
                    rt = rep.get(tgt, tgt)
                    if rt not in edges[n]:
                        edges[n].append(rt)
                continue
            for d in self.cfg.succs(n):
                if (n, d) in cut_edges or d not in nodes:
                    continue
                rd = rep[d]
                if rd not in edges[n]:
                    edges[n].append(rd)
        return {k: tuple(v) for k, v in edges.items()}, rep

    def _loop_ast(self, lp: _Loop) -> list:
        inner = self._direct_children(lp)
        cut: set[tuple[Label, Label]] = {(l, lp.header) for l in lp.latches}
        cut.add((lp.exit_branch, lp.exit_target))
        edges, rep = self._derived(set(lp.body), inner, cut)
        s = self.f.stmt(lp.exit_branch)
        cond = Cond(s.lhs, s.op, s.rhs)
        continue_cond = cond.negated() if lp.exit_on_true else cond
        head_part = self._region(rep[lp.header], lp.exit_branch, edges, inner)
        if lp.stay == lp.header:
            tail_part: list = []
        else:
            tail_part = self._region(rep[lp.stay], None, edges, inner)
        return head_part + [While(lp.exit_branch, continue_cond,
                                  tuple(tail_part + head_part))]

    def _region(self, n: Label | None, stop: Label | None, edges, level_loops) -> list:
        out: list = []
        by_header = {lp.header: lp for lp in level_loops}
        pdom = _graph_postdominators(edges)
        while n is not None and n != stop:
            if n in by_header:
                lp = by_header[n]
                out.extend(self._loop_ast(lp))
                succs = edges.get(n, ())
                n = succs[0] if succs else None
                continue
            s = self.f.stmt(n)
            succs = edges.get(n, ())
            if s.kind == K_GOTO:
                n = succs[0] if succs else None
                continue
            if s.kind == K_RETURN:
                out.append(Prim(s))
                return out
            if s.kind == K_IF_GOTO:
                if len(succs) != 2:
                    raise IrreducibleControlFlow(
                        f"branch {n!r} has {len(succs)} region successors")
                t_arm = succs[0]
                f_arm = succs[1]
                # succs order is (target, fallthrough) unless collapsing merged them
                mapped_target = t_arm
                for cand in succs:
                    if cand == s.target or (cand in by_header and s.target in by_header[cand].body):
                        mapped_target = cand
                        break
                if mapped_target == succs[1]:
                    t_arm, f_arm = succs[1], succs[0]
                join = _ipdom(pdom, n)
                arm_stop = join if join is not None else stop
                then = self._region(t_arm, arm_stop, edges, level_loops)
                els = self._region(f_arm, arm_stop, edges, level_loops)
                out.append(If(n, Cond(s.lhs, s.op, s.rhs), tuple(then), tuple(els)))
                n = join
                continue
            out.append(Prim(s))
            n = succs[0] if succs else None
        return out


def _graph_postdominators(edges: dict[Label, tuple[Label, ...]]):
    nodes = set(edges)
    for dsts in edges.values():
        nodes |= set(dsts)
    sinks = {n for n in nodes if not edges.get(n)}
    pdom: dict[Label, frozenset[Label]] = {
        n: (frozenset({n}) if n in sinks else frozenset(nodes)) for n in nodes
    }
    changed = True
    while changed:
        changed = False
        for n in nodes:
            if n in sinks:
                continue
            succs = edges.get(n, ())
            new = frozenset.intersection(*(pdom[s] for s in succs)) | {n}
            if new != pdom[n]:
                pdom[n] = new
                changed = True
    return pdom


def _ipdom(pdom, n: Label) -> Label | None:
    strict = pdom.get(n, frozenset()) - {n}
    for c in strict:
        # immediate = the strict post-dominator all the others post-dominate
        if all(d in pdom.get(c, frozenset()) for d in strict if d != c):
            return c
    return None


def reconstruct_loops(
    f: MirFunction,
    cfg: Cfg,
    dom: dict[Label, frozenset[Label]] | None = None,
    sliced: frozenset[Label] | None = None,
) -> FuncAst:
    """Structure a (possibly sliced) function body into loops/ifs/primitives.

    `cfg` and `dom` describe the original, unsliced function; when `sliced`
    is given, statements outside it are dropped from the rebuilt tree.
    """
    dom = dom if dom is not None else dominators(cfg)
    tree = _Structurer(f, cfg, dom).structure()
    if sliced is not None:
        tree = tuple(_filter(tree, sliced))
    return FuncAst(f.id, f.params, tuple(tree))


def _filter(nodes, sliced: frozenset[Label]) -> list:
    out = []
    for node in nodes:
        if isinstance(node, Prim):
            if node.stmt.label in sliced:
                out.append(node)
        elif isinstance(node, If):
            then = _filter(node.then, sliced)
            els = _filter(node.els, sliced)
            if node.label in sliced:
                out.append(If(node.label, node.cond, tuple(then), tuple(els)))
            elif then or els:
                raise IrreducibleControlFlow(
                    "slice keeps a branch arm without its branch (control closure missing)")
        elif isinstance(node, While):
            body = _filter(node.body, sliced)
            if node.label in sliced:
                out.append(While(node.label, node.cond, tuple(body)))
            elif body:
                raise IrreducibleControlFlow(
                    "slice keeps a loop body without its exit test")
    return out
