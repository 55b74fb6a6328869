"""Bidirectional slicing over the dependence basis.

Backward slicing resolves each pending value at its use sites: every
reaching definition joins the slice and contributes its own uses as new
pending values. Forward slicing propagates influence from defined values
to their reaching uses; each newly sliced statement gets a supplementary
backward pass so its remaining operands are computable, which is what
makes the forward slice executable.

The recursion of the underlying pseudo-algorithm is replaced by an
explicit worklist with (statement, value, context) memoization, which
terminates on cyclic bases (loops, recursion). Context is a depth-1 call
string: descending through a call return records the site, and crossing
the callee entry backward returns only to that site.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .basis import BasisEdge, EdgeKind, QLabel, SlicingBasis
from .criteria import SlicingCriterion
from .mir.ir import FieldId, K_CALL, K_IF_GOTO, K_RETURN, Var

__all__ = [
    "SliceSet", "ProcessingSlice", "slice_backward", "slice_forward",
    "extract_processing", "format_slice_report", "parse_slice_report",
    "format_label_list",
]


@dataclass(frozen=True)
class SliceSet:
    statements: frozenset[QLabel]
    seed: SlicingCriterion


@dataclass(frozen=True)
class ProcessingSlice:
    pre: SliceSet
    post: SliceSet
    criterion_stmt: QLabel

    @property
    def union(self) -> frozenset[QLabel]:
        return self.pre.statements | self.post.statements


class _Slicer:
    def __init__(self, basis: SlicingBasis):
        self.b = basis
        self.sliced: set[QLabel] = set()
        self._joined: set[tuple[QLabel, QLabel | None]] = set()
        self._resolved: set[tuple[QLabel, object, QLabel | None]] = set()
        self._tainted: set[tuple[QLabel, object, QLabel | None]] = set()
        self._fjoined: set[tuple[QLabel, QLabel | None]] = set()
        self._tainted_defs: set[tuple[QLabel, object]] = set()
        self._tainted_params: set[tuple[str, str]] = set()
        self._sup_pending: list[tuple[QLabel, QLabel | None]] = []
        self._work: deque = deque()

    def run(self):
        while self._work:
            task = self._work.popleft()
            task[0](*task[1:])

    # ---- backward machinery ----

    def join_back(self, q: QLabel, ctx: QLabel | None):
        """q joins the slice; resolve its uses and close over control parents."""
        key = (q, ctx)
        if key in self._joined:
            return
        self._joined.add(key)
        self.sliced.add(q)
        _, uses = self.b.def_use_map[q]
        for v in uses:
            self._work.append((self.resolve, q, v, ctx))
        for e in self.b.in_edges[q]:
            if e.kind is EdgeKind.BRANCH_CONTROL:
                self._work.append((self.join_back, e.src, ctx))

    def resolve(self, q: QLabel, v, ctx: QLabel | None):
        """Find and slice the definitions of value v as observed at q."""
        key = (q, v, ctx)
        if key in self._resolved:
            return
        self._resolved.add(key)

        if isinstance(v, FieldId):
            for e in self.b.in_edges[q]:
                if e.kind is EdgeKind.FIELD_DEF_USE and e.fld == v:
                    self._work.append((self.join_back, e.src, None))
            return

        for e in self.b.in_edges[q]:
            if e.kind is EdgeKind.LOCAL_DEF_USE and e.var == v:
                self._work.append((self.join_back, e.src, ctx))
                d_stmt = self.b.stmt(e.src)
                if d_stmt.kind == K_CALL and d_stmt.dest == v and \
                        d_stmt.callee not in self.b.program.extern_names:
                    self._dive_returns(e.src, d_stmt.callee)

        # the value may arrive through the enclosing function's parameters
        f = self.b.program.function(q.func)
        if v in f.params and q.label in self.b.param_uses.get((q.func, v), ()):
            sites = [ctx] if ctx is not None else self.b.call_sites_of(q.func)
            for site in sites:
                self._work.append((self.join_back, site, None))

    def _dive_returns(self, site: QLabel, callee: str):
        for r in self.b.returns_of(callee):
            self._work.append((self.join_back, r, site))

    # ---- forward machinery ----
    #
    # Influence is propagated to a fixpoint first; the supplementary
    # backward passes run afterwards so the set of influenced values they
    # must skip does not depend on worklist order.

    def taint_def(self, q: QLabel, v, ctx: QLabel | None):
        """Value v produced at sliced statement q influences its consumers."""
        key = (q, v, ctx)
        if key in self._tainted:
            return
        self._tainted.add(key)
        self._tainted_defs.add((q, v))
        for e in self.b.out_edges[q]:
            if e.kind is EdgeKind.LOCAL_DEF_USE and e.var == v:
                self._work.append((self.join_fwd, e.dst, ctx))
                self._cross_call_arg(e.dst, v)
            elif e.kind is EdgeKind.FIELD_DEF_USE and e.fld == v:
                self._work.append((self.join_fwd, e.dst, None))

    def _cross_call_arg(self, site: QLabel, v: str):
        """An influenced argument taints the bound parameters of the callee."""
        stmt = self.b.stmt(site)
        if stmt.kind != K_CALL or stmt.callee in self.b.program.extern_names:
            return
        for param, arg in self.b.param_bindings(site).items():
            if isinstance(arg, Var) and arg.name == v:
                if (stmt.callee, param) in self._tainted_params:
                    continue
                self._tainted_params.add((stmt.callee, param))
                for lab in self.b.param_uses.get((stmt.callee, param), ()):
                    self._work.append((self.join_fwd, QLabel(stmt.callee, lab), site))

    def join_fwd(self, q: QLabel, ctx: QLabel | None):
        """q joins the forward slice (an influenced value reaches or controls it)."""
        key = (q, ctx)
        if key in self._fjoined:
            return
        self._fjoined.add(key)
        self.sliced.add(q)
        self._sup_pending.append(key)
        stmt = self.b.stmt(q)
        defs, _ = self.b.def_use_map[q]

        for v in defs:
            self._work.append((self.taint_def, q, v, ctx))

        if stmt.kind == K_IF_GOTO:
            for e in self.b.out_edges[q]:
                if e.kind is EdgeKind.BRANCH_CONTROL:
                    self._work.append((self.join_fwd, e.dst, ctx))

        if stmt.kind == K_RETURN:
            for e in self.b.out_edges[q]:
                if e.kind is EdgeKind.CALL_RETURN and (ctx is None or ctx == e.dst):
                    if self.b.stmt(e.dst).dest is not None:
                        self._work.append((self.join_fwd, e.dst, None))

    def _influenced_at(self, q: QLabel, v) -> bool:
        """True when every definition of v reaching q is already influenced.

        A value with an uninfluenced reaching definition still needs the
        supplementary backward pass, or the emitted slice could read it
        unbound on the paths taking that definition.
        """
        if isinstance(v, FieldId):
            writes = [e for e in self.b.in_edges[q]
                      if e.kind is EdgeKind.FIELD_DEF_USE and e.fld == v]
            return bool(writes) and all((e.src, v) in self._tainted_defs for e in writes)
        defs = [e for e in self.b.in_edges[q]
                if e.kind is EdgeKind.LOCAL_DEF_USE and e.var == v]
        param_reaches = q.label in self.b.param_uses.get((q.func, v), ())
        if not defs and not param_reaches:
            return False
        if any((e.src, v) not in self._tainted_defs for e in defs):
            return False
        if param_reaches and (q.func, v) not in self._tainted_params:
            return False
        return True

    def run_supplementary(self):
        """Backward-complete every forward-joined statement's uninfluenced operands."""
        for q, ctx in self._sup_pending:
            _, uses = self.b.def_use_map[q]
            for v in uses:
                if not self._influenced_at(q, v):
                    self._work.append((self.resolve, q, v, ctx))
            for e in self.b.in_edges[q]:
                if e.kind is EdgeKind.BRANCH_CONTROL:
                    self._work.append((self.join_back, e.src, ctx))
        self._sup_pending = []
        self.run()


def slice_backward(basis: SlicingBasis, criterion: SlicingCriterion) -> SliceSet:
    """All statements the criterion values transitively depend on."""
    if criterion.direction != "backward":
        raise ValueError("criterion direction must be 'backward'")
    _, uses = basis.def_use_map[criterion.stmt]
    if not criterion.values <= uses:
        raise ValueError("backward criterion values must be used by its statement")
    if not criterion.values:
        return SliceSet(frozenset({criterion.stmt}), criterion)
    s = _Slicer(basis)
    s.sliced.add(criterion.stmt)
    for e in basis.in_edges[criterion.stmt]:
        if e.kind is EdgeKind.BRANCH_CONTROL:
            s._work.append((s.join_back, e.src, None))
    for v in criterion.values:
        s._work.append((s.resolve, criterion.stmt, v, None))
    s.run()
    return SliceSet(frozenset(s.sliced), criterion)


def slice_forward(basis: SlicingBasis, criterion: SlicingCriterion) -> SliceSet:
    """All statements transitively influenced by the criterion's defined values."""
    if criterion.direction != "forward":
        raise ValueError("criterion direction must be 'forward'")
    defs, _ = basis.def_use_map[criterion.stmt]
    if not criterion.values <= defs:
        raise ValueError("forward criterion values must be defined by its statement")
    s = _Slicer(basis)
    s.sliced.add(criterion.stmt)
    for v in criterion.values:
        s._work.append((s.taint_def, criterion.stmt, v, None))
    s.run()
    s.run_supplementary()
    return SliceSet(frozenset(s.sliced), criterion)


def extract_processing(basis: SlicingBasis,
                       criteria: list[SlicingCriterion]) -> list[ProcessingSlice]:
    """Pair backward/forward criteria per call site into processing slices."""
    by_site: dict[QLabel, dict[str, SlicingCriterion]] = {}
    for c in criteria:
        by_site.setdefault(c.stmt, {})[c.direction] = c
    out = []
    for site in sorted(by_site):
        pair = by_site[site]
        if "backward" not in pair or "forward" not in pair:
            raise ValueError(f"criteria for {site} must come in backward/forward pairs")
        pre = slice_backward(basis, pair["backward"])
        post = slice_forward(basis, pair["forward"])
        out.append(ProcessingSlice(pre, post, site))
    return out


# ---- report serialization ----

def format_slice_report(slices: list[ProcessingSlice]) -> str:
    """Human-readable listing, grouped by function, parseable back."""
    lines = ["SLICERPT v1"]
    for i, ps in enumerate(slices):
        lines.append(f"slice {i} criterion={ps.criterion_stmt}")
        for name, sset in (("backward", ps.pre), ("forward", ps.post)):
            lines.append(f"  {name}:")
            by_func: dict[str, list[str]] = {}
            for q in sorted(sset.statements):
                by_func.setdefault(q.func, []).append(q.label)
            for func in sorted(by_func):
                lines.append(f"    {func}: {' '.join(by_func[func])}")
    return "\n".join(lines) + "\n"


def format_label_list(slices: list[ProcessingSlice]) -> str:
    """Machine-readable union: one qualified label per line."""
    union: set[QLabel] = set()
    for ps in slices:
        union |= ps.union
    return "\n".join(str(q) for q in sorted(union)) + "\n"


def parse_slice_report(text: str) -> list[tuple[QLabel, frozenset[QLabel], frozenset[QLabel]]]:
    """Parse SLICERPT v1 into (criterion, pre set, post set) triples."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != "SLICERPT v1":
        raise ValueError("not a SLICERPT v1 file")
    out: list[tuple[QLabel, set[QLabel], set[QLabel]]] = []
    section: set[QLabel] | None = None
    pre: set[QLabel] = set()
    post: set[QLabel] = set()
    crit: QLabel | None = None
    for raw in lines[1:]:
        line = raw.rstrip()
        if not line.strip():
            continue
        if line.startswith("slice "):
            if crit is not None:
                out.append((crit, frozenset(pre), frozenset(post)))
            _, rest = line.split("criterion=", 1)
            func, lab = rest.strip().split(":", 1)
            crit = QLabel(func, lab)
            pre, post = set(), set()
            section = None
        elif line.strip() == "backward:":
            section = pre
        elif line.strip() == "forward:":
            section = post
        else:
            if section is None or crit is None:
                raise ValueError(f"unexpected report line {line!r}")
            func, labs = line.strip().split(":", 1)
            for lab in labs.split():
                section.add(QLabel(func, lab))
    if crit is not None:
        out.append((crit, frozenset(pre), frozenset(post)))
    return [(c, frozenset(p), frozenset(q)) for c, p, q in out]
