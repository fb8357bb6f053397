"""Numerical order-condition residuals for Rosenbrock(-W) and multirate schemes.

Conditions are indexed by rooted trees.  A tree is written in bracket form:
``t`` is a leaf, ``[at,a[bt]]`` is a root with two children reached over
``alpha`` edges, one of which has a child reached over a ``beta`` edge.
Edge letters: ``a`` = alpha, ``g`` = gamma, ``b`` = beta = alpha + gamma.
Partition-labelled conditions append the vertex labels in pre-order,
e.g. ``ros3.[b[bt]]:SFF``.  The target of a condition is ``1/density`` when
every edge is an ``a``/``b`` edge and ``0`` otherwise.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Iterator

import numpy as np

from .tableau import (
    AssembledTableau,
    BaseMethod,
    MultirateMethod,
    assemble_gark,
    averaged_coupling,
    compose_substeps,
)

DEFAULT_TOL = 1e-10
MODES = ("ros", "row", "time_lagged")


@dataclass(frozen=True)
class ConditionEntry:
    id: str
    order: int
    target: float
    value: float
    residual: float
    scale: float = 1.0
    applicable: bool = True

    def passed(self, tol: float) -> bool:
        return bool(np.isfinite(self.residual) and abs(self.residual) <= tol)


@dataclass
class ConditionReport:
    entries: list[ConditionEntry]
    requested_order: int
    tolerance: float = DEFAULT_TOL
    notes: list[str] = field(default_factory=list)

    @property
    def achieved_order(self) -> int:
        achieved = 0
        for p in range(1, self.requested_order + 1):
            relevant = [e for e in self.entries if e.applicable and e.order == p]
            if all(e.passed(self.tolerance) for e in relevant):
                achieved = p
            else:
                break
        return achieved

    @property
    def max_residual(self) -> float:
        vals = [abs(e.residual) for e in self.entries if e.applicable]
        return max(vals) if vals else 0.0

    def failures(self) -> list[ConditionEntry]:
        return [e for e in self.entries if e.applicable and not e.passed(self.tolerance)]

    def by_id(self) -> dict[str, ConditionEntry]:
        return {e.id: e for e in self.entries}

    def select(self, prefix: str) -> list[ConditionEntry]:
        return [e for e in self.entries if e.id.startswith(prefix)]

    def extend(self, other: "ConditionReport", prefix: str = "") -> None:
        for e in other.entries:
            self.entries.append(
                ConditionEntry(prefix + e.id, e.order, e.target, e.value, e.residual, e.scale, e.applicable)
            )
        self.notes.extend(other.notes)

    def render(self, fmt: str = "text") -> str:
        if fmt == "csv":
            rows = ["id,target,value,residual,pass"]
            for e in self.entries:
                verdict = "n/a" if not e.applicable else str(e.passed(self.tolerance)).lower()
                rows.append(f"{e.id},{e.target:.17g},{e.value:.17g},{e.residual:.17g},{verdict}")
            return "\n".join(rows) + "\n"
        if fmt != "text":
            raise ValueError(f"unknown format {fmt!r}")
        width = max([len(e.id) for e in self.entries] + [2])
        lines = [f"{'id':<{width}}  {'target':>24}  {'residual':>24}  pass"]
        for e in self.entries:
            verdict = "n/a" if not e.applicable else ("yes" if e.passed(self.tolerance) else "NO")
            lines.append(f"{e.id:<{width}}  {e.target:>24.17g}  {e.residual:>24.17g}  {verdict}")
        lines.append(f"achieved order {self.achieved_order} (requested {self.requested_order}, tol {self.tolerance:g})")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# Trees

Shape = tuple  # tuple of child shapes; () is a leaf

_SHAPES: dict[int, list[Shape]] = {
    1: [()],
    2: [((),)],
    3: [((), ()), (((),),)],
    4: [((), (), ()), ((), ((),)), (((), ()),), ((((),),),)],
}


def _order(shape: Shape) -> int:
    return 1 + sum(_order(c) for c in shape)


def _edge_trees(shape: Shape, mode: str) -> Iterator[tuple]:
    """All edge-labelled versions of ``shape``: nested tuples of ``(edge, subtree)``."""
    if not shape:
        yield ()
        return
    if len(shape) >= 2:
        kinds: tuple[str, ...] = ("a",)
    else:
        kinds = ("b",) if mode == "ros" else ("a", "g")
    per_child = []
    for child in shape:
        options = [(k, sub) for k in kinds for sub in _edge_trees(child, mode)]
        per_child.append(options)
    for combo in itertools.product(*per_child):
        yield tuple(combo)


def _code(tree: tuple) -> str:
    if not tree:
        return "t"
    return "[" + ",".join(edge + _code(sub) for edge, sub in tree) + "]"


def _density(tree: tuple) -> int:
    d = 1 + sum(_vertices(sub) for _, sub in tree)
    for _, sub in tree:
        d *= _density(sub)
    return d


def _vertices(tree: tuple) -> int:
    return 1 + sum(_vertices(sub) for _, sub in tree)


def _has_gamma(tree: tuple) -> bool:
    return any(edge == "g" or _has_gamma(sub) for edge, sub in tree)


@dataclass(frozen=True)
class TreeCondition:
    stem: str
    order: int
    tree: tuple
    target: float


def tree_conditions(p: int, mode: str) -> list[TreeCondition]:
    """Unlabelled conditions up to order ``p``; ``time_lagged`` adds ``tl3.[at]``."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if not 1 <= p <= 4:
        raise ValueError("order must be between 1 and 4")
    if mode == "time_lagged" and p > 3:
        raise ValueError("time-lagged conditions are only defined up to order 3")
    tree_mode = "row" if mode == "row" else "ros"
    out = []
    for order in range(1, p + 1):
        for shape in _SHAPES[order]:
            for tree in _edge_trees(shape, tree_mode):
                target = 0.0 if _has_gamma(tree) else float(Fraction(1, _density(tree)))
                out.append(TreeCondition(f"{tree_mode}{order}.{_code(tree)}", order, tree, target))
    if mode == "time_lagged" and p >= 3:
        out.append(TreeCondition("tl3.[at]", 3, (("a", ()),), 0.5))
    return out


def _label_tuples(tree: tuple, parts: str) -> Iterator[str]:
    return ("".join(t) for t in itertools.product(parts, repeat=_vertices(tree)))


class _Evaluator:
    """Interface: ``leaf(part)``, ``apply(edge, m, n, v)``, ``weights(part, v)``."""

    def leaf(self, part: str):
        raise NotImplementedError

    def apply(self, edge: str, m: str, n: str, v):
        raise NotImplementedError

    def weights(self, part: str, v) -> float:
        raise NotImplementedError

    def phi(self, tree: tuple, labels: str, pos: int = 0) -> tuple[object, int]:
        m = labels[pos]
        out = self.leaf(m)
        nxt = pos + 1
        for edge, sub in tree:
            n = labels[nxt]
            val, nxt = self.phi(sub, labels, nxt)
            out = out * self.apply(edge, m, n, val)
        return out, nxt

    def evaluate(self, tree: tuple, labels: str) -> float:
        val, _ = self.phi(tree, labels)
        return float(self.weights(labels[0], val))


class _TableauEvaluator(_Evaluator):
    def __init__(self, tab: AssembledTableau):
        self.idx = {p: tab.indices(p) for p in set(tab.partition)}
        self.mats = {"a": tab.A, "g": tab.G, "b": tab.A + tab.G}
        self.b = tab.b

    def leaf(self, part):
        return np.ones(self.idx[part].size)

    def apply(self, edge, m, n, v):
        return self.mats[edge][np.ix_(self.idx[m], self.idx[n])] @ v

    def weights(self, part, v):
        return self.b[self.idx[part]] @ v


class _MultirateEvaluator(_Evaluator):
    """Structured evaluation on the coupling matrices, without assembling."""

    def __init__(self, mrm: MultirateMethod):
        self.mrm = mrm
        self.phi_ = mrm.fractions
        cs = mrm.coupling
        self.fs = {"a": cs.alpha_fs, "g": cs.gamma_fs,
                   "b": tuple(a + g for a, g in zip(cs.alpha_fs, cs.gamma_fs))}
        self.sf = {"a": cs.alpha_sf, "g": cs.gamma_sf,
                   "b": tuple(a + g for a, g in zip(cs.alpha_sf, cs.gamma_sf))}
        fast = mrm.fast_steps
        self.ff = {"a": [f.alpha for f in fast], "g": [f.gamma for f in fast], "b": [f.beta for f in fast]}
        slow = mrm.slow
        self.ss = {"a": slow.alpha, "g": slow.gamma, "b": slow.beta}

    def leaf(self, part):
        if part == "F":
            return np.ones((self.mrm.M, self.mrm.sF))
        return np.ones(self.mrm.sS)

    def apply(self, edge, m, n, v):
        mrm, phi = self.mrm, self.phi_
        if m == "F" and n == "F":
            out = np.empty_like(v)
            carried = 0.0
            for lam in range(mrm.M):
                out[lam] = phi[lam] * (self.ff[edge][lam] @ v[lam])
                if edge != "g":
                    out[lam] += carried
                carried = carried + phi[lam] * (mrm.fast_steps[lam].b @ v[lam])
            return out
        if m == "F":
            return np.array([mat @ v for mat in self.fs[edge]])
        if n == "F":
            return sum(phi[lam] * (self.sf[edge][lam] @ v[lam]) for lam in range(mrm.M))
        return self.ss[edge] @ v

    def weights(self, part, v):
        if part == "F":
            return sum(self.phi_[lam] * (self.mrm.fast_steps[lam].b @ v[lam]) for lam in range(self.mrm.M))
        return self.mrm.slow.b @ v


def _entry(cid: str, order: int, target: float, value: float, scale: float = 1.0,
           applicable: bool = True) -> ConditionEntry:
    return ConditionEntry(cid, order, target, value, (value - target) / scale, scale, applicable)


def _labelled_entries(ev: _Evaluator, p: int, mode: str, parts: str) -> list[ConditionEntry]:
    entries = []
    for cond in tree_conditions(p, mode):
        for labels in _label_tuples(cond.tree, parts):
            value = ev.evaluate(cond.tree, labels)
            entries.append(_entry(f"{cond.stem}:{labels}", cond.order, cond.target, value))
    return entries


def check_base_ros(base: BaseMethod, p: int, mode: str = "ros", tol: float = DEFAULT_TOL) -> ConditionReport:
    """Single-method Rosenbrock (``ros``), W-method (``row``) or time-lagged conditions."""
    ev = _TableauEvaluator(AssembledTableau.single(base, "S"))
    entries = []
    for cond in tree_conditions(p, mode):
        labels = "S" * _vertices(cond.tree)
        entries.append(_entry(cond.stem, cond.order, cond.target, ev.evaluate(cond.tree, labels)))
    return ConditionReport(entries, p, tol)


def check_generic_gark(tab: AssembledTableau, p: int, mode: str = "ros", tol: float = DEFAULT_TOL) -> ConditionReport:
    """Every partition-labelled condition on an assembled two-partition tableau."""
    parts = "".join(sorted(set(tab.partition)))
    return ConditionReport(_labelled_entries(_TableauEvaluator(tab), p, mode, parts), p, tol)


# ----------------------------------------------------------------------------
# Internal consistency


def _consistency_entries(mrm: MultirateMethod) -> list[ConditionEntry]:
    """Residual norms of the four internal-consistency relations (per micro-step where indexed)."""
    phi = mrm.fractions
    cs = mrm.coupling
    sS, sF = mrm.sS, mrm.sF
    ones_F, ones_S = np.ones(sF), np.ones(sS)
    entries = []
    c_sf = sum(phi[l] * (cs.alpha_sf[l] @ ones_F) for l in range(mrm.M))
    g_sf = sum(phi[l] * (cs.gamma_sf[l] @ ones_F) for l in range(mrm.M))
    entries.append(_norm_entry("ic.c_sf", c_sf, mrm.slow.c))
    elapsed = 0.0
    for l in range(mrm.M):
        fast = mrm.fast_steps[l]
        entries.append(_norm_entry(f"ic.c_fs[{l + 1}]", cs.alpha_fs[l] @ ones_S, elapsed + phi[l] * fast.c))
        elapsed += phi[l]
    entries.append(_norm_entry("ic.g_sf", g_sf, mrm.slow.g))
    for l in range(mrm.M):
        fast = mrm.fast_steps[l]
        entries.append(_norm_entry(f"ic.g_fs[{l + 1}]", cs.gamma_fs[l] @ ones_S, phi[l] * fast.g))
    return entries


def _norm_entry(cid: str, value: np.ndarray, target: np.ndarray) -> ConditionEntry:
    # Vector relations are reported through the max-norm of their defect.
    r = float(np.max(np.abs(value - target))) if value.size else 0.0
    return ConditionEntry(cid, 1, 0.0, r, r)


def check_internal_consistency(mrm: MultirateMethod, tol: float = DEFAULT_TOL) -> ConditionReport:
    """Stage-abscissa agreement between the partitions.

    For SPC methods the relations are the corrector ones: the fast-slow
    couplings must reproduce the micro-step abscissae.
    """
    if mrm.flavor == "spc":
        entries = [e for e in _consistency_entries(mrm) if e.id.startswith(("ic.c_fs", "ic.g_fs"))]
    else:
        entries = _consistency_entries(mrm)
    return ConditionReport(entries, 1, tol)


# ----------------------------------------------------------------------------
# Named coupling conditions in micro-step-sum form


def _sum(mrm, fam, k):
    return averaged_coupling(mrm, fam, k)


def _named_coupling(mrm: MultirateMethod, p: int, mode: str) -> list[ConditionEntry]:
    """Coupling conditions written with micro-step sums, valid for internally consistent pure methods.

    The residual of each entry is divided by its power of ``M``, which makes
    it equal to the residual of the corresponding labelled condition.
    """
    M = mrm.M
    F, S = mrm.fast, mrm.slow
    bF, bS = F.b, S.b
    cF, cS, eF, eS, gF, gS = F.c, S.c, F.e, S.e, F.g, S.g
    oneF, oneS = np.ones(mrm.sF), np.ones(mrm.sS)
    aSF = [_sum(mrm, "alpha_sf", k) for k in range(3)]
    gSF = [_sum(mrm, "gamma_sf", k) for k in range(3)]
    aFS = [_sum(mrm, "alpha_fs", k) for k in range(3)]
    gFS = [_sum(mrm, "gamma_fs", k) for k in range(3)]
    bSF = [a + g for a, g in zip(aSF, gSF)]
    bFS = [a + g for a, g in zip(aFS, gFS)]
    cs = mrm.coupling
    out: list[ConditionEntry] = []

    def add(cid, order, value, target, scale):
        out.append(_entry(cid, order, target, float(value), scale))

    if mode in ("ros", "time_lagged") and p >= 3:
        add("ros3.coupling.a", 3, bS @ (bSF[1] @ oneF + bSF[0] @ eF), M**2 / 6, M**2)
        add("ros3.coupling.b", 3, bF @ bFS[0] @ eS, M / 6, M)
    if mode == "time_lagged" and p >= 3:
        add("tl3.coupling.slow", 3, bS @ cS, 0.5, 1.0)
        add("tl3.coupling.fast", 3, bF @ cF, 0.5, 1.0)
    if mode == "ros" and p >= 4:
        add("ros4.coupling.a", 4, bS @ ((aSF[1] @ oneF + aSF[0] @ eF) * cS), M**2 / 8, M**2)
        add("ros4.coupling.b", 4, bF @ (aFS[1] @ eS + (aFS[0] @ eS) * cF), M**2 / 8, M**2)
        add("ros4.coupling.c", 4, bS @ (bSF[2] @ oneF + 2 * bSF[1] @ cF + bSF[0] @ cF**2), M**3 / 12, M**3)
        add("ros4.coupling.d", 4, bF @ bFS[0] @ cS**2, M / 12, M)
        add("ros4.coupling.e", 4, bS @ S.beta @ (bSF[1] @ oneF + bSF[0] @ eF), M**2 / 24, M**2)
        add("ros4.coupling.f", 4, bS @ (bSF[1] @ eF + bSF[0] @ F.beta @ eF), M**3 / 24, M**3)
        mixed = sum((cs.alpha_sf[l] + cs.gamma_sf[l]) @ (cs.alpha_fs[l] + cs.gamma_fs[l]) for l in range(M))
        add("ros4.coupling.g", 4, bS @ mixed @ eS, M / 24, M)
        add("ros4.coupling.h", 4, bF @ F.beta @ bFS[0] @ eS, M**2 / 24, M**2)
        add("ros4.coupling.i", 4, bF @ bFS[0] @ S.beta @ eS, M / 24, M)
        back = sum(
            (cs.alpha_fs[l] + cs.gamma_fs[l]) @ (cs.alpha_sf[l] + cs.gamma_sf[l]) @ (l * oneF + eF)
            for l in range(M)
        )
        add("ros4.coupling.j", 4, bF @ back, M**3 / 24, M**3)
    if mode == "row" and p >= 3:
        add("row3.coupling.a", 3, bS @ (aSF[1] @ oneF + aSF[0] @ cF), M**2 / 6, M**2)
        add("row3.coupling.b", 3, bF @ aFS[0] @ cS, M / 6, M)
        add("row3.coupling.c", 3, bS @ (gSF[1] @ oneF + gSF[0] @ cF), 0.0, M**2)
        add("row3.coupling.d", 3, bF @ gFS[0] @ cS, 0.0, M)
        add("row3.coupling.e", 3, bS @ aSF[0] @ gF, 0.0, M)
        add("row3.coupling.f", 3, bF @ aFS[0] @ gS, 0.0, 1.0)
        add("row3.coupling.g", 3, bS @ gSF[0] @ gF, 0.0, M)
        add("row3.coupling.h", 3, bF @ gFS[0] @ gS, 0.0, 1.0)
    return out


def check_mr_order(mrm: MultirateMethod, p: int, mode: str = "ros", tol: float = DEFAULT_TOL) -> ConditionReport:
    """Full order report for a multirate method.

    Contains the base-method conditions (``slow.*``, ``fast.*``), the internal
    consistency relations (``ic.*``), every partition-labelled condition
    evaluated on the coupling matrices directly (same ids as
    :func:`check_generic_gark` on the assembled tableau), and the named
    micro-step-sum coupling conditions (``*.coupling.*``).  Named conditions
    are flagged not applicable unless the method is pure, uniformly
    micro-stepped and internally consistent.
    """
    if mrm.flavor == "spc":
        raise ValueError("SPC methods are checked with check_spc")
    report = ConditionReport([], p, tol)
    report.extend(check_base_ros(mrm.slow, p, mode, tol), "slow.")
    fast_seen: list[BaseMethod] = []
    for lam, fast in enumerate(mrm.fast_steps, start=1):
        if any(fast.same_coefficients(f) for f in fast_seen):
            continue
        fast_seen.append(fast)
        prefix = "fast." if lam == 1 else f"fast[{lam}]."
        report.extend(check_base_ros(fast, p, mode, tol), prefix)
    ic = _consistency_entries(mrm)
    report.entries.extend(ic)
    consistent = all(e.passed(tol) for e in ic)
    report.entries.extend(_labelled_entries(_MultirateEvaluator(mrm), p, mode, "FS"))
    named = _named_coupling(mrm, p, mode)
    applicable = consistent and mrm.is_pure and mrm.is_uniform
    if not applicable:
        reason = []
        if not consistent:
            reason.append("internal consistency violated")
        if not mrm.is_pure:
            reason.append("fast scheme varies between micro-steps")
        if not mrm.is_uniform:
            reason.append("non-uniform micro-steps")
        report.notes.append("named coupling conditions not applicable: " + ", ".join(reason))
        named = [ConditionEntry(e.id, e.order, e.target, e.value, e.residual, e.scale, False) for e in named]
    report.entries.extend(named)
    return report


# ----------------------------------------------------------------------------
# SPC


def check_spc(mrm: MultirateMethod, p: int, mode: str = "ros", tol: float = DEFAULT_TOL) -> ConditionReport:
    """Base conditions, corrector consistency and the SPC coupling conditions."""
    if mrm.flavor != "spc":
        raise ValueError(f"check_spc needs an SPC method, got flavor {mrm.flavor!r}")
    report = ConditionReport([], p, tol)
    report.extend(check_base_ros(mrm.slow, p, mode, tol), "slow.")
    report.extend(check_base_ros(mrm.fast, p, mode, tol), "fast.")
    if mrm.M > 1:
        # The Jacobian is frozen over the macro-step, so chaining micro-steps
        # is not order preserving unless b.g = 0; check the chain itself.
        report.extend(check_base_ros(compose_substeps(mrm.fast, mrm.M), p, mode, tol), "fast.chain.")
    ic = [e for e in _consistency_entries(mrm) if e.id.startswith(("ic.c_fs", "ic.g_fs"))]
    report.entries.extend(ic)
    consistent = all(e.passed(tol) for e in ic)
    M = mrm.M
    F, S = mrm.fast, mrm.slow
    bF = F.b
    cs = mrm.coupling
    aFS = [_sum(mrm, "alpha_fs", k) for k in range(2)]
    gFS = [_sum(mrm, "gamma_fs", k) for k in range(2)]
    bFS0 = aFS[0] + gFS[0]
    named: list[ConditionEntry] = []

    def add(cid, order, value, target, scale):
        named.append(_entry(cid, order, target, float(value), scale))

    if mode in ("ros", "time_lagged") and p >= 3:
        add("spc.ros3", 3, bF @ bFS0 @ S.e, M / 6, M)
    if mode == "time_lagged" and p >= 3:
        add("spc.tl3.slow", 3, S.b @ S.c, 0.5, 1.0)
        add("spc.tl3.fast", 3, bF @ F.c, 0.5, 1.0)
    if mode == "row" and p >= 3:
        add("spc.row3.a", 3, bF @ aFS[0] @ S.c, M / 6, M)
        add("spc.row3.b", 3, bF @ gFS[0] @ S.c, 0.0, M)
        add("spc.row3.c", 3, bF @ aFS[0] @ S.g, 0.0, M)
        add("spc.row3.d", 3, bF @ gFS[0] @ S.g, 0.0, M)
    if mode == "ros" and p >= 4:
        add("spc.ros4.a", 4, bF @ (aFS[1] @ S.e + (aFS[0] @ S.e) * F.c), M**2 / 8, M**2)
        add("spc.ros4.b", 4, bF @ bFS0 @ S.c**2, M / 12, M)
        prefix_sums = np.zeros_like(bFS0)
        acc = np.zeros_like(bFS0)
        for lam in range(M):
            prefix_sums = prefix_sums + acc
            acc = acc + cs.alpha_fs[lam] + cs.gamma_fs[lam]
        add("spc.ros4.c", 4, bF @ (prefix_sums + F.beta @ bFS0) @ S.e, M**2 / 24, M**2)
        add("spc.ros4.d", 4, bF @ bFS0 @ S.beta @ S.e, M / 24, M)
    if not consistent:
        report.notes.append("SPC coupling conditions not applicable: corrector consistency violated")
        named = [ConditionEntry(e.id, e.order, e.target, e.value, e.residual, e.scale, False) for e in named]
    report.entries.extend(named)
    return report


def check_stiff_accuracy(mrm: MultirateMethod, tol: float = 1e-12) -> tuple[bool, np.ndarray]:
    """Whether the weights equal the ``beta`` row of the last fast stage.

    Returns the verdict and the defect ``b - B[last fast stage, :]`` over the
    whole assembled tableau.
    """
    tab = assemble_gark(mrm)
    last_fast = tab.indices("F")[-1]
    defect = tab.b - tab.B[last_fast]
    return bool(np.max(np.abs(defect)) <= tol), defect
