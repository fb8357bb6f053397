"""Multirate GARK-ROS/ROW time stepping.

All steppers reduce one macro-step to a *stage system*: a list of stage
equations

    K_i = s_i H f^{q_i}(Y_i) + s_i H L^{q_i} sum_j G_ij K_j,
    Y_i = base_i + sum_j A_ij K_j,

where ``q_i`` selects the fast (``F``), slow (``S``) or full (``P``)
right-hand side and ``base_i`` is either the step's initial value or an
intermediate fast solution.  Stages are grouped into strongly connected
components of their dependency graph; each component is one (block) linear
solve with the Jacobians frozen for the macro-step.
"""

from __future__ import annotations

import functools
import graphlib
import math
import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg.lapack import dgetrf as _getrf, dgetri as _getri
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .tableau import AssembledTableau, BaseMethod, MultirateMethod

Vector = np.ndarray
RHS = Callable[[float, Vector], Vector]
JAC_MODES = ("exact", "time_lagged", "custom")
_EPS = np.finfo(float).eps


class StepError(RuntimeError):
    """A macro-step could not be completed."""


class SingularStageError(StepError):
    pass


class UnsupportedStructureError(StepError):
    pass


# ----------------------------------------------------------------------------
# Problems


def fd_jacobian(f: RHS, t: float, y: Vector) -> np.ndarray:
    """Central finite-difference Jacobian with step ``sqrt(eps) (1 + |y_i|)``."""
    y = np.asarray(y, dtype=float)
    n = y.size
    jac = np.empty((np.asarray(f(t, y)).size, n))
    root = math.sqrt(_EPS)
    for i in range(n):
        h = root * (1.0 + abs(y[i]))
        yp = y.copy()
        ym = y.copy()
        yp[i] += h
        ym[i] -= h
        jac[:, i] = (np.asarray(f(t, yp)) - np.asarray(f(t, ym))) / (2.0 * h)
    return jac


def fd_time_derivative(f: RHS, t: float, y: Vector) -> Vector:
    h = math.sqrt(_EPS) * (1.0 + abs(t))
    return (np.asarray(f(t + h, y)) - np.asarray(f(t - h, y))) / (2.0 * h)


@dataclass(frozen=True, eq=False)
class AdditiveProblem:
    """``y' = f_slow(t, y) + f_fast(t, y)`` with Jacobian providers.

    ``jac_mode``:

    * ``exact``: providers are evaluated at the start of every macro-step;
    * ``time_lagged``: providers are evaluated at the start of the previous
      macro-step (the first step uses its own start);
    * ``custom``: providers return any approximation (W-method use); they are
      evaluated like ``exact``.

    Missing providers fall back to central finite differences.  Problems
    with ``autonomous=False`` are solved with time appended as an extra
    state variable carried by the fast partition.
    """

    dim: int
    f_slow: RHS
    f_fast: RHS
    jac_slow: Callable[[float, Vector], np.ndarray] | None = None
    jac_fast: Callable[[float, Vector], np.ndarray] | None = None
    jac_mode: str = "exact"
    dt_slow: RHS | None = None
    dt_fast: RHS | None = None
    autonomous: bool = True
    y0: Vector | None = None
    t_span: tuple[float, float] = (0.0, 1.0)
    exact: Callable[[float], Vector] | None = None
    slow_index: Sequence[int] | None = None
    fast_index: Sequence[int] | None = None
    name: str = ""

    def __post_init__(self):
        if self.jac_mode not in JAC_MODES:
            raise ValueError(f"unknown Jacobian mode {self.jac_mode!r}; expected one of {JAC_MODES}")

    def rhs(self, t: float, y: Vector) -> Vector:
        return np.asarray(self.f_slow(t, y)) + np.asarray(self.f_fast(t, y))

    def jacobian(self, part: str, t: float, y: Vector) -> np.ndarray:
        f, provider = (self.f_fast, self.jac_fast) if part == "F" else (self.f_slow, self.jac_slow)
        if provider is None:
            return fd_jacobian(f, t, y)
        return np.atleast_2d(np.asarray(provider(t, y), dtype=float))

    def time_derivative(self, part: str, t: float, y: Vector) -> Vector:
        f, provider = (self.f_fast, self.dt_fast) if part == "F" else (self.f_slow, self.dt_slow)
        if provider is None:
            return fd_time_derivative(f, t, y)
        return np.asarray(provider(t, y), dtype=float)

    def with_jac_mode(self, mode: str) -> "AdditiveProblem":
        from dataclasses import replace

        return replace(self, jac_mode=mode)

    def split_error(self, y: Vector, ref: Vector) -> tuple[float, float]:
        """Euclidean error norms over the slow and fast component groups."""
        diff = np.asarray(y) - np.asarray(ref)
        slow = np.arange(self.dim) if self.slow_index is None else np.asarray(self.slow_index)
        fast = np.arange(self.dim) if self.fast_index is None else np.asarray(self.fast_index)
        return float(np.linalg.norm(diff[slow])), float(np.linalg.norm(diff[fast]))


@dataclass(frozen=True, eq=False)
class ComponentProblem:
    """``yF' = f_fast(t, yF, yS)``, ``yS' = f_slow(t, yF, yS)``.

    ``jac(t, yF, yS)`` returns the blocks ``(L_FF, L_FS, L_SF, L_SS)``;
    ``dt(t, yF, yS)`` returns the explicit time derivatives ``(dfF/dt, dfS/dt)``.
    """

    dF: int
    dS: int
    f_fast: Callable[[float, Vector, Vector], Vector]
    f_slow: Callable[[float, Vector, Vector], Vector]
    jac: Callable[[float, Vector, Vector], tuple] | None = None
    dt: Callable[[float, Vector, Vector], tuple] | None = None
    jac_mode: str = "exact"
    autonomous: bool = True
    y0: tuple[Vector, Vector] | None = None
    t_span: tuple[float, float] = (0.0, 1.0)
    exact: Callable[[float], tuple[Vector, Vector]] | None = None
    name: str = ""

    def join(self, yF, yS) -> Vector:
        return np.concatenate([np.atleast_1d(np.asarray(yF, dtype=float)), np.atleast_1d(np.asarray(yS, dtype=float))])

    def split(self, y: Vector) -> tuple[Vector, Vector]:
        return y[: self.dF], y[self.dF:]

    def as_additive(self) -> AdditiveProblem:
        """Embed as an additive problem on ``y = [yF; yS]`` (built once per instance)."""
        return self._additive_view

    @functools.cached_property
    def _additive_view(self) -> AdditiveProblem:
        dF, dS = self.dF, self.dS
        d = dF + dS
        zF, zS = np.zeros(dF), np.zeros(dS)

        def f_fast(t, y):
            out = np.zeros(d)
            out[:dF] = self.f_fast(t, y[:dF], y[dF:])
            return out

        def f_slow(t, y):
            out = np.zeros(d)
            out[dF:] = self.f_slow(t, y[:dF], y[dF:])
            return out

        jac_fast = jac_slow = None
        if self.jac is not None:
            def blocks(t, y):
                return [np.atleast_2d(np.asarray(b, dtype=float)) for b in self.jac(t, y[:dF], y[dF:])]

            def jac_fast(t, y):
                LFF, LFS, _, _ = blocks(t, y)
                out = np.zeros((d, d))
                out[:dF, :dF] = LFF
                out[:dF, dF:] = LFS
                return out

            def jac_slow(t, y):
                _, _, LSF, LSS = blocks(t, y)
                out = np.zeros((d, d))
                out[dF:, :dF] = LSF
                out[dF:, dF:] = LSS
                return out

        dt_fast = dt_slow = None
        if self.dt is not None:
            def dt_fast(t, y):
                return np.concatenate([np.atleast_1d(self.dt(t, y[:dF], y[dF:])[0]), zS])

            def dt_slow(t, y):
                return np.concatenate([zF, np.atleast_1d(self.dt(t, y[:dF], y[dF:])[1])])

        y0 = None if self.y0 is None else self.join(*self.y0)
        exact = None if self.exact is None else (lambda t: self.join(*self.exact(t)))
        return AdditiveProblem(
            d, f_slow, f_fast, jac_slow, jac_fast, self.jac_mode, dt_slow, dt_fast,
            self.autonomous, y0, self.t_span, exact,
            slow_index=tuple(range(dF, d)), fast_index=tuple(range(dF)), name=self.name,
        )


Problem = AdditiveProblem | ComponentProblem


def _additive(prob: Problem) -> AdditiveProblem:
    return prob.as_additive() if isinstance(prob, ComponentProblem) else prob


@dataclass
class StepResult:
    y_next: Vector
    y_embedded: Vector | None = None
    stages: np.ndarray | None = None
    intermediate: list[Vector] = field(default_factory=list)
    d_fast: int | None = None

    @property
    def yF(self) -> Vector:
        if self.d_fast is None:
            raise AttributeError("not a component-mode result")
        return self.y_next[: self.d_fast]

    @property
    def yS(self) -> Vector:
        if self.d_fast is None:
            raise AttributeError("not a component-mode result")
        return self.y_next[self.d_fast:]


# ----------------------------------------------------------------------------
# Stage systems


@dataclass
class StageSystem:
    """Index-level description of one macro-step (see module docstring).

    ``base[i] = -1`` means the stage is built on the step's initial value;
    ``base[i] = m >= 0`` means on the fast solution after ``m`` completed
    micro-steps, accumulated with ``micro_weights[0..m-1]``.
    """

    parts: list[str]
    scales: np.ndarray
    A: np.ndarray
    G: np.ndarray
    weights: np.ndarray
    weights_hat: np.ndarray | None = None
    base: list[int] | None = None
    micro_weights: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    labels: list[str] | None = None

    def __post_init__(self):
        n = len(self.parts)
        if self.base is None:
            self.base = [-1] * n
        if self.labels is None:
            self.labels = [f"stage {i + 1}" for i in range(n)]
        self.arg = [(np.flatnonzero(r), r[np.flatnonzero(r)]) for r in self.A]
        self.lin = [(np.flatnonzero(r), r[np.flatnonzero(r)]) for r in self.G]
        self.schedule = self._schedule()
        self.plan = self._plan()

    @property
    def n(self) -> int:
        return len(self.parts)

    def _plan(self) -> list[tuple]:
        """Per-component work lists; components with identical implicit blocks share a signature."""
        signatures: dict[tuple, int] = {}
        plan = []
        for comp in self.schedule:
            members = set(comp)
            block = self.G[np.ix_(comp, comp)]
            key = (tuple(self.parts[i] for i in comp), tuple(self.scales[i] for i in comp), block.tobytes())
            sig = signatures.setdefault(key, len(signatures))
            stages = []
            for i in comp:
                a_idx, a_coef = self.arg[i]
                l_idx, l_coef = self.lin[i]
                keep = np.array([j not in members for j in l_idx], dtype=bool)
                l_idx, l_coef = l_idx[keep], l_coef[keep]
                # One gather serves both the stage argument (row 0) and the
                # explicit Jacobian correction (row 1).
                union = np.union1d(a_idx, l_idx).astype(int)
                coef = np.zeros((2, union.size))
                coef[0, np.searchsorted(union, a_idx)] = a_coef
                coef[1, np.searchsorted(union, l_idx)] = l_coef
                if union.size and union[-1] - union[0] + 1 == union.size:
                    union = slice(int(union[0]), int(union[-1]) + 1)  # view instead of a copy
                stages.append((i, self.base[i], union, coef, bool(a_idx.size), bool(l_idx.size),
                               self.parts[i], self.scales[i]))
            plan.append((sig, comp, block, stages))
        return plan

    def _schedule(self) -> list[list[int]]:
        n = self.n
        dep = (self.A != 0.0) | (self.G != 0.0)
        for i, m in enumerate(self.base):
            for idx, _ in self.micro_weights[: max(m, 0)]:
                dep[i, idx] = True
        np.fill_diagonal(dep, False)
        ncomp, label = connected_components(csr_matrix(dep), directed=True, connection="strong")
        comps = [np.flatnonzero(label == c).tolist() for c in range(ncomp)]
        sorter = graphlib.TopologicalSorter()
        for c, members in enumerate(comps):
            needs = {int(label[j]) for i in members for j in np.flatnonzero(dep[i])} - {c}
            sorter.add(c, *needs)
        order = list(sorter.static_order())
        for c in order:
            members = comps[c]
            if len(members) > 1:
                inner = self.A[np.ix_(members, members)]
                if inner.any():
                    names = ", ".join(self.labels[i] for i in members)
                    raise UnsupportedStructureError(
                        f"stages {names} are coupled through alpha as well as gamma; "
                        "this is a nonlinear system and cannot be solved by a linearly implicit step"
                    )
        return [comps[c] for c in order]


class _Frozen:
    """Right-hand sides and Jacobians of one macro-step, with time autonomized if needed."""

    def __init__(self, prob: AdditiveProblem, t: float, y: Vector, jac_point: tuple[float, Vector] | None,
                 parts_needed: set[str]):
        self.prob = prob
        self.auto = prob.autonomous
        self.t0 = t
        tj, yj = (t, y) if jac_point is None else jac_point
        d = prob.dim
        self.jac: dict[str, np.ndarray] = {}
        need_F = bool(parts_needed & {"F", "P"})
        need_S = bool(parts_needed & {"S", "P"})
        raw = {}
        if need_F:
            raw["F"] = self._augmented("F", tj, np.asarray(yj, dtype=float), d)
        if need_S:
            raw["S"] = self._augmented("S", tj, np.asarray(yj, dtype=float), d)
        self.jac.update(raw)
        if "P" in parts_needed:
            self.jac["P"] = raw["F"] + raw["S"]
        self._rhs = {"F": prob.f_fast, "S": prob.f_slow, "P": prob.rhs}

    def _augmented(self, part: str, t: float, y: Vector, d: int) -> np.ndarray:
        J = self.prob.jacobian(part, t, y)
        if self.auto:
            return J
        out = np.zeros((d + 1, d + 1))
        out[:d, :d] = J
        out[:d, d] = self.prob.time_derivative(part, t, y)
        return out

    def pack(self, y: Vector) -> Vector:
        y = np.asarray(y, dtype=float)
        return y.copy() if self.auto else np.append(y, self.t0)

    def unpack(self, z: Vector) -> Vector:
        return z if self.auto else z[:-1]

    def f(self, part: str, z: Vector) -> Vector:
        if self.auto:
            return self._rhs[part](self.t0, z)
        out = np.empty(z.size)
        out[:-1] = self._rhs[part](z[-1], z[:-1])
        out[-1] = 0.0 if part == "S" else 1.0
        return out


def _solve_system(system: StageSystem, fr: _Frozen, y: Vector, H: float) -> tuple[np.ndarray, list[Vector]]:
    z0 = fr.pack(y)
    dim = z0.size
    K = np.zeros((system.n, dim))
    operators: dict[int, tuple] = {}
    tilde: list[Vector] = [z0]
    done = 0  # completed micro-steps, i.e. len(tilde) - 1
    micro = system.micro_weights
    jac = fr.jac

    for sig, comp, block, stages in system.plan:
        ops = operators.get(sig)
        if ops is None:
            ops = operators[sig] = _stage_operators(system, comp, block, jac, H, dim)
        rhs = []
        for i, m, idx, coef, has_arg, has_lin, part, scale in stages:
            if m < 0:
                start = z0
            else:
                while done < m:
                    w_idx, w_coef = micro[done]
                    tilde.append(tilde[-1] + w_coef @ K[w_idx])
                    done += 1
                start = tilde[m]
            if has_arg or has_lin:
                gathered = coef @ K[idx]
                arg = start + gathered[0] if has_arg else start
            else:
                arg = start
            value = fr.f(part, arg)
            if len(comp) == 1:
                # ops = (h * inverse, h * inverse @ J)
                out = ops[0] @ value if ops[0] is not None else scale * H * value
                if has_lin:
                    out = out + ops[1] @ gathered[1]
                K[i] = out
            else:
                h = scale * H
                out = h * value
                if has_lin:
                    out = out + h * (jac[part] @ gathered[1])
                rhs.append(out)
        if len(comp) > 1:
            sol = ops[0] @ np.concatenate(rhs)
            for a, i in enumerate(comp):
                K[i] = sol[a * dim:(a + 1) * dim]
    # Complete the chain of intermediate fast solutions for diagnostics.
    while len(tilde) <= len(micro):
        w_idx, w_coef = micro[len(tilde) - 1]
        tilde.append(tilde[-1] + w_coef @ K[w_idx])
    return K, tilde


def _stage_operators(system: StageSystem, comp: list[int], block: np.ndarray, jac: dict, H: float,
                     dim: int) -> tuple:
    """Per-step linear operators of a stage component.

    Single stages get ``(h (I - h g L)^-1, h (I - h g L)^-1 L)`` (the first entry is
    ``None`` for explicit stages, whose second entry is ``h L``); coupled
    blocks get the inverse of the full block matrix.
    """
    if len(comp) == 1:
        i = comp[0]
        h = system.scales[i] * H
        L = jac[system.parts[i]]
        inv = _block_inverse(system, comp, block, jac, H, dim)
        if inv is None:
            return None, h * L
        return h * inv, h * (inv @ L)
    return (_block_inverse(system, comp, block, jac, H, dim),)


def _block_inverse(system: StageSystem, comp: list[int], block: np.ndarray, jac: dict, H: float,
                   dim: int) -> np.ndarray | None:
    if len(comp) == 1 and not block.any():
        return None
    m = len(comp)
    mat = np.eye(m * dim)
    for a, i in enumerate(comp):
        for b_ in range(m):
            if block[a, b_] != 0.0:
                mat[a * dim:(a + 1) * dim, b_ * dim:(b_ + 1) * dim] -= (
                    system.scales[i] * H * block[a, b_] * jac[system.parts[i]]
                )
    return _checked_inverse(mat, [system.labels[i] for i in comp], [system.G[i, i] for i in comp])


def _checked_inverse(mat: np.ndarray, labels: list[str], diag_gamma: list[float]) -> np.ndarray:
    # Raw LAPACK calls: the scipy wrappers cost more than the factorization
    # itself at these sizes and warn on exact zero pivots.
    lu, piv, info = _getrf(mat)
    threshold = _EPS * np.max(np.abs(mat)) * mat.shape[0]
    if info > 0 or np.min(np.abs(np.diag(lu))) <= threshold:
        detail = ", ".join(f"{name} (gamma_ii = {g:.17g})" for name, g in zip(labels, diag_gamma))
        raise SingularStageError(f"singular stage matrix for {detail}")
    inv, info = _getri(lu, piv)
    if info != 0:
        raise SingularStageError("stage matrix inversion failed")
    return inv


# ----------------------------------------------------------------------------
# Stage-system builders


def multirate_system(mrm: MultirateMethod) -> StageSystem:
    """Micro-step form: fast stages of micro-step ``l`` start from the ``(l-1)``-th intermediate solution."""
    if mrm.flavor == "spc":
        return spc_system(mrm)
    M, sF, sS = mrm.M, mrm.sF, mrm.sS
    n = M * sF + sS
    A = np.zeros((n, n))
    G = np.zeros((n, n))
    w = np.zeros(n)
    w_hat = np.zeros(n) if mrm.has_embedded else None
    parts, scales, base, labels, micro = [], [], [], [], []
    slow = slice(M * sF, n)
    cs = mrm.coupling
    for lam, fast in enumerate(mrm.fast_steps):
        blk = slice(lam * sF, (lam + 1) * sF)
        A[blk, blk] = fast.alpha
        G[blk, blk] = fast.gamma
        A[blk, slow] = cs.alpha_fs[lam]
        G[blk, slow] = cs.gamma_fs[lam]
        A[slow, blk] = cs.alpha_sf[lam]
        G[slow, blk] = cs.gamma_sf[lam]
        w[blk] = fast.b
        if w_hat is not None:
            w_hat[blk] = fast.b_hat
        idx = np.arange(lam * sF, (lam + 1) * sF)
        micro.append((idx[fast.b != 0.0], fast.b[fast.b != 0.0]))
        parts += ["F"] * sF
        scales += [mrm.fractions[lam]] * sF
        base += [lam] * sF
        labels += [f"fast stage {i + 1} of micro-step {lam + 1}" for i in range(sF)]
    A[slow, slow] = mrm.slow.alpha
    G[slow, slow] = mrm.slow.gamma
    w[slow] = mrm.slow.b
    if w_hat is not None:
        w_hat[slow] = mrm.slow.b_hat
    parts += ["S"] * sS
    scales += [1.0] * sS
    base += [-1] * sS
    labels += [f"slow stage {i + 1}" for i in range(sS)]
    return StageSystem(parts, np.array(scales), A, G, w, w_hat, base, micro, labels)


def spc_system(mrm: MultirateMethod) -> StageSystem:
    """Predictor on the full system, explicit slow-stage extraction, then fast corrector micro-steps."""
    M, sF, sS = mrm.M, mrm.sF, mrm.sS
    slow_m = mrm.slow
    nP = sS
    nC = M * sF
    n = nP + sS + nC
    A = np.zeros((n, n))
    G = np.zeros((n, n))
    w = np.zeros(n)
    w_hat = np.zeros(n) if mrm.has_embedded else None
    pred = slice(0, nP)
    slow = slice(nP, nP + sS)
    A[pred, pred] = slow_m.alpha
    G[pred, pred] = slow_m.gamma
    A[slow, pred] = slow_m.alpha
    G[slow, pred] = slow_m.gamma
    w[slow] = slow_m.b
    if w_hat is not None:
        w_hat[slow] = slow_m.b_hat
    parts = ["P"] * nP + ["S"] * sS
    scales = [1.0] * (nP + sS)
    base = [-1] * (nP + sS)
    labels = [f"predictor stage {i + 1}" for i in range(nP)] + [f"slow stage {i + 1}" for i in range(sS)]
    micro = []
    cs = mrm.coupling
    for lam, fast in enumerate(mrm.fast_steps):
        off = nP + sS + lam * sF
        blk = slice(off, off + sF)
        A[blk, blk] = fast.alpha
        G[blk, blk] = fast.gamma
        A[blk, slow] = cs.alpha_fs[lam]
        G[blk, slow] = cs.gamma_fs[lam]
        w[blk] = fast.b
        if w_hat is not None:
            w_hat[blk] = fast.b_hat
        idx = np.arange(off, off + sF)
        micro.append((idx[fast.b != 0.0], fast.b[fast.b != 0.0]))
        parts += ["F"] * sF
        scales += [mrm.fractions[lam]] * sF
        base += [lam] * sF
        labels += [f"fast stage {i + 1} of micro-step {lam + 1}" for i in range(sF)]
    return StageSystem(parts, np.array(scales), A, G, w, w_hat, base, micro, labels)


def tableau_system(tab: AssembledTableau) -> StageSystem:
    """Monolithic form: every stage built on the initial value with step ``H``."""
    labels = [f"{'fast' if p == 'F' else 'slow'} stage {i + 1} (assembled)" for i, p in enumerate(tab.partition)]
    return StageSystem(list(tab.partition), np.ones(tab.s), np.array(tab.A), np.array(tab.G),
                       np.array(tab.b), None if tab.b_hat is None else np.array(tab.b_hat), labels=labels)


def base_system(base: BaseMethod, part: str = "P") -> StageSystem:
    """Single-rate Rosenbrock step; ``part`` selects the full (``P``), fast or slow right-hand side."""
    return StageSystem([part] * base.s, np.ones(base.s), np.array(base.alpha), np.array(base.gamma),
                       np.array(base.b), None if base.b_hat is None else np.array(base.b_hat))


# ----------------------------------------------------------------------------
# Steppers


class Stepper:
    """Reusable macro-step driver for one stage system.

    Factorizations are cached per macro-step (Jacobians change between
    steps); the schedule is computed once.
    """

    def __init__(self, system: StageSystem, d_fast: int | None = None):
        self.system = system
        self.d_fast = d_fast
        self.parts_needed = set(system.parts)

    def __call__(self, prob: Problem, t: float, y: Vector, H: float,
                 jacobian_at: tuple[float, Vector] | None = None) -> StepResult:
        if not H > 0.0:
            raise ValueError("step size must be positive")
        add = _additive(prob)
        y = np.asarray(y, dtype=float)
        if add.jac_mode != "time_lagged":
            jacobian_at = None
        fr = _Frozen(add, t, y, jacobian_at, self.parts_needed)
        K, tilde = _solve_system(self.system, fr, y, H)
        sysm = self.system
        z0 = fr.pack(y)
        y_next = fr.unpack(z0 + sysm.weights @ K)
        y_hat = None if sysm.weights_hat is None else fr.unpack(z0 + sysm.weights_hat @ K)
        d_fast = prob.dF if isinstance(prob, ComponentProblem) else None
        return StepResult(y_next, y_hat, K, [fr.unpack(v) for v in tilde[1:]], d_fast)


_STEPPERS: "weakref.WeakKeyDictionary[object, Stepper]" = weakref.WeakKeyDictionary()


def stepper_for(method: MultirateMethod | AssembledTableau | BaseMethod) -> Stepper:
    """Cached :class:`Stepper` for a multirate method, an assembled tableau or a base method."""
    st = _STEPPERS.get(method)
    if st is None:
        if isinstance(method, MultirateMethod):
            st = Stepper(multirate_system(method))
        elif isinstance(method, AssembledTableau):
            st = Stepper(tableau_system(method))
        elif isinstance(method, BaseMethod):
            st = Stepper(base_system(method))
        else:
            raise TypeError(f"cannot build a stepper for {type(method).__name__}")
        _STEPPERS[method] = st
    return st


def step_additive(mrm: MultirateMethod, prob: AdditiveProblem, t: float, y: Vector, H: float,
                  jacobian_at: tuple[float, Vector] | None = None) -> StepResult:
    """One macro-step of a multirate method on an additively split problem."""
    return stepper_for(mrm)(prob, t, y, H, jacobian_at)


def step_component(mrm: MultirateMethod, prob: ComponentProblem, t: float, yF: Vector, yS: Vector, H: float,
                   jacobian_at: tuple[float, Vector] | None = None) -> StepResult:
    """One macro-step on a component-split problem; the result exposes ``yF`` and ``yS``."""
    return stepper_for(mrm)(prob, t, prob.join(yF, yS), H, jacobian_at)


def step_spc(mrm: MultirateMethod, prob: Problem, t: float, y: Vector, H: float,
             jacobian_at: tuple[float, Vector] | None = None) -> StepResult:
    if mrm.flavor != "spc":
        raise ValueError(f"step_spc needs an SPC method, got flavor {mrm.flavor!r}")
    return stepper_for(mrm)(prob, t, y, H, jacobian_at)


def step_monolithic(tab: AssembledTableau, prob: Problem, t: float, y: Vector, H: float,
                    jacobian_at: tuple[float, Vector] | None = None) -> StepResult:
    """One step of the assembled tableau treated as a single GARK-ROS method with step ``H``."""
    return stepper_for(tab)(prob, t, y, H, jacobian_at)


def step_base(base: BaseMethod, prob: Problem, t: float, y: Vector, H: float, part: str = "P",
              jacobian_at: tuple[float, Vector] | None = None) -> StepResult:
    """Single-rate Rosenbrock step on the full right-hand side (or on one partition)."""
    st = stepper_for(base) if part == "P" else Stepper(base_system(base, part))
    return st(prob, t, y, H, jacobian_at)


# ----------------------------------------------------------------------------
# Fixed-step driver


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray | None
    y_final: Vector
    y_embedded: Vector | None = None
    steps: int = 0


StepFunction = Callable[..., StepResult]


def _as_step(method) -> StepFunction:
    if isinstance(method, (MultirateMethod, AssembledTableau, BaseMethod)):
        return stepper_for(method)
    if callable(method):
        return method
    raise TypeError(f"unsupported method object {method!r}")


def integrate(method, prob: Problem, t0: float, tend: float, H: float, y0: Vector | None = None,
              keep: bool = False) -> Trajectory:
    """Fixed macro-step integration from ``t0`` to ``tend``.

    The embedded result (when available) is the final solution plus the sum
    of the per-step differences between embedded and main updates, so its
    global error reflects the embedded method's order.
    """
    n_float = (tend - t0) / H
    n = int(round(n_float))
    if n < 1 or abs(n_float - n) > 0.5 * np.spacing(n_float) + 1e-9 * n:
        raise ValueError(f"(tend - t0)/H = {n_float!r} is not an integer number of steps")
    step = _as_step(method)
    if y0 is None:
        add = _additive(prob)
        if add.y0 is None:
            raise ValueError("no initial value given")
        y0 = add.y0
    y = np.asarray(y0, dtype=float).copy()
    embedded_shift = None
    times = t0 + H * np.arange(n + 1)
    states = [y.copy()] if keep else None
    prev: tuple[float, Vector] | None = None
    for k in range(n):
        t = float(times[k])
        try:
            res = step(prob, t, y, H, jacobian_at=prev)
        except StepError as exc:
            raise StepError(f"step {k} (t = {t:.17g}) failed: {exc}") from exc
        if res.y_embedded is not None:
            diff = res.y_embedded - res.y_next
            embedded_shift = diff if embedded_shift is None else embedded_shift + diff
        prev = (t, y)
        y = res.y_next
        if keep:
            states.append(y.copy())
    y_emb = None if embedded_shift is None else y + embedded_shift
    return Trajectory(times, None if states is None else np.array(states), y, y_emb, n)


def reference_solve(prob: Problem, t0: float, tend: float, tol: float = 1e-10,
                    base: BaseMethod | None = None, initial_steps: int = 16, y0: Vector | None = None) -> Vector:
    """High-accuracy final state by repeated halving of a single-rate Rosenbrock solve."""
    if tol < 1e-13:
        raise ValueError("tolerance below 1e-13 is not attainable in double precision")
    if base is None:
        from .methods import ros34pw2

        base = ros34pw2()
    steps = initial_steps
    prev = integrate(base, prob, t0, tend, (tend - t0) / steps, y0=y0).y_final
    for _ in range(20):
        steps *= 2
        cur = integrate(base, prob, t0, tend, (tend - t0) / steps, y0=y0).y_final
        if np.linalg.norm(cur - prev) <= tol * max(1.0, np.linalg.norm(cur)):
            return cur
        prev = cur
    raise StepError("reference solution did not converge after 20 halvings")
