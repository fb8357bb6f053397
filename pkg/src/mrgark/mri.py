"""Multirate infinitesimal-step Rosenbrock methods.

Two families are provided:

* MRI methods: between consecutive slow abscissae the fast part is advanced
  by a modified fast ODE whose forcing is a polynomial-in-time combination of
  the slow stages; slow stages see the fast progress through ``q``.
* SPC-MRI methods: a compound predictor step yields the slow stages, after
  which one modified fast ODE over the whole macro-step acts as corrector.

Both are "infinitesimal" in that the fast ODE may be solved by any explicit
Runge-Kutta method with any number of substeps.  Solving it with ``n``
substeps of an explicit scheme is algebraically a multirate GARK method,
which :func:`mri_as_imex` and :func:`spc_mri_as_spc` construct explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .integrator import StepResult, Vector, _additive, _checked_inverse, _Frozen
from .methods import classical_rk4, ros34pw2
from .order_conditions import DEFAULT_TOL, ConditionEntry, ConditionReport, check_base_ros
from .tableau import BaseMethod, MultirateMethod, TableauError, compose_substeps

DEFAULT_SUBSTEPS = 20
_CONSISTENCY_TOL = 1e-12


def _require_explicit(inner: BaseMethod) -> None:
    if not inner.is_explicit:
        raise TableauError(f"inner method {inner.name or '(unnamed)'} must be explicit (gamma = 0)")


def _poly_rows(coefs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``sum_k x**k outer coefs[k]``: rows are the polynomial evaluated at each ``x``."""
    powers = np.vander(np.atleast_1d(x), coefs.shape[0], increasing=True)
    return powers @ coefs


# ----------------------------------------------------------------------------
# MRI-GARK-ROS/ROW


@dataclass(frozen=True, eq=False)
class MriCoupling:
    """Slow base scheme plus the fast/slow coupling polynomials.

    ``r[l, k, j]`` is the coefficient of ``theta**k`` multiplying slow stage
    ``j`` in the fast ODE of interval ``l`` (all zero-based); it must vanish
    for ``j >= l``.  ``q[i, l]`` weights the fast increment of interval
    ``l`` in slow stage ``i`` and must vanish for ``l > i``.

    Construction enforces the polynomial consistency relations.  The
    relation ``q @ delta_c = g`` is only reported (see
    :meth:`consistency_defects`): it cannot hold when the first slow stage
    has a nonzero diagonal ``gamma``, because the first interval is empty.
    """

    slow: BaseMethod
    r: np.ndarray
    q: np.ndarray
    name: str = ""
    delta_c: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s = self.slow.s
        r = np.array(self.r, dtype=float)
        q = np.array(self.q, dtype=float)
        if r.ndim != 3 or r.shape[0] != s or r.shape[2] != s:
            raise TableauError(f"r must have shape ({s}, degree+1, {s}), got {r.shape}")
        if q.shape != (s, s):
            raise TableauError(f"q must have shape ({s}, {s}), got {q.shape}")
        c = self.slow.c
        if np.any(np.diff(c) < 0.0):
            raise TableauError(f"slow abscissae must be non-decreasing, got {c.tolist()}")
        if abs(c[-1] - 1.0) > _CONSISTENCY_TOL:
            raise TableauError("the last slow abscissa must be 1 so that the fast solution reaches the step end")
        for lam in range(s):
            if np.any(r[lam, :, lam:] != 0.0):
                raise TableauError(f"fast interval {lam + 1} may only use slow stages 1..{lam}")
        if np.any(np.triu(q, 1) != 0.0):
            raise TableauError("slow stage i may only use fast increments of intervals 1..i")
        delta_c = np.diff(np.concatenate([[0.0], c]))
        for arr in (r, q, delta_c):
            arr.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "delta_c", delta_c)
        r_defect = self.consistency_defects()["r.sum"]
        if r_defect > _CONSISTENCY_TOL:
            raise TableauError(f"MRI coupling polynomials are not internally consistent (defect {r_defect:.3g})")

    @property
    def s(self) -> int:
        return self.slow.s

    @property
    def c_prev(self) -> np.ndarray:
        return np.concatenate([[0.0], self.slow.c[:-1]])

    def consistency_defects(self) -> dict[str, float]:
        sums = self.r.sum(axis=2)  # (s, degree+1)
        target = np.zeros_like(sums)
        target[:, 0] = self.c_prev
        if target.shape[1] > 1:
            target[:, 1] = self.delta_c
        elif np.any(self.delta_c != 0.0):
            # Degree zero cannot reproduce the time drift across an interval.
            return {"r.sum": float(np.max(np.abs(self.delta_c))),
                    "q.delta_c": float(np.max(np.abs(self.q @ self.delta_c - self.slow.g)))}
        return {
            "r.sum": float(np.max(np.abs(sums - target))),
            "q.delta_c": float(np.max(np.abs(self.q @ self.delta_c - self.slow.g))),
        }

    def r_bar(self) -> np.ndarray:
        """Rows ``sum_k r[l, k] / (k + 1)``: interval averages of the coupling polynomials."""
        k = np.arange(self.r.shape[1])
        return np.einsum("lkj,k->lj", self.r, 1.0 / (k + 1.0))

    def r_of(self, lam: int, x) -> np.ndarray:
        """Coupling row(s) of interval ``lam`` (zero-based) at normalized times ``x``."""
        return _poly_rows(self.r[lam], x)


def mri_linear_coupling(slow: BaseMethod, name: str = "") -> MriCoupling:
    """Minimum-norm linear-in-time coupling meeting consistency and the order-3 ROW conditions.

    The unknowns are the constant and linear coefficients of each interval's
    polynomial and the lower triangle of ``q``; the constraints are linear.
    """
    s = slow.s
    c, g, b = slow.c, slow.g, slow.b
    c_prev = np.concatenate([[0.0], c[:-1]])
    dc = c - c_prev
    r_slots = [(lam, k, j) for lam in range(s) for k in range(2) for j in range(lam)]
    q_slots = [(i, l) for i in range(s) for l in range(i + 1)]
    nr = len(r_slots)
    n = nr + len(q_slots)
    rows, rhs = [], []

    def row():
        rows.append(np.zeros(n))
        return rows[-1]

    for lam in range(s):
        for k, target in ((0, c_prev[lam]), (1, dc[lam])):
            v = row()
            for idx, (l2, k2, _) in enumerate(r_slots):
                if l2 == lam and k2 == k:
                    v[idx] = 1.0
            rhs.append(target)
    for i in range(s):
        v = row()
        for idx, (i2, l) in enumerate(q_slots):
            if i2 == i:
                v[nr + idx] = dc[l]
        rhs.append(g[i])
    v = row()
    d_sq = c**2 - c_prev**2
    for idx, (i, l) in enumerate(q_slots):
        v[nr + idx] = b[i] * d_sq[l]
    rhs.append(0.0)
    for vec, target in ((c, 1.0 / 6.0), (g, 0.0)):
        v = row()
        for idx, (lam, k, j) in enumerate(r_slots):
            v[idx] = dc[lam] * vec[j] / (k + 1.0)
        rhs.append(target)
    mat = np.array(rows)
    sol, *_ = np.linalg.lstsq(mat, np.array(rhs), rcond=None)
    if np.max(np.abs(mat @ sol - rhs)) > 1e-12:
        hint = " (the first slow stage has a nonzero diagonal gamma)" if slow.gamma[0, 0] != 0.0 else ""
        raise TableauError(f"no consistent order-3 MRI coupling exists for {slow.name or 'this base'}{hint}")
    r = np.zeros((s, 2, s))
    for (lam, k, j), val in zip(r_slots, sol[:nr]):
        r[lam, k, j] = val
    q = np.zeros((s, s))
    for (i, l), val in zip(q_slots, sol[nr:]):
        q[i, l] = val
    return MriCoupling(slow, r, q, name=name or f"mri-linear({slow.name})")


def mri_as_imex(coupling: MriCoupling, inner: BaseMethod | None = None) -> MultirateMethod:
    """The multirate method obtained by one step of ``inner`` per slow interval."""
    inner = classical_rk4() if inner is None else inner
    _require_explicit(inner)
    s = coupling.s
    sF = inner.s
    alpha_fs = [coupling.r_of(lam, inner.c) for lam in range(s)]
    gamma_fs = [np.zeros((sF, s))] * s
    alpha_sf, gamma_sf = [], []
    for lam in range(s):
        p = np.zeros(s)
        p[lam:] = 1.0
        alpha_sf.append(np.outer(p, inner.b))
        gamma_sf.append(np.outer(coupling.q[:, lam], inner.b))
    return MultirateMethod.build(
        coupling.slow, [inner] * s, alpha_fs, gamma_fs, alpha_sf, gamma_sf,
        M=s, flavor="imex", fractions=coupling.delta_c,
        name=f"{coupling.name or 'mri'}[{inner.name or 'inner'}]",
    )


def _integrate_fast(fr: _Frozen, v: Vector, H: float, rate: float, shift, inner: BaseMethod,
                    substeps: int, linear=None) -> Vector:
    """Explicit RK on ``v' = rate * f_fast(v + shift(x)) [+ L_fast linear(x)]``, ``x = theta / H``."""
    h = H / substeps
    alpha, b, c = inner.alpha, inner.b, inner.c
    jac = fr.jac["F"] if linear is not None else None
    k = np.zeros((inner.s, v.size))
    for m in range(substeps):
        for i in range(inner.s):
            x = (m + c[i]) / substeps
            arg = v + alpha[i, :i] @ k[:i] + shift(x)
            val = fr.f("F", arg)
            if linear is not None:
                val = val + jac @ linear(x)
            k[i] = h * rate * val
        v = v + b @ k
    return v


def mri_step(coupling: MriCoupling, prob, t: float, y: Vector, H: float, inner: BaseMethod | None = None,
             substeps: int = DEFAULT_SUBSTEPS, jacobian_at: tuple[float, Vector] | None = None) -> StepResult:
    """One macro-step: fast ODE on each slow interval, then the slow stage it unlocks."""
    inner = classical_rk4() if inner is None else inner
    _require_explicit(inner)
    if substeps < 1:
        raise ValueError("substeps must be positive")
    add = _additive(prob)
    if add.jac_mode != "time_lagged":
        jacobian_at = None
    fr = _Frozen(add, t, np.asarray(y, dtype=float), jacobian_at, {"F", "S"})
    slow = coupling.slow
    s = slow.s
    z0 = fr.pack(y)
    dim = z0.size
    kS = np.zeros((s, dim))
    tilde = [z0]
    LS = fr.jac["S"]
    eye = np.eye(dim)
    for lam in range(s):
        v = tilde[-1]
        dc = coupling.delta_c[lam]
        if dc != 0.0:
            rows = coupling.r[lam]

            def shift(x, rows=rows):
                return _poly_rows(rows, x)[0] @ kS

            v = _integrate_fast(fr, v, H, dc, shift, inner, substeps)
        tilde.append(v)
        arg = v + slow.alpha[lam, :lam] @ kS[:lam]
        increments = np.diff(np.array(tilde), axis=0)
        lin = coupling.q[lam, : lam + 1] @ increments + slow.gamma[lam, :lam] @ kS[:lam]
        rhs = H * fr.f("S", arg) + H * (LS @ lin)
        g_ii = slow.gamma[lam, lam]
        if g_ii == 0.0:
            kS[lam] = rhs
        else:
            inv = _checked_inverse(eye - H * g_ii * LS, [f"slow stage {lam + 1}"], [g_ii])
            kS[lam] = inv @ rhs
    y_next = fr.unpack(tilde[-1] + slow.b @ kS)
    y_hat = None if slow.b_hat is None else fr.unpack(tilde[-1] + slow.b_hat @ kS)
    return StepResult(y_next, y_hat, kS, [fr.unpack(v) for v in tilde[1:]])


def check_mri_order3(coupling: MriCoupling, mode: str = "ros", tol: float = DEFAULT_TOL) -> ConditionReport:
    """Slow base order 3, internal consistency and the order-3 MRI coupling conditions."""
    if mode not in ("ros", "row"):
        raise ValueError(f"mode must be 'ros' or 'row', got {mode!r}")
    slow = coupling.slow
    report = ConditionReport([], 3, tol)
    report.extend(check_base_ros(slow, 3, mode, tol), "slow.")
    for key, defect in coupling.consistency_defects().items():
        report.entries.append(ConditionEntry(f"ic.{key}", 1, 0.0, defect, defect))
    c_prev = coupling.c_prev
    dc = coupling.delta_c
    weighted = dc @ coupling.r_bar()  # sum_l dc_l rbar_l
    q_term = float(slow.b @ coupling.q @ (slow.c**2 - c_prev**2))

    def add(cid, value, target):
        report.entries.append(ConditionEntry(cid, 3, target, value, value - target))

    add(f"mri.{mode}3.q", q_term, 0.0)
    if mode == "ros":
        add("mri.ros3.r", float(weighted @ slow.e), 1.0 / 6.0)
    else:
        add("mri.row3.rc", float(weighted @ slow.c), 1.0 / 6.0)
        add("mri.row3.rg", float(weighted @ slow.g), 0.0)
    return report


# ----------------------------------------------------------------------------
# SPC-MRI


@dataclass(frozen=True, eq=False)
class SpcMriCoupling:
    """Slow base scheme plus the corrector polynomials ``mu(x) = sum_k mu[k] x**k`` (and ``nu``)."""

    slow: BaseMethod
    mu: np.ndarray
    nu: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        s = self.slow.s
        mu = np.atleast_2d(np.array(self.mu, dtype=float))
        if mu.shape[1] != s:
            raise TableauError(f"mu coefficients must have {s} entries, got shape {mu.shape}")
        nu = np.zeros((1, s)) if self.nu is None else np.atleast_2d(np.array(self.nu, dtype=float))
        if nu.shape[1] != s:
            raise TableauError(f"nu coefficients must have {s} entries, got shape {nu.shape}")
        mu.setflags(write=False)
        nu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)
        defects = self.consistency_defects()
        if max(defects.values()) > _CONSISTENCY_TOL:
            bad = ", ".join(f"{k} = {v:.3g}" for k, v in defects.items() if v > _CONSISTENCY_TOL)
            raise TableauError(f"SPC-MRI coupling is not internally consistent: {bad}")

    def consistency_defects(self) -> dict[str, float]:
        sums = self.mu.sum(axis=1)
        target = np.zeros_like(sums)
        if target.size > 1:
            target[1] = 1.0
        else:
            return {"mu.sum": 1.0, "nu.sum": float(np.max(np.abs(self.nu.sum(axis=1))))}
        return {"mu.sum": float(np.max(np.abs(sums - target))),
                "nu.sum": float(np.max(np.abs(self.nu.sum(axis=1))))}

    def mu_bar(self) -> np.ndarray:
        k = np.arange(self.mu.shape[0])
        return (1.0 / (k + 1.0)) @ self.mu

    def mu_of(self, x) -> np.ndarray:
        return _poly_rows(self.mu, x)

    def nu_of(self, x) -> np.ndarray:
        return _poly_rows(self.nu, x)


def spc_mri_as_spc(coupling: SpcMriCoupling, inner: BaseMethod | None = None,
                   substeps: int = 1) -> MultirateMethod:
    """SPC multirate method equal to solving the corrector ODE with ``substeps`` steps of ``inner``."""
    inner = classical_rk4() if inner is None else inner
    _require_explicit(inner)
    fast = compose_substeps(inner, substeps)
    return MultirateMethod.build(
        coupling.slow, [fast], [coupling.mu_of(fast.c)], [coupling.nu_of(fast.c)],
        [np.zeros((coupling.slow.s, fast.s))], [np.zeros((coupling.slow.s, fast.s))],
        M=1, flavor="spc", name=f"{coupling.name or 'spc-mri'}[{fast.name or 'inner'}]",
    )


def spc_mri_step(coupling: SpcMriCoupling, prob, t: float, y: Vector, H: float, inner: BaseMethod | None = None,
                 substeps: int = DEFAULT_SUBSTEPS, jacobian_at: tuple[float, Vector] | None = None) -> StepResult:
    """Compound predictor, slow-stage extraction, then the corrector fast ODE over ``[0, H]``."""
    inner = classical_rk4() if inner is None else inner
    _require_explicit(inner)
    if substeps < 1:
        raise ValueError("substeps must be positive")
    add = _additive(prob)
    if add.jac_mode != "time_lagged":
        jacobian_at = None
    fr = _Frozen(add, t, np.asarray(y, dtype=float), jacobian_at, {"F", "S", "P"})
    slow = coupling.slow
    s = slow.s
    z0 = fr.pack(y)
    dim = z0.size
    eye = np.eye(dim)
    LP, LS = fr.jac["P"], fr.jac["S"]
    kP = np.zeros((s, dim))
    kS = np.zeros((s, dim))
    for i in range(s):
        arg = z0 + slow.alpha[i, :i] @ kP[:i]
        rhs = H * fr.f("P", arg) + H * (LP @ (slow.gamma[i, :i] @ kP[:i]))
        g_ii = slow.gamma[i, i]
        if g_ii == 0.0:
            kP[i] = rhs
        else:
            kP[i] = _checked_inverse(eye - H * g_ii * LP, [f"predictor stage {i + 1}"], [g_ii]) @ rhs
        kS[i] = H * fr.f("S", arg) + H * (LS @ (slow.gamma[i, : i + 1] @ kP[: i + 1]))

    def shift(x):
        return coupling.mu_of(x)[0] @ kS

    linear = None
    if np.any(coupling.nu != 0.0):
        def linear(x):
            return coupling.nu_of(x)[0] @ kS

    v = _integrate_fast(fr, z0, H, 1.0, shift, inner, substeps, linear)
    y_next = fr.unpack(v + slow.b @ kS)
    y_hat = None if slow.b_hat is None else fr.unpack(v + slow.b_hat @ kS)
    return StepResult(y_next, y_hat, np.vstack([kP, kS]), [fr.unpack(v)])


_ROS34PW2_MU1 = (
    (0.0, 1.0),
    (-4.307016638790922, 8.289196835086212),
    (4.541816529634874, -7.686572272599903),
    (0.7652001091560487, -1.602624562486310),
)


def ros34pw2_spc_mri(theta: float = 0.0) -> SpcMriCoupling:
    """Linear-in-time third-order (ROW) corrector coupling for ROS34PW2 with one free parameter."""
    mu1 = np.array([const + slope * theta for const, slope in _ROS34PW2_MU1])
    return SpcMriCoupling(ros34pw2(), np.vstack([np.zeros(4), mu1]), name=f"ros34pw2-spc-mri(theta={theta:g})")


def rodas_spc_mri(theta1: float, theta2: float, theta3: float, theta4: float,
                  rodas_base: BaseMethod) -> SpcMriCoupling:
    """Fourth-order linear-in-time corrector coupling for a six-stage Rodas base (four free parameters)."""
    if rodas_base.s != 6:
        raise TableauError(f"the Rodas coupling needs a six-stage base, got {rodas_base.s} stages")
    t1, t2, t3, t4 = theta1, theta2, theta3, theta4
    mu0 = np.array([
        t1,
        t2,
        -1.923968128204745 * t1 + 2.446324727549974e-01 * t2 + 4.509689603795104e-02,
        1.405229246707428 * t1 - 2.181782847233643 * t2 + 1.289372580090594e-01,
        -4.812611185026834e-01 * t1 + 9.371503744786454e-01 * t2 - 1.740341540470105e-01 - t3,
        t3,
    ])
    mu1 = np.array([
        -2.0 * t1 + 4.061438468864431e-01,
        -2.0 * t2 + 5.932358823451654e-01,
        3.847936256409489 * t1 - 4.892649455099948e-01 * t2 - 3.657016798231872e-01,
        -2.810458493414855 * t1 + 4.363565694467286 * t2 + 5.003688760525202e-02,
        9.625222370053667e-01 * t1 - 1.874300748957291 * t2 + 3.162850629863266e-01 - t4,
        t4,
    ])
    return SpcMriCoupling(rodas_base, np.vstack([mu0, mu1]),
                          name=f"rodas-spc-mri({t1:g},{t2:g},{t3:g},{t4:g})")


def rodas_linear_conditions(coupling: SpcMriCoupling) -> ConditionReport:
    """The six linear relations defining the fourth-order linear-in-time coupling."""
    if coupling.mu.shape[0] > 2:
        raise ValueError("the linear-in-time relations need a coupling of degree at most one")
    mu = np.zeros((2, coupling.slow.s))
    mu[: coupling.mu.shape[0]] = coupling.mu
    S = coupling.slow
    ones = np.ones(S.s)
    half = mu[0] + 0.5 * mu[1]
    rows = [
        ("lin.mu0.sum", mu[0] @ ones, 0.0),
        ("lin.mu1.sum", mu[1] @ ones, 1.0),
        ("lin.mu0.e", mu[0] @ S.e, -1.0 / 12.0),
        ("lin.mu1.e", mu[1] @ S.e, 0.5),
        ("lin.c2", half @ S.c**2, 1.0 / 12.0),
        ("lin.beta_e", half @ S.beta @ S.e, 1.0 / 24.0),
    ]
    return ConditionReport([ConditionEntry(cid, 4, tgt, float(v), float(v) - tgt) for cid, v, tgt in rows], 4,
                           DEFAULT_TOL)


def check_spc_mri(coupling: SpcMriCoupling, order: int = 3, mode: str = "ros",
                  tol: float = DEFAULT_TOL) -> ConditionReport:
    """Slow base conditions, corrector consistency and the SPC-MRI coupling conditions."""
    if order not in (3, 4):
        raise ValueError("order must be 3 or 4")
    if mode not in ("ros", "row"):
        raise ValueError(f"mode must be 'ros' or 'row', got {mode!r}")
    if order == 4 and mode == "row":
        raise ValueError("order-4 ROW coupling conditions are not tabulated; use check_generic_gark on "
                         "assemble_gark(spc_mri_as_spc(...))")
    S = coupling.slow
    report = ConditionReport([], order, tol)
    report.extend(check_base_ros(S, order, mode, tol), "slow.")
    for key, defect in coupling.consistency_defects().items():
        report.entries.append(ConditionEntry(f"ic.{key}", 1, 0.0, defect, defect))
    mu = coupling.mu
    k = np.arange(mu.shape[0])
    mu_bar = coupling.mu_bar()

    def add(cid, o, value, target):
        report.entries.append(ConditionEntry(cid, o, target, float(value), float(value) - target))

    if mode == "ros":
        add("spc_mri.ros3", 3, mu_bar @ S.e, 1.0 / 6.0)
    else:
        add("spc_mri.row3.c", 3, mu_bar @ S.c, 1.0 / 6.0)
        add("spc_mri.row3.g", 3, mu_bar @ S.g, 0.0)
        nu_bar = (1.0 / (np.arange(coupling.nu.shape[0]) + 1.0)) @ coupling.nu
        add("spc_mri.row3.nu_c", 3, nu_bar @ S.c, 0.0)
        add("spc_mri.row3.nu_g", 3, nu_bar @ S.g, 0.0)
    if order == 4:
        mu_e = mu @ S.e
        add("spc_mri.ros4.a", 4, np.sum(mu_e / (k + 2.0)), 1.0 / 8.0)
        add("spc_mri.ros4.b", 4, mu_bar @ S.c**2, 1.0 / 12.0)
        add("spc_mri.ros4.c", 4, np.sum(mu_e / ((k + 1.0) * (k + 2.0))), 1.0 / 24.0)
        add("spc_mri.ros4.d", 4, mu_bar @ S.beta @ S.e, 1.0 / 24.0)
    return report
