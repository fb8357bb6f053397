"""Concrete coefficient sets and coupling recipes.

Every constructor returns immutable :class:`~mrgark.tableau.BaseMethod` or
:class:`~mrgark.tableau.MultirateMethod` objects built from closed-form
expressions.  The named registry at the bottom maps CLI method names to
constructors.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .tableau import BaseMethod, MultirateMethod, TableauError, load_base_method

_IC_TOL = 1e-12


# ----------------------------------------------------------------------------
# Base methods


def ros34pw2() -> BaseMethod:
    """Four-stage, third-order, stiffly accurate Rosenbrock-W method with an order-2 embedding."""
    gd = 4.358665215084597e-01
    alpha = np.zeros((4, 4))
    alpha[1, 0] = 8.7173304301691801e-01
    alpha[2, 0] = 8.4457060015369423e-01
    alpha[2, 1] = -1.1299064236484185e-01
    alpha[3, 2] = 1.0
    gamma = np.diag([gd] * 4)
    gamma[1, 0] = -8.7173304301691801e-01
    gamma[2, 0] = -9.0338057013044082e-01
    gamma[2, 1] = 5.4180672388095326e-02
    gamma[3, 0] = 2.4212380706095346e-01
    gamma[3, 1] = -1.2232505839045147
    gamma[3, 2] = 5.4526025533510214e-01
    b = [2.4212380706095346e-01, -1.2232505839045147, 1.5452602553351020, 4.3586652150845900e-01]
    b_hat = [3.7810903145819369e-01, -9.6042292212423178e-02, 0.5, 2.1793326075422950e-01]
    return BaseMethod(alpha, gamma, b, b_hat, name="ros34pw2")


def _check_imim_params(gamma: float, beta21: float) -> None:
    if beta21 == 0.0:
        raise ValueError("beta21 must be nonzero")
    if gamma == 0.0:
        raise ValueError("gamma must be nonzero")


def imim_base(gamma: float = 1.0, beta21: float = 0.5) -> BaseMethod:
    """Three-stage order-(2)3 Rosenbrock scheme with free diagonal ``gamma`` and entry ``beta21``.

    The third-order main method also satisfies the time-lagged Jacobian condition.
    """
    _check_imim_params(gamma, beta21)
    alpha = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [-1.0, 2.0, 0.0]])
    beta32 = (6.0 * (gamma**2 - gamma) + 1.0) / beta21
    beta31 = 3.0 - 6.0 * gamma - 4.0 * beta21 - beta32
    beta = np.array([[gamma, 0.0, 0.0], [beta21, gamma, 0.0], [beta31, beta32, gamma]])
    b = np.array([1.0, 4.0, 1.0]) / 6.0
    w = (1.0 - 2.0 * gamma) / (2.0 * beta21)
    b_hat = np.array([1.0 - w, w, 0.0])
    return BaseMethod(alpha, beta - alpha, b, b_hat, name=f"imim-base(gamma={gamma:g},beta21={beta21:g})")


def explicit_part(base: BaseMethod) -> BaseMethod:
    """The explicit Runge-Kutta method ``(alpha, 0, b)`` of a Rosenbrock scheme."""
    return BaseMethod(base.alpha, np.zeros_like(base.gamma), base.b, base.b_hat,
                      name=f"{base.name}-explicit" if base.name else "")


def classical_rk4() -> BaseMethod:
    alpha = np.zeros((4, 4))
    alpha[1, 0] = alpha[2, 1] = 0.5
    alpha[3, 2] = 1.0
    return BaseMethod(alpha, np.zeros((4, 4)), np.array([1.0, 2.0, 2.0, 1.0]) / 6.0, name="rk4")


def forward_euler() -> BaseMethod:
    return BaseMethod([[0.0]], [[0.0]], [1.0], name="euler")


def linearly_implicit_euler() -> BaseMethod:
    return BaseMethod([[0.0]], [[1.0]], [1.0], name="linearly-implicit-euler")


RODAS_FILE = "rodas.tab"


def bundled_data_path(filename: str) -> Path:
    return Path(str(resources.files("mrgark") / "data" / filename))


def rodas(path: str | Path | None = None) -> BaseMethod:
    """Six-stage order 4(3) RODAS, read from ``path`` or the bundled tableau file."""
    base = load_base_method(bundled_data_path(RODAS_FILE) if path is None else path)
    return BaseMethod(base.alpha, base.gamma, base.b, base.b_hat, name="rodas")


# ----------------------------------------------------------------------------
# Compound-first-step (telescopic) family

CouplingSpec = Callable[[int], np.ndarray] | Sequence[np.ndarray] | np.ndarray | None


def _per_step(spec: CouplingSpec, M: int, shape: tuple[int, int]) -> list[np.ndarray]:
    """Expand a per-micro-step specification into ``M`` matrices (micro-step index is 1-based)."""
    if spec is None:
        return [np.zeros(shape) for _ in range(M)]
    if callable(spec):
        mats = [np.asarray(spec(lam), dtype=float) for lam in range(1, M + 1)]
    elif isinstance(spec, np.ndarray) and spec.ndim == 2:
        mats = [spec] * M
    else:
        mats = [np.asarray(m, dtype=float) for m in spec]
    if len(mats) != M or any(m.shape != shape for m in mats):
        raise TableauError(f"coupling specification must give {M} matrices of shape {shape}")
    return mats


def rank_one_shift(v1: np.ndarray) -> Callable[[int], np.ndarray]:
    """``F(lam) = (lam - 1) 1 v1^T``."""
    v1 = np.asarray(v1, dtype=float)
    return lambda lam: (lam - 1) * np.outer(np.ones(v1.size), v1)


def polynomial_shift(*coefficients: np.ndarray) -> Callable[[int], np.ndarray]:
    """``F(lam) = sum_i (lam - 1)**i D_i`` with ``coefficients = (D_1, D_2, ...)``."""
    mats = [np.asarray(d, dtype=float) for d in coefficients]
    return lambda lam: sum(float(lam - 1) ** (i + 1) * d for i, d in enumerate(mats))


def _require_rows(mats: Sequence[np.ndarray], targets: Sequence[float], what: str) -> None:
    for lam, (mat, t) in enumerate(zip(mats, targets), start=1):
        defect = np.max(np.abs(mat.sum(axis=1) - t)) if mat.size else 0.0
        if defect > _IC_TOL:
            raise TableauError(
                f"{what}({lam}) row sums must equal {t:g} for internal consistency (defect {defect:.3e})"
            )


def compound_first_step(
    base: BaseMethod,
    M: int,
    F: CouplingSpec = None,
    alpha_fs_tilde: CouplingSpec = None,
    gamma_fs_tilde: CouplingSpec = None,
    alpha_sf_tilde: np.ndarray | None = None,
    gamma_sf_tilde: np.ndarray | None = None,
    name: str = "",
) -> MultirateMethod:
    """Telescopic compound-first-step method: ``base`` for both partitions.

    Couplings::

        alpha_fs[l] = (alpha + alpha_fs_tilde[l] + F(l)) / M
        gamma_fs[l] = (gamma + gamma_fs_tilde[l]) / M
        alpha_sf[1] = M (alpha + alpha_sf_tilde),  gamma_sf[1] = M (gamma + gamma_sf_tilde)

    and zero slow-fast couplings after the first micro-step.  ``F`` defaults
    to the rank-one shift with ``v1 = 2 beta^T b``.  Raises
    :class:`TableauError` when the extras break internal consistency
    (``F(l) 1 = (l-1) 1`` and every tilde matrix annihilating ``1``).
    """
    if M < 1:
        raise ValueError("M must be positive")
    s = base.s
    shape = (s, s)
    if F is None:
        F = rank_one_shift(2.0 * base.beta.T @ base.b)
    Fs = _per_step(F, M, shape)
    a_fs = _per_step(alpha_fs_tilde, M, shape)
    g_fs = _per_step(gamma_fs_tilde, M, shape)
    a_sf = np.zeros(shape) if alpha_sf_tilde is None else np.asarray(alpha_sf_tilde, dtype=float)
    g_sf = np.zeros(shape) if gamma_sf_tilde is None else np.asarray(gamma_sf_tilde, dtype=float)
    _require_rows(Fs, [lam - 1 for lam in range(1, M + 1)], "F")
    _require_rows(a_fs, [0.0] * M, "alpha_fs_tilde")
    _require_rows(g_fs, [0.0] * M, "gamma_fs_tilde")
    _require_rows([a_sf, g_sf], [0.0, 0.0], "slow-fast tilde")
    zero = np.zeros(shape)
    return MultirateMethod.build(
        base,
        base,
        alpha_fs=[(base.alpha + a + f) / M for a, f in zip(a_fs, Fs)],
        gamma_fs=[(base.gamma + g) / M for g in g_fs],
        alpha_sf=[M * (base.alpha + a_sf)] + [zero] * (M - 1),
        gamma_sf=[M * (base.gamma + g_sf)] + [zero] * (M - 1),
        M=M,
        flavor="compound_first_step",
        name=name or f"cfs({base.name},M={M})",
    )


def _imim_parts(gamma: float, beta21: float, M: int, shift_weight: float):
    base = imim_base(gamma, beta21)
    bhat_entry = (M - 1) / beta21
    correction = np.zeros((3, 3))
    correction[2, 0] = -bhat_entry
    correction[2, 1] = bhat_entry
    row = np.array([shift_weight, 1.0 - shift_weight, 0.0])
    F = rank_one_shift(row)
    return base, correction, F


def imim_order23(gamma: float = 1.0, beta21: float = 0.5, M: int = 10) -> MultirateMethod:
    """Embedded order-(2)3 implicit-implicit compound-first-step method."""
    _check_imim_params(gamma, beta21)
    base, correction, F = _imim_parts(gamma, beta21, M, (beta21 + gamma) / beta21)
    return compound_first_step(
        base, M, F=F, gamma_fs_tilde=correction, gamma_sf_tilde=correction,
        name=f"imim23(gamma={gamma:g},beta21={beta21:g},M={M})",
    )


def imex_shift_weight(gamma: float, beta21: float, M: int) -> float:
    return (3.0 * (M + 1) * (beta21 + gamma) - beta21 - M) / (3.0 * M * beta21)


def imex_order23(gamma: float = 1.0, beta21: float = 0.5, M: int = 10) -> MultirateMethod:
    """Embedded order-(2)3 implicit-explicit compound-first-step method.

    The first fast micro-step is solved together with the slow stages; the
    remaining ``M-1`` micro-steps use the explicit part of the base scheme and
    carry no ``gamma`` coupling to the slow stages, so every later fast stage
    is a plain explicit evaluation.
    """
    _check_imim_params(gamma, beta21)
    base, correction, F = _imim_parts(gamma, beta21, M, imex_shift_weight(gamma, beta21, M))
    explicit = explicit_part(base)
    zero = np.zeros((3, 3))
    alpha_fs = [(base.alpha + F(lam)) / M for lam in range(1, M + 1)]
    gamma_fs = [(base.gamma + correction) / M] + [zero] * (M - 1)
    return MultirateMethod.build(
        base,
        [base] + [explicit] * (M - 1),
        alpha_fs=alpha_fs,
        gamma_fs=gamma_fs,
        alpha_sf=[M * base.alpha] + [zero] * (M - 1),
        gamma_sf=[M * (base.gamma + correction)] + [zero] * (M - 1),
        M=M,
        flavor="imex",
        name=f"imex23(gamma={gamma:g},beta21={beta21:g},M={M})",
    )


# ----------------------------------------------------------------------------
# Step-predictor-corrector


def spc_telescopic(
    base: BaseMethod,
    M: int,
    v1: np.ndarray | None = None,
    D1: np.ndarray | None = None,
    D2: np.ndarray | None = None,
    name: str = "",
) -> MultirateMethod:
    """Telescopic SPC method with rank-one (``v1``) or quadratic (``D1``, ``D2``) shift.

    With neither given, the rank-one shift ``v1 = 2 beta^T b`` is used, which
    gives third order for any third-order base.
    """
    if M < 1:
        raise ValueError("M must be positive")
    s = base.s
    if D1 is not None or D2 is not None:
        if v1 is not None:
            raise ValueError("give either v1 or (D1, D2), not both")
        D1 = np.zeros((s, s)) if D1 is None else np.asarray(D1, dtype=float)
        D2 = np.zeros((s, s)) if D2 is None else np.asarray(D2, dtype=float)
        _require_rows([D1], [1.0], "D1")
        _require_rows([D2], [0.0], "D2")
        F = polynomial_shift(D1, D2)
        kind = "poly"
    else:
        v1 = 2.0 * base.beta.T @ base.b if v1 is None else np.asarray(v1, dtype=float)
        if abs(v1.sum() - 1.0) > _IC_TOL:
            raise TableauError(f"v1 must sum to 1 for internal consistency, got {v1.sum():.17g}")
        F = rank_one_shift(v1)
        kind = "r1"
    zero = np.zeros((s, s))
    return MultirateMethod.build(
        base,
        base,
        alpha_fs=[(base.alpha + F(lam)) / M for lam in range(1, M + 1)],
        gamma_fs=base.gamma / M,
        alpha_sf=zero,
        gamma_sf=zero,
        M=M,
        flavor="spc",
        name=name or f"spc-{kind}({base.name},M={M})",
    )


def solve_polynomial_spc_shift(base: BaseMethod) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-norm ``(D1, D2)`` meeting the quadratic-shift consistency and order-4 ROS equations.

    The equations are linear in the entries of ``D1`` and ``D2``; the base
    must itself be of order four for the resulting SPC method to be.
    """
    s = base.s
    b, c, e, beta = base.b, base.c, base.e, base.beta
    ones = np.ones(s)

    def system(rhs_sum, third, fourth_c, fourth_beta, fourth_cc, fourth_be):
        rows, rhs = [], []
        for i in range(s):
            r = np.zeros((s, s))
            r[i, :] = 1.0
            rows.append(r.ravel())
            rhs.append(rhs_sum)
        rows.append(np.outer(b, e).ravel())
        rhs.append(third)
        rows.append(np.outer(b * c, e).ravel())
        rhs.append(fourth_c)
        rows.append(np.outer(beta.T @ b, e).ravel())
        rhs.append(fourth_beta)
        rows.append(np.outer(b, c**2).ravel())
        rhs.append(fourth_cc)
        rows.append(np.outer(b, e @ beta.T).ravel())
        rhs.append(fourth_be)
        sol, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
        return sol.reshape(s, s)

    D1 = system(1.0, 1.0 / 3.0, 3.0 / 8.0 - b @ base.alpha @ e, 1.0 / 8.0, 1.0 / 6.0, 1.0 / 12.0)
    D2 = system(0.0, 0.0, 1.0 / 24.0, -1.0 / 24.0, 0.0, 0.0)
    # Keep the sum rows exact.
    D1 += np.outer(ones - D1 @ ones, ones) / s
    D2 -= np.outer(D2 @ ones, ones) / s
    return D1, D2


# ----------------------------------------------------------------------------
# Decoupled recipes


def _route_consistency(fast: BaseMethod, slow: BaseMethod, M: int):
    """Coupling that carries all abscissa information through the first slow stage and first fast stage."""
    sF, sS = fast.s, slow.s
    alpha_fs, gamma_fs = [], []
    for lam in range(1, M + 1):
        a = np.zeros((sF, sS))
        g = np.zeros((sF, sS))
        a[:, 0] = (lam - 1) / M + fast.c / M
        g[:, 0] = fast.g / M
        alpha_fs.append(a)
        gamma_fs.append(g)
    alpha_sf = [np.zeros((sS, sF)) for _ in range(M)]
    gamma_sf = [np.zeros((sS, sF)) for _ in range(M)]
    alpha_sf[0][:, 0] = M * slow.c
    gamma_sf[0][:, 0] = M * slow.g
    return alpha_fs, gamma_fs, alpha_sf, gamma_sf


def first_stage_only_coupling(fast: BaseMethod, slow: BaseMethod, M: int) -> MultirateMethod:
    """Internally consistent coupling in which only the first fast and first slow stage are solved jointly.

    Every fast stage reads the slow information from the first slow stage
    only, and every slow stage reads the fast information from the first fast
    stage only.
    """
    if fast.alpha[0].any() or slow.alpha[0].any():
        raise TableauError("first stages must have zero alpha row")
    a_fs, g_fs, a_sf, g_sf = _route_consistency(fast, slow, M)
    return MultirateMethod.build(slow, fast, a_fs, g_fs, a_sf, g_sf, M=M, flavor="first_stage_only",
                                 name=f"first-stage-only({fast.name}/{slow.name},M={M})")


def fully_decoupled_coupling(fast: BaseMethod, slow: BaseMethod, M: int) -> MultirateMethod:
    """Coupling with a zero structure matrix, so every stage is solved alone.

    The first fast stage does not see the slow stages at all; internal
    consistency therefore fails unless that stage is explicit
    (``fast.gamma[0, 0] == 0``).
    """
    a_fs, g_fs, a_sf, g_sf = _route_consistency(fast, slow, M)
    a_fs[0][0, :] = 0.0
    g_fs[0][0, :] = 0.0
    return MultirateMethod.build(slow, fast, a_fs, g_fs, a_sf, g_sf, M=M, flavor="decoupled",
                                 name=f"decoupled({fast.name}/{slow.name},M={M})")


def imex_coupling(fast_explicit: BaseMethod, slow: BaseMethod, M: int) -> MultirateMethod:
    """Explicit fast scheme with implicit slow scheme and a zero structure matrix."""
    if not fast_explicit.is_explicit:
        raise TableauError("the IMEX recipe needs an explicit fast scheme")
    method = fully_decoupled_coupling(fast_explicit, slow, M)
    return MultirateMethod(method.slow, method.fast_steps, method.coupling, "imex",
                           name=f"imex({fast_explicit.name}/{slow.name},M={M})")


def single_rate(base: BaseMethod) -> MultirateMethod:
    """``M = 1`` with every coupling equal to the base matrices: the base method on ``f_fast + f_slow``."""
    return MultirateMethod.build(base, base, base.alpha, base.gamma, base.alpha, base.gamma, M=1,
                                 name=f"single-rate({base.name})")


# ----------------------------------------------------------------------------
# Registry


@dataclass(frozen=True)
class MethodEntry:
    name: str
    summary: str
    build: Callable[..., MultirateMethod]
    params: tuple[str, ...]
    order: int
    mode: str


def _imim(gamma=1.0, beta21=0.5, M=10, **_):
    return imim_order23(gamma, beta21, int(M))


def _imex(gamma=1.0, beta21=0.5, M=10, **_):
    return imex_order23(gamma, beta21, int(M))


def _spc_r1(gamma=1.0, beta21=0.5, M=10, **_):
    return spc_telescopic(imim_base(gamma, beta21), int(M))


def _spc_ros34(M=10, **_):
    return spc_telescopic(ros34pw2(), int(M))


def _cfs_ros34(M=10, **_):
    base = ros34pw2()
    return compound_first_step(base, int(M), F=rank_one_shift(base.b), name=f"cfs-ros34pw2(M={int(M)})")


def _first_stage(gamma=1.0, beta21=0.5, M=2, **_):
    base = imim_base(gamma, beta21)
    return first_stage_only_coupling(base, base, int(M))


def _decoupled(gamma=1.0, beta21=0.5, M=2, **_):
    base = imim_base(gamma, beta21)
    return fully_decoupled_coupling(base, base, int(M))


def _imex_generic(M=4, **_):
    return imex_coupling(classical_rk4(), ros34pw2(), int(M))


def _single(**_):
    return single_rate(ros34pw2())


REGISTRY: dict[str, MethodEntry] = {
    e.name: e
    for e in (
        MethodEntry("imim23", "implicit-implicit compound-first-step, order (2)3", _imim, ("gamma", "beta21", "M"), 3, "ros"),
        MethodEntry("imex23", "implicit-explicit compound-first-step, order (2)3", _imex, ("gamma", "beta21", "M"), 3, "ros"),
        MethodEntry("spc-r1", "telescopic SPC, rank-one shift on the (2)3 base", _spc_r1, ("gamma", "beta21", "M"), 3, "ros"),
        MethodEntry("spc-ros34pw2", "telescopic SPC, rank-one shift on ROS34PW2", _spc_ros34, ("M",), 3, "row"),
        MethodEntry("cfs-ros34pw2", "stiffly accurate compound-first-step on ROS34PW2", _cfs_ros34, ("M",), 2, "row"),
        MethodEntry("first-stage", "only first fast/slow stages solved jointly", _first_stage, ("gamma", "beta21", "M"), 2, "ros"),
        MethodEntry("decoupled", "fully decoupled stage solves (inconsistent: implicit first fast stage)", _decoupled,
                    ("gamma", "beta21", "M"), 0, "ros"),
        MethodEntry("imex-rk4", "explicit RK4 fast, ROS34PW2 slow, decoupled", _imex_generic, ("M",), 2, "row"),
        MethodEntry("single-ros34pw2", "ROS34PW2 applied to the whole system", _single, (), 3, "row"),
    )
}


def build_method(name: str, **params) -> MultirateMethod:
    if name not in REGISTRY:
        raise KeyError(f"unknown method {name!r}; known: {', '.join(sorted(REGISTRY))}")
    entry = REGISTRY[name]
    used = {k: v for k, v in params.items() if k in entry.params and v is not None}
    return entry.build(**used)
