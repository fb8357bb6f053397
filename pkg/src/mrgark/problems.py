"""Benchmark problems with exact or reference solutions."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .integrator import AdditiveProblem, ComponentProblem, Problem

TWO_PI = 2.0 * math.pi


def dahlquist(lambda_slow: float = -1.0, lambda_fast: float = -10.0, y0: float = 1.0,
              t_span: tuple[float, float] = (0.0, 1.0)) -> AdditiveProblem:
    """Scalar ``y' = lambda_slow y + lambda_fast y`` with exact exponential solution."""
    ls, lf = lambda_slow, lambda_fast
    start = np.array([float(y0)])
    t0 = t_span[0]
    return AdditiveProblem(
        1,
        f_slow=lambda t, y: ls * y,
        f_fast=lambda t, y: lf * y,
        jac_slow=lambda t, y: np.array([[ls]]),
        jac_fast=lambda t, y: np.array([[lf]]),
        y0=start,
        t_span=t_span,
        exact=lambda t: start * np.exp((ls + lf) * (t - t0)),
        name="dahlquist",
    )


def coupled_linear_2x2(lambda_fast: float = -10.0, lambda_slow: float = -1.0, eta_slow: float = 0.5,
                       eta_fast: float = 0.5, y0: tuple[float, float] = (1.0, 1.0),
                       t_span: tuple[float, float] = (0.0, 1.0)) -> ComponentProblem:
    """``[yF; yS]' = [[lambda_fast, eta_slow], [eta_fast, lambda_slow]] [yF; yS]``."""
    mat = np.array([[lambda_fast, eta_slow], [eta_fast, lambda_slow]], dtype=float)
    start = np.array(y0, dtype=float)
    t0 = t_span[0]

    def exact(t):
        y = scipy.linalg.expm(mat * (t - t0)) @ start
        return y[:1], y[1:]

    return ComponentProblem(
        1, 1,
        f_fast=lambda t, yF, yS: lambda_fast * yF + eta_slow * yS,
        f_slow=lambda t, yF, yS: eta_fast * yF + lambda_slow * yS,
        jac=lambda t, yF, yS: ([[lambda_fast]], [[eta_slow]], [[eta_fast]], [[lambda_slow]]),
        y0=(start[:1], start[1:]),
        t_span=t_span,
        exact=exact,
        name="linear2x2",
    )


@dataclass(frozen=True)
class PendulumParameters:
    m_pend: float = 1.0
    m_osc: float = 1.0
    length: float = 1.0
    k: float = 10.0
    d: float = 1.0
    g: float = 9.81


def spring_force(p: PendulumParameters, y: np.ndarray) -> float:
    """Nonlinear spring-damper force between pendulum bob and oscillator (state ``[angle, x, angle', x']``)."""
    stretch = y[1] - p.length * math.sin(y[0])
    # The damping rate uses x' in both terms, as specified, not the kinematic stretch rate.
    rate = y[3] - p.length * y[3] * math.cos(y[0])
    return p.k * stretch * abs(stretch) + p.d * rate * abs(rate)


def pendulum_oscillator(params: PendulumParameters | None = None,
                        y0=(math.pi / 4.0, 0.5, 0.0, 0.0),
                        t_span: tuple[float, float] = (0.0, 1.0),
                        exact_jacobian: bool = False) -> AdditiveProblem:
    """Pendulum coupled to a damped oscillator through a spring, as a first-order system of size 4.

    The state is ``[angle, x, angle', x']``.  Gravity acting on the pendulum
    and the kinematic rows form the fast part; the spring force forms the
    slow part.  Jacobians are finite differences unless ``exact_jacobian``.
    The pendulum components form the fast error group and the oscillator
    components the slow one.
    """
    p = params or PendulumParameters()

    def f_fast(t, y):
        return np.array([y[2], y[3], -p.g * math.sin(y[0]), 0.0])

    def f_slow(t, y):
        F = spring_force(p, y)
        return np.array([0.0, 0.0, math.cos(y[0]) * F / (p.m_pend * p.length), -F / p.m_osc])

    jac_fast = jac_slow = None
    if exact_jacobian:
        def jac_fast(t, y):
            J = np.zeros((4, 4))
            J[0, 2] = J[1, 3] = 1.0
            J[2, 0] = -p.g * math.cos(y[0])
            return J

        def jac_slow(t, y):
            stretch = y[1] - p.length * math.sin(y[0])
            rate = y[3] - p.length * y[3] * math.cos(y[0])
            dF = np.zeros(4)
            dF[0] = p.k * 2.0 * abs(stretch) * (-p.length * math.cos(y[0]))
            dF[1] = p.k * 2.0 * abs(stretch)
            dF[0] += p.d * 2.0 * abs(rate) * (p.length * y[3] * math.sin(y[0]))
            dF[3] = p.d * 2.0 * abs(rate) * (1.0 - p.length * math.cos(y[0]))
            F = spring_force(p, y)
            J = np.zeros((4, 4))
            J[2] = math.cos(y[0]) * dF / (p.m_pend * p.length)
            J[2, 0] += -math.sin(y[0]) * F / (p.m_pend * p.length)
            J[3] = -dF / p.m_osc
            return J

    return AdditiveProblem(
        4, f_slow, f_fast, jac_slow, jac_fast,
        y0=np.array(y0, dtype=float), t_span=t_span,
        slow_index=(1, 3), fast_index=(0, 2), name="pendulum",
    )


def prothero_robinson(lambda1: float = -1e6, lambda2: float = -1.0, eps: float = 5e-4,
                      t_span: tuple[float, float] = (0.0, 2.0)) -> ComponentProblem:
    """Quasilinear Prothero-Robinson system ``y' = A(y)(y - g) + g'`` with exact solution ``y = g``.

    ``A(y) = [[lambda1 yS, eps], [eps, lambda2 yF]]``, slow target
    ``sin(2 pi t) + 2`` and fast target ``sin(20 pi t) + 2``.
    """

    def targets(t):
        return math.sin(TWO_PI * t) + 2.0, math.sin(10.0 * TWO_PI * t) + 2.0

    def rates(t):
        return TWO_PI * math.cos(TWO_PI * t), 10.0 * TWO_PI * math.cos(10.0 * TWO_PI * t)

    def accelerations(t):
        return -TWO_PI**2 * math.sin(TWO_PI * t), -(10.0 * TWO_PI) ** 2 * math.sin(10.0 * TWO_PI * t)

    # The right-hand sides inline the targets: they dominate the cost of long studies.
    def f_slow(t, yF, yS):
        s, f = yS[0], yF[0]
        gS = math.sin(TWO_PI * t) + 2.0
        gF = math.sin(10.0 * TWO_PI * t) + 2.0
        return np.array([lambda1 * s * (s - gS) + eps * (f - gF) + TWO_PI * math.cos(TWO_PI * t)])

    def f_fast(t, yF, yS):
        s, f = yS[0], yF[0]
        gS = math.sin(TWO_PI * t) + 2.0
        arg = 10.0 * TWO_PI * t
        return np.array([eps * (s - gS) + lambda2 * f * (f - math.sin(arg) - 2.0) + 10.0 * TWO_PI * math.cos(arg)])

    def jac(t, yF, yS):
        gS, gF = targets(t)
        LFF = [[lambda2 * (2.0 * yF[0] - gF)]]
        LFS = [[eps]]
        LSF = [[eps]]
        LSS = [[lambda1 * (2.0 * yS[0] - gS)]]
        return LFF, LFS, LSF, LSS

    def dt(t, yF, yS):
        dS, dF = rates(t)
        aS, aF = accelerations(t)
        slow = -lambda1 * yS[0] * dS - eps * dF + aS
        fast = -eps * dS - lambda2 * yF[0] * dF + aF
        return np.array([fast]), np.array([slow])

    def exact(t):
        gS, gF = targets(t)
        return np.array([gF]), np.array([gS])

    return ComponentProblem(
        1, 1, f_fast, f_slow, jac, dt, autonomous=False,
        y0=(np.array([2.0]), np.array([2.0])), t_span=t_span, exact=exact, name="pr",
    )


@dataclass(frozen=True)
class ProblemEntry:
    name: str
    summary: str
    build: Callable[..., Problem]


PROBLEMS: dict[str, ProblemEntry] = {
    e.name: e
    for e in (
        ProblemEntry("dahlquist", "scalar split linear test equation (exact solution)", dahlquist),
        ProblemEntry("linear2x2", "2x2 component linear test system (matrix exponential)", coupled_linear_2x2),
        ProblemEntry("pendulum", "pendulum coupled to a damped oscillator (reference solution)", pendulum_oscillator),
        ProblemEntry("pr", "quasilinear Prothero-Robinson system (exact solution)", prothero_robinson),
    )
}


def build_problem(name: str, **params) -> Problem:
    """Registry lookup; pendulum physical constants may be passed flat (``k=100``)."""
    if name not in PROBLEMS:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(sorted(PROBLEMS))}")
    params = {k: v for k, v in params.items() if v is not None}
    if name == "pendulum":
        physical = {f.name for f in dataclasses.fields(PendulumParameters)}
        constants = {k: params.pop(k) for k in list(params) if k in physical}
        if constants:
            params["params"] = PendulumParameters(**constants)
    return PROBLEMS[name].build(**params)
