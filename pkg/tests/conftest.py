import sys

import numpy as np
import pytest

from mrgark import AdditiveProblem, BaseMethod, MultirateMethod


def random_base(rng, s, implicit=True, scale=0.5):
    alpha = np.tril(rng.normal(scale=scale, size=(s, s)), -1)
    gamma = np.tril(rng.normal(scale=scale, size=(s, s)), -1)
    if implicit:
        gamma += np.diag(np.full(s, 0.3 + rng.random()))
    b = rng.random(s)
    return BaseMethod(alpha, gamma, b / b.sum())


def random_multirate(rng, sF=3, sS=3, M=2, flavor="general"):
    fast, slow = random_base(rng, sF), random_base(rng, sS)
    mats = lambda r, c: [rng.normal(scale=0.3, size=(r, c)) for _ in range(M)]  # noqa: E731
    return MultirateMethod.build(slow, fast, mats(sF, sS), mats(sF, sS), mats(sS, sF), mats(sS, sF),
                                 M=M, flavor=flavor)


def smooth_problem(rng, dim=3, autonomous=False):
    """Nonlinear additive problem with finite-difference Jacobians."""
    A_slow = rng.normal(size=(dim, dim))
    A_fast = 3.0 * rng.normal(size=(dim, dim))
    return AdditiveProblem(
        dim,
        f_slow=lambda t, y: np.sin(A_slow @ y) + np.cos(t),
        f_fast=lambda t, y: np.tanh(A_fast @ y) * (1.0 + t),
        autonomous=autonomous,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number].line())
