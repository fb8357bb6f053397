"""Acceptance suite: one PASS/FAIL line per criterion.

Run with pytest (the lines appear in the terminal summary) or directly with
``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import random_multirate, smooth_problem  # noqa: E402
from mrgark import (  # noqa: E402
    REGISTRY,
    AdditiveProblem,
    MultirateMethod,
    assemble_gark,
    base_stability_values,
    build_method,
    check_generic_gark,
    check_internal_consistency,
    check_mr_order,
    check_spc_mri,
    check_stiff_accuracy,
    convergence_study,
    dahlquist,
    mri_as_imex,
    mri_linear_coupling,
    mri_step,
    pendulum_oscillator,
    prothero_robinson,
    rodas,
    rodas_spc_mri,
    ros34pw2_spc_mri,
    single_rate,
    stability_function,
    stability_matrix_2x2,
    step_additive,
    step_base,
    step_monolithic,
    stiff_limit,
)
from mrgark.convergence import error_ratios  # noqa: E402
from mrgark.methods import classical_rk4, imex_order23, imim_base, imim_order23, ros34pw2, spc_telescopic  # noqa: E402
from mrgark.mri import rodas_linear_conditions  # noqa: E402

RESULTS: dict[int, "Verdict"] = {}


@dataclass
class Verdict:
    number: int
    title: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"criterion {self.number} {'PASS' if self.passed else 'FAIL'}: {self.title} ({self.detail})"


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def criterion_1() -> Verdict:
    start = time.perf_counter()
    worst, bad = 0.0, []
    for make in (imim_order23, imex_order23):
        for M in (2, 4, 10):
            mrm = make(1.0, 0.5, M)
            reports = [check_internal_consistency(mrm, 1e-12), check_mr_order(mrm, 3, "ros", 1e-12),
                       check_mr_order(mrm, 3, "time_lagged", 1e-12)]
            for rep in reports:
                relevant = [e for e in rep.entries if e.applicable]
                worst = max(worst, max(abs(e.residual) for e in relevant))
                if rep.failures():
                    bad.append(f"{make.__name__} M={M}")
    elapsed = time.perf_counter() - start
    ok = not bad and worst <= 1e-12 and elapsed < 1.0
    return Verdict(1, "order-3 condition engine on IMIM/IMEX", ok,
                   f"max residual {worst:.2e}, {elapsed:.2f} s" + (f", failing {bad}" if bad else ""))


def criterion_2() -> Verdict:
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    worst, compared = 0.0, 0
    for k in range(20):
        mrm = random_multirate(rng, 3, 3, M=1 + k % 3)
        generic = check_generic_gark(assemble_gark(mrm), 3)
        direct = check_mr_order(mrm, 3).by_id()
        for e in generic.entries:
            worst = max(worst, abs(direct[e.id].residual - e.residual))
            compared += 1
    elapsed = time.perf_counter() - start
    return Verdict(2, "specialized vs generic residuals", worst <= 1e-12 and elapsed < 5.0,
                   f"{compared} residuals, max difference {worst:.2e}, {elapsed:.2f} s")


def criterion_3() -> Verdict:
    mrm = imim_order23(1.0, 0.5, 4)
    prob = pendulum_oscillator()
    micro = step_additive(mrm, prob, 0.0, prob.y0, 0.1).y_next
    mono = step_monolithic(assemble_gark(mrm), prob, 0.0, prob.y0, 0.1).y_next
    diff = _rel(micro, mono)
    return Verdict(3, "multirate step vs assembled tableau on the pendulum", diff <= 1e-12,
                   f"relative difference {diff:.2e}")


def criterion_4() -> Verdict:
    grid = np.linspace(-10.0, 0.0, 7)
    methods = {"IMIM": imim_order23(1.0, 0.5, 4), "SPC": spc_telescopic(imim_base(), 4)}
    ratio_err, eig_err = 0.0, 0.0
    for mrm in methods.values():
        for zS in grid:
            for zF in grid:
                ratio = step_additive(mrm, dahlquist(zS, zF), 0.0, np.ones(1), 1.0).y_next[0]
                ratio_err = max(ratio_err, abs(ratio - stability_function(mrm, zS, zF)))
                P = stability_matrix_2x2(mrm, zF, zS, wS=0.8, wF=0.0)
                eig = np.sort_complex(np.linalg.eigvals(P))
                expected = np.sort_complex(np.array(base_stability_values(mrm, zF, zS), dtype=complex))
                eig_err = max(eig_err, float(np.max(np.abs(eig - expected))))
    ok = ratio_err <= 1e-13 and eig_err <= 1e-12
    return Verdict(4, "stability function vs step ratio, one-sided eigenvalues", ok,
                   f"ratio error {ratio_err:.2e}, eigenvalue error {eig_err:.2e}")


def criterion_5() -> Verdict:
    start = time.perf_counter()
    prob = prothero_robinson()
    problems, summary = [], []
    for label, make in (("IMIM", imim_order23), ("IMEX", imex_order23)):
        table = convergence_study(make(1.0, 0.5, 10), prob, 1.0 / 512.0, 5)
        fit = table.fitted()
        ratios = {g: error_ratios(getattr(table, f"err_{g}")) for g in ("slow", "fast")}
        summary.append(f"{label} order slow {fit['slow']:.2f} fast {fit['fast']:.2f} "
                       f"embedded {fit['emb_slow']:.2f}/{fit['emb_fast']:.2f} "
                       f"ratios slow {np.round(ratios['slow'], 1).tolist()} fast {np.round(ratios['fast'], 1).tolist()}")
        for g in ("slow", "fast"):
            if not 2.7 <= fit[g] <= 3.3:
                problems.append(f"{label} {g} order")
            if not 1.7 <= fit[f"emb_{g}"] <= 2.3:
                problems.append(f"{label} embedded {g} order")
            if not np.all((ratios[g] >= 6.5) & (ratios[g] <= 9.5)):
                problems.append(f"{label} {g} ratios")
    elapsed = time.perf_counter() - start
    if elapsed >= 30.0:
        problems.append("runtime")
    detail = "; ".join(summary) + f"; {elapsed:.1f} s"
    if problems:
        detail += "; out of range: " + ", ".join(problems)
    return Verdict(5, "Prothero-Robinson convergence at M=10", not problems, detail)


def criterion_6() -> Verdict:
    rng = np.random.default_rng(5)
    coupling = mri_linear_coupling(classical_rk4())
    prob = smooth_problem(rng, dim=3, autonomous=True)
    y0 = rng.normal(size=3)
    a = mri_step(coupling, prob, 0.0, y0, 0.1, substeps=1).y_next
    b = step_additive(mri_as_imex(coupling), prob, 0.0, y0, 0.1).y_next
    diff = _rel(a, b)
    return Verdict(6, "MRI step vs its IMEX multirate form", diff <= 1e-12, f"relative difference {diff:.2e}")


def criterion_7() -> Verdict:
    base = ros34pw2()
    worst = 0.0
    for theta in (0.0, 1.0):
        mu1 = ros34pw2_spc_mri(theta).mu[1]
        worst = max(worst, abs(mu1.sum() - 1.0), abs(mu1 @ base.c - 1.0 / 3.0), abs(mu1 @ base.g))
    detail = f"mu1 residual {worst:.2e}"
    ok = worst <= 1e-9
    try:
        tableau = rodas()
    except FileNotFoundError:
        return Verdict(7, "SPC-MRI coefficient checks", ok, detail + "; RODAS part skipped: coefficient file absent")
    rodas_worst = 0.0
    for thetas in ((0.0, 0.0, 0.0, 0.0), (0.1, -0.3, 0.2, 0.5)):
        coupling = rodas_spc_mri(*thetas, tableau)
        rodas_worst = max(rodas_worst, rodas_linear_conditions(coupling).max_residual,
                          check_spc_mri(coupling, 4, "ros", tol=1e-9).max_residual)
    ok = ok and rodas_worst <= 1e-9
    return Verdict(7, "SPC-MRI coefficient checks", ok, detail + f"; RODAS residual {rodas_worst:.2e}")


def criterion_8() -> Verdict:
    candidates = {name: build_method(name) for name in REGISTRY}
    candidates["single-rodas"] = single_rate(rodas())
    candidates["single-linearly-implicit"] = single_rate(imim_base())
    checked, worst, bad = [], 0.0, []
    for name, mrm in candidates.items():
        if not check_stiff_accuracy(mrm)[0]:
            continue
        value = stiff_limit(mrm, -1.0, 1e8)
        checked.append(name)
        worst = max(worst, value)
        if value > 1e-6:
            bad.append(name)
    ok = bool(checked) and not bad
    return Verdict(8, "stiffly accurate methods damp the stiff limit", ok,
                   f"{len(checked)} methods, max |R| {worst:.2e}" + (f", failing {bad}" if bad else ""))


def criterion_9() -> Verdict:
    rng = np.random.default_rng(9)
    prob = smooth_problem(rng, autonomous=False)
    y0 = rng.normal(size=3)
    worst_single = 0.0
    for base in (imim_base(), ros34pw2()):
        mrm = MultirateMethod.build(base, base, base.alpha, base.gamma, base.alpha, base.gamma, M=1)
        a = step_additive(mrm, prob, 0.3, y0, 0.07).y_next
        b = step_base(base, prob, 0.3, y0, 0.07).y_next
        worst_single = max(worst_single, float(np.max(np.abs(a - b))))
    slow_only = AdditiveProblem(3, prob.f_slow, lambda t, y: np.zeros(3))
    worst_slow = 0.0
    for mrm in (imim_order23(1.0, 0.5, 4), imex_order23(1.0, 0.5, 4)):
        a = step_additive(mrm, slow_only, 0.3, y0, 0.07).y_next
        b = step_base(mrm.slow, slow_only, 0.3, y0, 0.07).y_next
        worst_slow = max(worst_slow, float(np.max(np.abs(a - b))))
    ok = worst_single <= 1e-14 and worst_slow <= 1e-14
    return Verdict(9, "degenerate reductions", ok,
                   f"M=1 difference {worst_single:.2e}, zero fast difference {worst_slow:.2e}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda f: f.__name__)
def test_acceptance(criterion):
    verdict = criterion()
    RESULTS[verdict.number] = verdict
    print(verdict.line())
    assert verdict.passed, verdict.line()


if __name__ == "__main__":
    failed = 0
    for criterion in CRITERIA:
        verdict = criterion()
        print(verdict.line(), flush=True)
        failed += not verdict.passed
    sys.exit(1 if failed else 0)
