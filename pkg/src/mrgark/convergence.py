"""Fixed-step convergence studies with per-group error measurement."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from .integrator import Problem, StepError, SingularStageError, _additive, integrate

CSV_HEADER = ("H", "err_slow", "err_fast", "order_slow", "order_fast")
MIN_STEP_SIZES = 3


def reference_solution(prob: Problem, t0: float, tend: float, rtol: float = 1e-13, atol: float = 1e-14,
                       method: str = "DOP853") -> np.ndarray:
    """Final state from the exact solution when known, otherwise from a tight scipy solve."""
    add = _additive(prob)
    if add.exact is not None:
        return np.asarray(add.exact(tend), dtype=float)
    if add.y0 is None:
        raise ValueError("problem has neither an exact solution nor an initial value")
    sol = solve_ivp(add.rhs, (t0, tend), add.y0, method=method, rtol=rtol, atol=atol)
    if not sol.success:
        raise StepError(f"reference solve failed: {sol.message}")
    return sol.y[:, -1]


def pairwise_orders(step_sizes, errors) -> np.ndarray:
    """``log2``-type observed orders between consecutive rows; NaN for the first row."""
    h = np.asarray(step_sizes, dtype=float)
    e = np.asarray(errors, dtype=float)
    out = np.full(h.size, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[1:] = np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])
    out[~np.isfinite(out)] = np.nan
    return out


def fitted_order(step_sizes, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(H)`` over the finite, positive rows."""
    h = np.asarray(step_sizes, dtype=float)
    e = np.asarray(errors, dtype=float)
    keep = np.isfinite(e) & (e > 0.0)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(h[keep]), np.log(e[keep]), 1)[0])


@dataclass
class ConvergenceTable:
    step_sizes: np.ndarray
    err_slow: np.ndarray
    err_fast: np.ndarray
    emb_slow: np.ndarray | None = None
    emb_fast: np.ndarray | None = None
    failures: dict[float, str] = field(default_factory=dict)

    @property
    def order_slow(self) -> np.ndarray:
        return pairwise_orders(self.step_sizes, self.err_slow)

    @property
    def order_fast(self) -> np.ndarray:
        return pairwise_orders(self.step_sizes, self.err_fast)

    def fitted(self) -> dict[str, float]:
        out = {"slow": fitted_order(self.step_sizes, self.err_slow),
               "fast": fitted_order(self.step_sizes, self.err_fast)}
        if self.emb_slow is not None:
            out["emb_slow"] = fitted_order(self.step_sizes, self.emb_slow)
            out["emb_fast"] = fitted_order(self.step_sizes, self.emb_fast)
        return out

    @property
    def all_failed(self) -> bool:
        return len(self.failures) == self.step_sizes.size

    def rows(self):
        for row in zip(self.step_sizes, self.err_slow, self.err_fast, self.order_slow, self.order_fast):
            yield tuple(float(v) for v in row)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in self.rows():
                writer.writerow([f"{v:.17g}" for v in row])


def step_sizes(H0: float, count: int) -> np.ndarray:
    """``count`` successively halved step sizes starting at ``H0``."""
    if count < 1:
        raise ValueError("need at least one step size")
    return H0 / 2.0 ** np.arange(count)


def convergence_study(method, prob: Problem, H0: float, count: int, t_span: tuple[float, float] | None = None,
                      reference: np.ndarray | None = None) -> ConvergenceTable:
    """Integrate with ``count`` halved macro-steps and measure final-time errors per component group.

    Steps that fail (singular stage matrices, non-finite states) give NaN
    rows; the failure messages are collected in ``failures``.
    """
    add = _additive(prob)
    t0, tend = add.t_span if t_span is None else t_span
    ref = reference_solution(prob, t0, tend) if reference is None else np.asarray(reference, dtype=float)
    hs = step_sizes(H0, count)
    nan = np.full(count, np.nan)
    es, ef, bs, bf = nan.copy(), nan.copy(), nan.copy(), nan.copy()
    have_embedded = False
    failures: dict[float, str] = {}
    for k, H in enumerate(hs):
        try:
            with np.errstate(over="raise", invalid="raise"):
                traj = integrate(method, prob, t0, tend, float(H))
        except (StepError, SingularStageError, FloatingPointError) as exc:
            failures[float(H)] = str(exc)
            continue
        if not np.all(np.isfinite(traj.y_final)):
            failures[float(H)] = "non-finite solution"
            continue
        es[k], ef[k] = add.split_error(traj.y_final, ref)
        if traj.y_embedded is not None:
            have_embedded = True
            bs[k], bf[k] = add.split_error(traj.y_embedded, ref)
    return ConvergenceTable(hs, es, ef, bs if have_embedded else None, bf if have_embedded else None, failures)


def error_ratios(errors) -> np.ndarray:
    """Consecutive error reduction factors ``e[k-1] / e[k]``."""
    e = np.asarray(errors, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return e[:-1] / e[1:]
