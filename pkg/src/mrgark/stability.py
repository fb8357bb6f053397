"""Linear stability functions and matrices of multirate GARK-ROS/ROW methods.

For the split Dahlquist equation ``y' = lambda_S y + lambda_F y`` one step
multiplies ``y`` by a rational function ``R(zS, zF)`` of ``zS = H lambda_S``
and ``zF = H lambda_F``.  For the two-component test system

    [yF; yS]' = [[lambda_F, eta_S], [eta_F, lambda_S]] [yF; yS]

one step applies a 2x2 matrix depending additionally on ``wS = H eta_S``
and ``wF = H eta_F``.  Both are evaluated from the assembled tableau.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .order_conditions import check_stiff_accuracy
from .tableau import AssembledTableau, BaseMethod, MultirateMethod, assemble_gark


class StabilitySingularityError(ArithmeticError):
    """The stage resolvent is singular at the requested arguments."""


def _tableau(method: MultirateMethod | AssembledTableau | BaseMethod) -> AssembledTableau:
    if isinstance(method, AssembledTableau):
        return method
    if isinstance(method, BaseMethod):
        return AssembledTableau.single(method)
    return assemble_gark(method)


def _solve(mat: np.ndarray, rhs: np.ndarray, where: str) -> np.ndarray:
    # Only exact breakdown counts: explicit stages at huge |z| legitimately
    # give tiny pivots and enormous, but finite, amplification factors.
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(mat, check_finite=False)
        if np.any(np.diag(lu) == 0.0) or not np.all(np.isfinite(lu)):
            raise StabilitySingularityError(f"stage resolvent is singular at {where}")
        out = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    if not np.all(np.isfinite(out)):
        raise StabilitySingularityError(f"stage resolvent is numerically singular at {where}")
    return out


def _partition_scales(tab: AssembledTableau, slow_value: complex, fast_value: complex) -> np.ndarray:
    return np.array([fast_value if p == "F" else slow_value for p in tab.partition], dtype=complex)


def stability_function(method, zS: complex, zF: complex, form: str = "left") -> complex:
    """``R(zS, zF) = 1 + b^T (I - Z B)^{-1} Z 1``.

    ``form="right"`` evaluates the equivalent ``1 + b^T Z (I - B Z)^{-1} 1``.
    """
    tab = _tableau(method)
    z = _partition_scales(tab, zS, zF)
    ones = np.ones(tab.s)
    eye = np.eye(tab.s)
    where = f"zS={zS}, zF={zF}"
    if form == "left":
        return complex(1.0 + tab.b @ _solve(eye - z[:, None] * tab.B, z * ones, where))
    if form == "right":
        return complex(1.0 + (tab.b * z) @ _solve(eye - tab.B * z[None, :], ones, where))
    raise ValueError(f"form must be 'left' or 'right', got {form!r}")


def stability_matrix_2x2(method, zF: complex, zS: complex, wS: complex, wF: complex) -> np.ndarray:
    """One-step propagation matrix of the two-component linear test system.

    Fast stages see ``zF`` on the fast component and ``wS`` on the slow
    component; slow stages see ``wF`` and ``zS``.
    """
    tab = _tableau(method)
    iF, iS = tab.indices("F"), tab.indices("S")
    B = tab.B
    nF, nS = iF.size, iS.size
    lhs = np.eye(nF + nS, dtype=complex)
    lhs[:nF, :nF] -= zF * B[np.ix_(iF, iF)]
    lhs[:nF, nF:] -= wS * B[np.ix_(iF, iS)]
    lhs[nF:, :nF] -= wF * B[np.ix_(iS, iF)]
    lhs[nF:, nF:] -= zS * B[np.ix_(iS, iS)]
    rhs = np.zeros((nF + nS, 2), dtype=complex)
    rhs[:nF] = [zF, wS]
    rhs[nF:] = [wF, zS]
    stages = _solve(lhs, rhs, f"zF={zF}, zS={zS}, wS={wS}, wF={wF}")
    weights = np.zeros((2, nF + nS))
    weights[0, :nF] = tab.b[iF]
    weights[1, nF:] = tab.b[iS]
    return np.eye(2) + weights @ stages


def base_stability_values(mrm: MultirateMethod, zF: complex, zS: complex) -> tuple[complex, complex]:
    """Fast amplification over all micro-steps and the slow base amplification.

    These are the eigenvalues of :func:`stability_matrix_2x2` for one-sided
    coupling (``wS = 0`` or ``wF = 0``).
    """
    fast = complex(1.0)
    for frac, step in zip(mrm.fractions, mrm.fast_steps):
        fast *= stability_function(step, frac * zF, frac * zF)
    return fast, stability_function(mrm.slow, zS, zS)


def stiff_limit(method, zS: complex, zF_magnitude: float) -> float:
    """``|R(zS, -zF_magnitude)|``, which tends to zero for stiffly accurate methods."""
    return abs(stability_function(method, zS, -abs(zF_magnitude)))


def is_stiffly_accurate(method: MultirateMethod) -> bool:
    return check_stiff_accuracy(method)[0]


@dataclass(frozen=True)
class ScanSlice:
    """Affine map from the scan variable ``z`` to ``(zS, zF)``.

    ``zS = slow_weight * z + slow_offset`` and likewise for ``zF``.  The
    default weights scan the diagonal ``zS = zF = z``.
    """

    slow_weight: complex = 1.0
    fast_weight: complex = 1.0
    slow_offset: complex = 0.0
    fast_offset: complex = 0.0

    def __call__(self, z: complex) -> tuple[complex, complex]:
        return self.slow_weight * z + self.slow_offset, self.fast_weight * z + self.fast_offset

    @classmethod
    def named(cls, name: str, fixed: complex = 0.0, ratio: float = 1.0) -> "ScanSlice":
        """``"diagonal"``: ``zS = z``, ``zF = ratio z``; ``"fast"``: ``zF = z`` with ``zS = fixed``;
        ``"slow"``: ``zS = z`` with ``zF = fixed``."""
        if name == "diagonal":
            return cls(1.0, ratio)
        if name == "fast":
            return cls(0.0, 1.0, fixed, 0.0)
        if name == "slow":
            return cls(1.0, 0.0, 0.0, fixed)
        raise ValueError(f"unknown slice {name!r}; use diagonal, fast or slow")


@dataclass
class StabilityScan:
    re: np.ndarray
    im: np.ndarray
    abs_R: np.ndarray  # shape (len(im), len(re)); NaN where the resolvent is singular

    def rows(self):
        for j, y in enumerate(self.im):
            for i, x in enumerate(self.re):
                yield float(x), float(y), float(self.abs_R[j, i])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["re_z", "im_z", "abs_R"])
            for row in self.rows():
                writer.writerow([f"{v:.17g}" for v in row])

    def max_on_imaginary_axis(self) -> float:
        """Largest finite ``|R|`` in the grid column closest to ``Re z = 0``."""
        col = int(np.argmin(np.abs(self.re)))
        values = self.abs_R[:, col]
        return float(np.nanmax(values)) if np.any(np.isfinite(values)) else float("nan")


def stability_scan(method, re_values, im_values, scan_slice: ScanSlice | None = None) -> StabilityScan:
    """``|R|`` on the rectangular grid ``z = re + i im`` mapped through ``scan_slice``."""
    tab = _tableau(method)
    mapping = scan_slice or ScanSlice()
    re = np.asarray(re_values, dtype=float).ravel()
    im = np.asarray(im_values, dtype=float).ravel()
    if re.size == 0 or im.size == 0 or not (np.all(np.isfinite(re)) and np.all(np.isfinite(im))):
        raise ValueError("scan grid must be finite and non-empty")
    out = np.full((im.size, re.size), np.nan)
    for j, y in enumerate(im):
        for i, x in enumerate(re):
            zS, zF = mapping(complex(x, y))
            try:
                out[j, i] = abs(stability_function(tab, zS, zF))
            except StabilitySingularityError:
                pass
    return StabilityScan(re, im, out)
