"""Coefficient containers, monolithic assembly and coupling-structure analysis.

A multirate method couples a slow Rosenbrock(-W) scheme, taking one step of
size ``H``, with a fast scheme taking ``M`` micro-steps.  Both are described
by :class:`BaseMethod` objects; the interaction between them is carried by
four families of per-micro-step coupling matrices.

Stage ordering in every assembled object is: the ``sF`` stages of micro-step
1, ..., the ``sF`` stages of micro-step ``M``, then the ``sS`` slow stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

FLAVORS = ("general", "imex", "compound_first_step", "spc", "decoupled", "first_stage_only")


class TableauError(ValueError):
    """Raised for inconsistent coefficient data."""


def _frozen(a, ndim: int, what: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise TableauError(f"{what}: expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BaseMethod:
    """One Rosenbrock(-W) scheme ``(alpha, gamma, b[, b_hat])``.

    ``alpha`` must be strictly lower triangular and ``gamma`` lower triangular.
    The derived vectors ``c = alpha 1``, ``g = gamma 1`` and ``e = beta 1`` are
    computed once at construction.
    """

    alpha: np.ndarray
    gamma: np.ndarray
    b: np.ndarray
    b_hat: np.ndarray | None = None
    name: str = ""
    beta: np.ndarray = field(init=False, repr=False)
    c: np.ndarray = field(init=False, repr=False)
    g: np.ndarray = field(init=False, repr=False)
    e: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        alpha = _frozen(self.alpha, 2, "alpha")
        gamma = _frozen(self.gamma, 2, "gamma")
        b = _frozen(self.b, 1, "b")
        s = b.size
        if alpha.shape != (s, s) or gamma.shape != (s, s):
            raise TableauError(
                f"stage count mismatch: b has {s} entries, alpha {alpha.shape}, gamma {gamma.shape}"
            )
        if np.any(np.triu(alpha) != 0.0):
            raise TableauError("alpha must be strictly lower triangular")
        if np.any(np.triu(gamma, 1) != 0.0):
            raise TableauError("gamma must be lower triangular")
        b_hat = None
        if self.b_hat is not None:
            b_hat = _frozen(self.b_hat, 1, "b_hat")
            if b_hat.size != s:
                raise TableauError(f"b_hat has {b_hat.size} entries, expected {s}")
        beta = alpha + gamma
        beta.setflags(write=False)
        ones = np.ones(s)
        derived = {"c": alpha @ ones, "g": gamma @ ones, "e": beta @ ones}
        for key, value in derived.items():
            value.setflags(write=False)
            object.__setattr__(self, key, value)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "b_hat", b_hat)
        object.__setattr__(self, "beta", beta)

    @property
    def s(self) -> int:
        return self.b.size

    @property
    def single_lu(self) -> bool:
        """True when all diagonal gamma entries coincide."""
        d = np.diag(self.gamma)
        return bool(np.all(d == d[0]))

    @property
    def is_explicit(self) -> bool:
        return not np.any(self.gamma)

    def same_coefficients(self, other: "BaseMethod") -> bool:
        return (
            np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.gamma, other.gamma)
            and np.array_equal(self.b, other.b)
        )


def compose_substeps(base: BaseMethod, n: int) -> BaseMethod:
    """The method obtained by taking ``n`` equal substeps of ``base``, written as one step."""
    if n < 1:
        raise TableauError("substep count must be positive")
    s = base.s
    alpha = np.zeros((n * s, n * s))
    gamma = np.zeros((n * s, n * s))
    for m in range(n):
        blk = slice(m * s, (m + 1) * s)
        alpha[blk, blk] = base.alpha / n
        gamma[blk, blk] = base.gamma / n
        for earlier in range(m):
            alpha[blk, earlier * s:(earlier + 1) * s] = np.outer(np.ones(s), base.b) / n
    b = np.tile(base.b, n) / n
    b_hat = None if base.b_hat is None else np.tile(base.b_hat, n) / n
    return BaseMethod(alpha, gamma, b, b_hat, name=f"{base.name}x{n}" if base.name else "")


def _as_matrices(mats, M: int, shape: tuple[int, int], what: str) -> tuple[np.ndarray, ...]:
    if isinstance(mats, np.ndarray) and mats.ndim == 2:
        mats = [mats] * M
    mats = tuple(_frozen(m, 2, f"{what}") for m in mats)
    if len(mats) != M:
        raise TableauError(f"{what}: expected {M} matrices, got {len(mats)}")
    for lam, m in enumerate(mats, start=1):
        if m.shape != shape:
            raise TableauError(f"{what}[{lam}] has shape {m.shape}, expected {shape}")
    return mats


@dataclass(frozen=True, eq=False)
class CouplingSet:
    """Per-micro-step coupling matrices (index 0 holds micro-step 1)."""

    alpha_fs: tuple[np.ndarray, ...]
    gamma_fs: tuple[np.ndarray, ...]
    alpha_sf: tuple[np.ndarray, ...]
    gamma_sf: tuple[np.ndarray, ...]

    @property
    def M(self) -> int:
        return len(self.alpha_fs)

    def family(self, which: str) -> tuple[np.ndarray, ...]:
        key = which.lower().replace("-", "_")
        names = {
            "alphafs": "alpha_fs", "gammafs": "gamma_fs",
            "alphasf": "alpha_sf", "gammasf": "gamma_sf",
        }
        key = names.get(key.replace("_", ""), key)
        if key not in ("alpha_fs", "gamma_fs", "alpha_sf", "gamma_sf"):
            raise TableauError(f"unknown coupling family {which!r}")
        return getattr(self, key)


@dataclass(frozen=True, eq=False)
class MultirateMethod:
    """Slow base, per-micro-step fast bases, couplings and micro-step fractions.

    ``fast_steps[l]`` is the fast scheme used on micro-step ``l+1``; a pure
    multirate method repeats the same scheme.  ``fractions`` are the micro-step
    lengths relative to ``H`` (``1/M`` each unless given).
    """

    slow: BaseMethod
    fast_steps: tuple[BaseMethod, ...]
    coupling: CouplingSet
    flavor: str = "general"
    fractions: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise TableauError(f"unknown flavor {self.flavor!r}; expected one of {FLAVORS}")
        M = self.coupling.M
        if M < 1:
            raise TableauError("at least one micro-step is required")
        if len(self.fast_steps) != M:
            raise TableauError(f"{len(self.fast_steps)} fast schemes given for M={M}")
        sF = self.fast_steps[0].s
        if any(f.s != sF for f in self.fast_steps):
            raise TableauError("all fast micro-step schemes must have the same stage count")
        sS = self.slow.s
        cs = self.coupling
        for what, mats, shape in (
            ("alpha_fs", cs.alpha_fs, (sF, sS)),
            ("gamma_fs", cs.gamma_fs, (sF, sS)),
            ("alpha_sf", cs.alpha_sf, (sS, sF)),
            ("gamma_sf", cs.gamma_sf, (sS, sF)),
        ):
            if len(mats) != M:
                raise TableauError(f"{what}: expected {M} matrices, got {len(mats)}")
            for lam, m in enumerate(mats, start=1):
                if m.shape != shape:
                    raise TableauError(f"{what}[{lam}] has shape {m.shape}, expected {shape}")
        if self.fractions is None:
            frac = np.full(M, 1.0 / M)
        else:
            frac = np.array(self.fractions, dtype=float)
            if frac.shape != (M,):
                raise TableauError(f"fractions must have {M} entries")
            if np.any(frac < 0.0):
                raise TableauError("micro-step fractions must be non-negative")
        frac.setflags(write=False)
        object.__setattr__(self, "fractions", frac)

    @classmethod
    def build(
        cls,
        slow: BaseMethod,
        fast: BaseMethod | Sequence[BaseMethod],
        alpha_fs,
        gamma_fs,
        alpha_sf,
        gamma_sf,
        M: int | None = None,
        flavor: str = "general",
        fractions=None,
        name: str = "",
    ) -> "MultirateMethod":
        """Convenience constructor accepting single matrices to be repeated over micro-steps."""
        if M is None:
            for mats in (alpha_fs, gamma_fs, alpha_sf, gamma_sf):
                if not (isinstance(mats, np.ndarray) and mats.ndim == 2):
                    M = len(mats)
                    break
            else:
                M = 1
        fast_steps = (fast,) * M if isinstance(fast, BaseMethod) else tuple(fast)
        sF, sS = fast_steps[0].s, slow.s
        coupling = CouplingSet(
            _as_matrices(alpha_fs, M, (sF, sS), "alpha_fs"),
            _as_matrices(gamma_fs, M, (sF, sS), "gamma_fs"),
            _as_matrices(alpha_sf, M, (sS, sF), "alpha_sf"),
            _as_matrices(gamma_sf, M, (sS, sF), "gamma_sf"),
        )
        return cls(slow, fast_steps, coupling, flavor, fractions, name)

    @property
    def M(self) -> int:
        return self.coupling.M

    @property
    def sF(self) -> int:
        return self.fast_steps[0].s

    @property
    def sS(self) -> int:
        return self.slow.s

    @property
    def fast(self) -> BaseMethod:
        return self.fast_steps[0]

    @property
    def is_pure(self) -> bool:
        """Same fast scheme on every micro-step."""
        return all(f.same_coefficients(self.fast_steps[0]) for f in self.fast_steps[1:])

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.fractions, 1.0 / self.M, rtol=0.0, atol=1e-15))

    @property
    def has_embedded(self) -> bool:
        return self.slow.b_hat is not None and all(f.b_hat is not None for f in self.fast_steps)


@dataclass(frozen=True, eq=False)
class AssembledTableau:
    """Two-partition GARK-ROS/ROW tableau over one macro-step.

    ``partition[i]`` is ``"F"`` or ``"S"``; ``micro_step[i]`` is the 1-based
    micro-step of a fast stage (0 for slow stages and SPC predictor stages).
    """

    A: np.ndarray
    G: np.ndarray
    b: np.ndarray
    partition: tuple[str, ...]
    micro_step: tuple[int, ...]
    b_hat: np.ndarray | None = None

    @property
    def s(self) -> int:
        return self.b.size

    @property
    def B(self) -> np.ndarray:
        return self.A + self.G

    def indices(self, part: str) -> np.ndarray:
        return np.array([i for i, p in enumerate(self.partition) if p == part], dtype=int)

    @classmethod
    def single(cls, base: BaseMethod, part: str = "S") -> "AssembledTableau":
        """Embed one base method as a one-partition tableau."""
        return cls(
            np.array(base.alpha), np.array(base.gamma), np.array(base.b),
            (part,) * base.s, (0,) * base.s,
            None if base.b_hat is None else np.array(base.b_hat),
        )


def _assemble_standard(mrm: MultirateMethod) -> AssembledTableau:
    M, sF, sS = mrm.M, mrm.sF, mrm.sS
    nF = M * sF
    s = nF + sS
    A = np.zeros((s, s))
    G = np.zeros((s, s))
    b = np.zeros(s)
    b_hat = np.zeros(s) if mrm.has_embedded else None
    phi = mrm.fractions
    cs = mrm.coupling
    slow_blk = slice(nF, s)
    for lam in range(M):
        fast = mrm.fast_steps[lam]
        blk = slice(lam * sF, (lam + 1) * sF)
        A[blk, blk] = phi[lam] * fast.alpha
        G[blk, blk] = phi[lam] * fast.gamma
        for later in range(lam + 1, M):
            rows = slice(later * sF, (later + 1) * sF)
            A[rows, blk] = phi[lam] * np.outer(np.ones(sF), fast.b)
        A[blk, slow_blk] = cs.alpha_fs[lam]
        G[blk, slow_blk] = cs.gamma_fs[lam]
        A[slow_blk, blk] = phi[lam] * cs.alpha_sf[lam]
        G[slow_blk, blk] = phi[lam] * cs.gamma_sf[lam]
        b[blk] = phi[lam] * fast.b
        if b_hat is not None:
            b_hat[blk] = phi[lam] * fast.b_hat
    A[slow_blk, slow_blk] = mrm.slow.alpha
    G[slow_blk, slow_blk] = mrm.slow.gamma
    b[slow_blk] = mrm.slow.b
    if b_hat is not None:
        b_hat[slow_blk] = mrm.slow.b_hat
    partition = ("F",) * nF + ("S",) * sS
    micro = tuple(lam + 1 for lam in range(M) for _ in range(sF)) + (0,) * sS
    return AssembledTableau(A, G, b, partition, micro, b_hat)


def _assemble_spc(mrm: MultirateMethod) -> AssembledTableau:
    # Fast partition = sS predictor stages followed by the M*sF corrector stages.
    M, sF, sS = mrm.M, mrm.sF, mrm.sS
    nP = sS
    nF = nP + M * sF
    s = nF + sS
    A = np.zeros((s, s))
    G = np.zeros((s, s))
    b = np.zeros(s)
    b_hat = np.zeros(s) if mrm.has_embedded else None
    slow = mrm.slow
    phi = mrm.fractions
    cs = mrm.coupling
    pred = slice(0, nP)
    slow_blk = slice(nF, s)
    A[pred, pred] = slow.alpha
    G[pred, pred] = slow.gamma
    A[pred, slow_blk] = slow.alpha
    G[pred, slow_blk] = slow.gamma
    for lam in range(M):
        fast = mrm.fast_steps[lam]
        blk = slice(nP + lam * sF, nP + (lam + 1) * sF)
        A[blk, blk] = phi[lam] * fast.alpha
        G[blk, blk] = phi[lam] * fast.gamma
        for later in range(lam + 1, M):
            rows = slice(nP + later * sF, nP + (later + 1) * sF)
            A[rows, blk] = phi[lam] * np.outer(np.ones(sF), fast.b)
        A[blk, slow_blk] = cs.alpha_fs[lam]
        G[blk, slow_blk] = cs.gamma_fs[lam]
        b[blk] = phi[lam] * fast.b
        if b_hat is not None:
            b_hat[blk] = phi[lam] * fast.b_hat
    A[slow_blk, pred] = slow.alpha
    G[slow_blk, pred] = slow.gamma
    A[slow_blk, slow_blk] = slow.alpha
    G[slow_blk, slow_blk] = slow.gamma
    b[slow_blk] = slow.b
    if b_hat is not None:
        b_hat[slow_blk] = slow.b_hat
    partition = ("F",) * nF + ("S",) * sS
    micro = (0,) * nP + tuple(lam + 1 for lam in range(M) for _ in range(sF)) + (0,) * sS
    return AssembledTableau(A, G, b, partition, micro, b_hat)


def assemble_gark(mrm: MultirateMethod) -> AssembledTableau:
    """Monolithic GARK-ROS/ROW tableau of one macro-step of ``mrm``.

    Column block ``l`` of the fast partition is scaled by the micro-step
    fraction (``1/M`` for uniform micro-steps).  SPC methods get the
    predictor stages prepended to the fast partition.
    """
    if mrm.flavor == "spc":
        return _assemble_spc(mrm)
    return _assemble_standard(mrm)


def coupling_blocks(tab: AssembledTableau) -> dict[str, np.ndarray]:
    """The four coefficient blocks between partitions, keyed like ``"A_FS"``."""
    iF, iS = tab.indices("F"), tab.indices("S")
    out = {}
    for name, mat in (("A", tab.A), ("G", tab.G)):
        out[f"{name}_FS"] = mat[np.ix_(iF, iS)]
        out[f"{name}_SF"] = mat[np.ix_(iS, iF)]
    return out


def structure_matrix(mrm: MultirateMethod) -> np.ndarray:
    """Elementwise coupling-strength matrix of shape ``(M*sF, sS)``.

    Entry ``[(l, i), j]`` is nonzero exactly when fast stage ``i`` of
    micro-step ``l`` and slow stage ``j`` depend on each other and must be
    solved together.
    """
    blocks = coupling_blocks(_assemble_standard(mrm) if mrm.flavor == "spc" else assemble_gark(mrm))
    sf = np.abs(blocks["A_SF"]) + np.abs(blocks["G_SF"])
    fs = np.abs(blocks["A_FS"]) + np.abs(blocks["G_FS"])
    return sf.T * fs


def averaged_coupling(mrm: MultirateMethod, which: str, k: int) -> np.ndarray:
    """``sum_l (l-1)**k X[l]`` over micro-steps ``l = 1..M``."""
    if k < 0:
        raise ValueError("k must be non-negative")
    mats = mrm.coupling.family(which)
    out = np.zeros_like(mats[0])
    for lam, mat in enumerate(mats):
        out = out + float(lam) ** k * mat
    return out


def intermediate_solution_weights(mrm: MultirateMethod, lam: int) -> np.ndarray:
    """Weights on the fast increments of the completed micro-steps ``1..lam``.

    Row ``l`` holds the weights applied to the stages of micro-step ``l+1``
    when forming the intermediate fast solution after ``lam`` micro-steps; an
    empty array means the intermediate solution is the step's initial value.
    """
    if not 0 <= lam <= mrm.M:
        raise ValueError(f"micro-step index {lam} outside 0..{mrm.M}")
    return np.array([mrm.fast_steps[l].b for l in range(lam)]).reshape(lam, mrm.sF)


# ----------------------------------------------------------------------------
# Plain-text tableau files


def _fmt_row(values) -> str:
    return " ".join(f"{float(v):.16e}" for v in np.atleast_1d(values))


def _write_base(lines: list[str], prefix: str, base: BaseMethod) -> None:
    lines.append(f"{prefix}.alpha")
    lines.extend(_fmt_row(r) for r in base.alpha)
    lines.append(f"{prefix}.gamma")
    lines.extend(_fmt_row(r) for r in base.gamma)
    lines.append(f"{prefix}.b")
    lines.append(_fmt_row(base.b))
    if base.b_hat is not None:
        lines.append(f"{prefix}.b_hat")
        lines.append(_fmt_row(base.b_hat))


def dumps_tableau(obj: MultirateMethod | BaseMethod) -> str:
    """Serialize a method to the plain-text tableau format."""
    lines: list[str] = []
    if isinstance(obj, BaseMethod):
        lines.append(f"{obj.s} 0 0 {obj.s} base")
        _write_base(lines, "slow", obj)
        return "\n".join(lines) + "\n"
    mrm = obj
    size = mrm.M * mrm.sF + mrm.sS
    lines.append(f"{size} {mrm.M} {mrm.sF} {mrm.sS} {mrm.flavor}")
    _write_base(lines, "slow", mrm.slow)
    for lam, fast in enumerate(mrm.fast_steps, start=1):
        _write_base(lines, f"fast[{lam}]", fast)
    for fam in ("alpha_fs", "gamma_fs", "alpha_sf", "gamma_sf"):
        for lam, mat in enumerate(mrm.coupling.family(fam), start=1):
            lines.append(f"{fam}[{lam}]")
            lines.extend(_fmt_row(r) for r in mat)
    lines.append("fractions")
    lines.append(_fmt_row(mrm.fractions))
    return "\n".join(lines) + "\n"


def _parse_blocks(text: str) -> tuple[list[str], dict[str, list[list[float]]]]:
    header = None
    blocks: dict[str, list[list[float]]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if header is None:
            header = line.split()
            continue
        first = line.split()[0]
        try:
            float(first)
        except ValueError:
            current = line
            if current in blocks:
                raise TableauError(f"duplicate block {current!r}")
            blocks[current] = []
            continue
        if current is None:
            raise TableauError("numeric data before the first block label")
        blocks[current].append([float(t) for t in line.split()])
    if header is None or len(header) != 5:
        raise TableauError("header must read 's M sF sS flavor'")
    return header, blocks


def _read_base(blocks, prefix: str, s: int) -> BaseMethod:
    def get(key, rows):
        name = f"{prefix}.{key}"
        if name not in blocks:
            raise TableauError(f"missing block {name!r}")
        arr = np.array(blocks[name], dtype=float)
        if arr.shape[0] != rows:
            raise TableauError(f"block {name!r} has {arr.shape[0]} rows, expected {rows}")
        return arr

    alpha = get("alpha", s)
    gamma = get("gamma", s)
    b = get("b", 1)[0]
    b_hat = get("b_hat", 1)[0] if f"{prefix}.b_hat" in blocks else None
    return BaseMethod(alpha, gamma, b, b_hat)


def loads_tableau(text: str) -> MultirateMethod | BaseMethod:
    header, blocks = _parse_blocks(text)
    try:
        _, M, sF, sS = (int(v) for v in header[:4])
    except ValueError as exc:
        raise TableauError(f"bad header {' '.join(header)!r}") from exc
    flavor = header[4]
    slow = _read_base(blocks, "slow", sS)
    if flavor == "base":
        return slow
    fast = tuple(_read_base(blocks, f"fast[{lam}]", sF) for lam in range(1, M + 1))
    fams = {}
    for fam, rows in (("alpha_fs", sF), ("gamma_fs", sF), ("alpha_sf", sS), ("gamma_sf", sS)):
        mats = []
        for lam in range(1, M + 1):
            key = f"{fam}[{lam}]"
            if key not in blocks:
                raise TableauError(f"missing block {key!r}")
            mats.append(np.array(blocks[key], dtype=float).reshape(rows, -1))
        fams[fam] = mats
    fractions = np.array(blocks["fractions"][0]) if "fractions" in blocks else None
    return MultirateMethod.build(slow, fast, M=M, flavor=flavor, fractions=fractions, **fams)


def save_tableau(obj: MultirateMethod | BaseMethod, path: str | Path) -> None:
    Path(path).write_text(dumps_tableau(obj))


def load_tableau(path: str | Path) -> MultirateMethod | BaseMethod:
    return loads_tableau(Path(path).read_text())


def load_base_method(path: str | Path) -> BaseMethod:
    """Read a file and return its slow base method (the whole file for base-only files)."""
    obj = load_tableau(path)
    return obj if isinstance(obj, BaseMethod) else obj.slow
