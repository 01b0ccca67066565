"""Decoupling ratios, lower-bound witnesses and the broad/narrow split.

The central quantity is the quotient

    |F|_p / (sum_theta |P_theta F|_p^2)^{1/2}

for a grid function ``F`` whose Fourier support lies in the union of the
pieces ``theta`` of a frequency partition.  Norms are taken over one period of
the torus (``global``), over a spatial window (``local``, with the pieces
measured against the weight adapted to the window) or against that weight on
both sides (``weighted``).

Besides the quotient itself the module builds three families of witnesses:

* the sharp example (a smooth bump in every cap), evaluated for ``n = 2`` by a
  banded sparse evaluator that never materializes the dense grid;
* point-mass configurations, whose limit ratio is an exact count of additive
  coincidences among ``k``-fold sums;
* a seeded search over per-cap complex amplitudes.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .grid_fourier import (
    CapPartition,
    FrequencyBox,
    FrequencyRegion,
    Grid,
    GridFunction,
    LabelledPartition,
    ResolutionError,
    SpatialBox,
    WeightSpec,
    cap_partition,
    lp_norm,
    project,
)
from .wave_packets import DomainError, build_bump, gamma_tensor

__all__ = [
    "UndefinedRatioError",
    "DegenerateConfigurationError",
    "DecouplingInstance",
    "DecouplingTerms",
    "decoupling_terms",
    "decoupling_ratio",
    "iterability_check",
    "parallel_decoupling_check",
    "sharp_example",
    "sharp_example_grid",
    "cap_bump",
    "BandedSpectrum",
    "sharp_example_spectrum",
    "SharpExampleReport",
    "sharp_example_ratio",
    "fit_log_slope",
    "PointMassConfig",
    "PointMassBound",
    "GridCheckReport",
    "appendix_b_config",
    "sample_generic_config",
    "exp_sum_moment",
    "point_mass_lower_bound",
    "point_mass_grid_check",
    "CapProfiles",
    "LowerBoundWitness",
    "search_lower_bound",
    "bilinear_ratio",
    "bilinear_holder_bound",
    "interval_pieces",
    "BroadNarrowResult",
    "broad_narrow_split",
]

_NORM_KINDS = ("global", "local", "weighted")


class UndefinedRatioError(ValueError):
    """The quotient has a zero numerator and denominator."""


class DegenerateConfigurationError(ValueError):
    """Two different multisets of points have the same ``k``-fold sum."""


# ---------------------------------------------------------------------------
# the decoupling quotient


def _piece_masks(partition, grid: Grid) -> list[np.ndarray]:
    if isinstance(partition, LabelledPartition):
        return partition.piece_masks(grid)
    masks = []
    for piece in partition:
        if isinstance(piece, np.ndarray):
            masks.append(piece.astype(bool))
        elif isinstance(piece, (FrequencyBox, FrequencyRegion)):
            masks.append(piece.mask(grid))
        else:
            raise TypeError(f"cannot interpret partition piece {piece!r}")
    taken = np.zeros(grid.shape, dtype=np.int64)
    for m in masks:
        if m.shape != grid.shape:
            raise ValueError("piece mask does not match the grid")
        taken += m
    if np.any(taken > 1):
        raise ValueError("partition pieces overlap on the lattice")
    return masks


@dataclass(frozen=True, eq=False)
class DecouplingInstance:
    """A function together with the frequency partition it is decoupled over.

    Parameters
    ----------
    F : GridFunction
        The function.
    partition : LabelledPartition or sequence
        A ``CapPartition`` (or any labelled partition), or a list of
        ``FrequencyRegion``/``FrequencyBox`` objects or boolean mode masks.
    p : float
        Lebesgue exponent, at least 2.
    norm_kind : {"global", "local", "weighted"}
        ``global`` integrates over one period.  ``local`` measures ``F`` on
        ``window`` and the pieces against the weight adapted to ``window``;
        ``weighted`` uses that weight on both sides.
    window : SpatialBox, optional
        Defaults to the cube of side ``1/delta`` at the origin when the
        partition is a ``CapPartition``.
    support_tol : float
        Coefficients with modulus above ``support_tol * max|coeff|`` must lie
        in a piece.  The default absorbs floating point round-off.
    """

    F: GridFunction
    partition: object
    p: float
    norm_kind: str = "global"
    window: SpatialBox | None = None
    support_tol: float = 1e-12
    masks: list = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.p >= 2:
            raise ValueError(f"p must be at least 2, got {self.p}")
        if self.norm_kind not in _NORM_KINDS:
            raise ValueError(f"norm_kind must be one of {_NORM_KINDS}")
        if self.norm_kind != "global" and self.window is None:
            if isinstance(self.partition, CapPartition):
                side = 1.0 / self.partition.delta
                object.__setattr__(
                    self, "window", SpatialBox((0.0,) * self.F.grid.n_dims, side)
                )
            else:
                raise ValueError("local and weighted ratios need a window")
        masks = _piece_masks(self.partition, self.F.grid)
        object.__setattr__(self, "masks", masks)
        covered = np.zeros(self.F.grid.shape, dtype=bool)
        for m in masks:
            covered |= m
        mag = np.abs(self.F.freq_coeffs)
        top = float(mag.max()) if mag.size else 0.0
        outside = mag[~covered]
        if outside.size and np.any(outside > self.support_tol * top):
            raise DomainError("supp F_hat is not contained in the union of the pieces")

    def pieces(self) -> list[GridFunction]:
        return [project(self.F, m) for m in self.masks]


@dataclass(frozen=True)
class DecouplingTerms:
    """Numerator, per-piece norms and the resulting quotient."""

    numerator: float
    piece_norms: tuple[float, ...]

    @property
    def denominator(self) -> float:
        return math.sqrt(sum(v * v for v in self.piece_norms))

    @property
    def ratio(self) -> float:
        den = self.denominator
        if den == 0.0:
            raise UndefinedRatioError("F = 0: every piece vanishes")
        return self.numerator / den


def _norm(F: GridFunction, p: float, kind: str, window: SpatialBox | None) -> float:
    if kind == "global":
        return lp_norm(F, p=p, kind="global")
    if kind == "local":
        return lp_norm(F, window, p=p, kind="local")
    return lp_norm(F, window, p=p, kind="weighted", w=WeightSpec.for_region(window))


def decoupling_terms(inst: DecouplingInstance) -> DecouplingTerms:
    kind = inst.norm_kind
    top_kind = "local" if kind == "local" else kind
    piece_kind = "weighted" if kind == "local" else kind
    num = _norm(inst.F, inst.p, top_kind, inst.window)
    norms = tuple(
        _norm(G, inst.p, piece_kind, inst.window) if np.any(inst.masks[i]) else 0.0
        for i, G in enumerate(inst.pieces())
    )
    return DecouplingTerms(num, norms)


def decoupling_ratio(inst: DecouplingInstance) -> float:
    """``|F|_p / (sum |P_theta F|_p^2)^{1/2}``; caps with ``P_theta F = 0`` add 0."""
    return decoupling_terms(inst).ratio


def iterability_check(
    F: GridFunction,
    coarse,
    fine,
    p: float,
) -> dict:
    """Measure the two stages of a nested partition.

    Every fine piece must lie inside one coarse piece.  Returns the direct
    ratio over ``fine``, the first-stage ratio over ``coarse``, the largest
    second-stage ratio over the fine pieces inside one coarse piece, and
    whether ``direct <= first * max(second)`` holds up to ``1e-9``.
    """
    grid = F.grid
    cmasks = _piece_masks(coarse, grid)
    fmasks = _piece_masks(fine, grid)
    parent = []
    for fm in fmasks:
        owners = [i for i, cm in enumerate(cmasks) if np.any(cm & fm)]
        if len(owners) > 1:
            raise ValueError("a fine piece straddles two coarse pieces")
        if owners and np.any(fm & ~cmasks[owners[0]]):
            raise ValueError("a fine piece leaves its coarse piece")
        parent.append(owners[0] if owners else -1)
    direct = decoupling_ratio(DecouplingInstance(F, fmasks, p))
    first = decoupling_ratio(DecouplingInstance(F, cmasks, p))
    second = 0.0
    for i, cm in enumerate(cmasks):
        G = project(F, cm)
        if not np.any(G.freq_coeffs):
            continue
        kids = [fm for fm, par in zip(fmasks, parent) if par == i]
        second = max(second, decoupling_ratio(DecouplingInstance(G, kids, p)))
    return {
        "direct": direct,
        "first_stage": first,
        "second_stage_max": second,
        "holds": direct <= first * second * (1 + 1e-9),
    }


def parallel_decoupling_check(F: GridFunction, partition, p: float, windows: Sequence[SpatialBox]) -> dict:
    """Glue per-window ratios over a spatial partition of the period.

    Each window ``Q_i`` gives the ratio with ``L^p(Q_i)`` on both sides; the
    global ratio over the union never exceeds the largest of them.
    """
    grid = F.grid
    masks = _piece_masks(partition, grid)
    pieces = [project(F, m) for m in masks]
    cover = np.zeros(grid.shape, dtype=np.int64)
    wmasks = [w.mask(grid) for w in windows]
    for wm in wmasks:
        cover += wm
    if np.any(cover != 1):
        raise ValueError("windows must partition the period")
    per_window = []
    for w in windows:
        num = lp_norm(F, w, p=p, kind="local")
        den = math.sqrt(sum(lp_norm(G, w, p=p, kind="local") ** 2 for G in pieces))
        per_window.append(num / den if den > 0 else 0.0)
    glued = decoupling_ratio(DecouplingInstance(F, masks, p))
    worst = max(per_window)
    return {"per_window": per_window, "glued": glued, "holds": glued <= worst * (1 + 1e-12)}


# ---------------------------------------------------------------------------
# the sharp example

_B = build_bump()


def _b(s: np.ndarray) -> np.ndarray:
    """Bump equal to 1 on ``[-1/2, 1/2]`` and vanishing off ``(-1, 1)``."""
    return _B(2.0 * np.asarray(s, float) / 3.0)


def cap_bump(delta: float, n_dims: int, xi: np.ndarray) -> np.ndarray:
    """Sum over caps of the smooth cap profiles, evaluated at ``xi``.

    In the cap over the cube centered at ``c`` (side ``h = delta^{1/2}``)::

        psi(xi) = prod_i b((xi_i - c_i) / (h/2)) * b((xi_n - |xi_bar|^2 - delta/2) / (delta/2))

    which is supported in the cap and equals 1 on its middle half.
    """
    parts = cap_partition(delta, n_dims)
    xi = np.asarray(xi, float)
    bar = xi[..., :-1]
    h = parts.side
    m = parts.per_axis
    idx = np.clip(np.floor(bar / h), 0, m - 1)
    c = (idx + 0.5) * h
    inside = np.all((bar >= 0) & (bar <= 1), axis=-1)
    out = np.ones(xi.shape[:-1])
    for a in range(n_dims - 1):
        out = out * _b((bar[..., a] - c[..., a]) / (h / 2))
    t = xi[..., -1] - np.sum(bar ** 2, axis=-1)
    out = out * _b((t - delta / 2) / (delta / 2))
    return np.where(inside, out, 0.0)


def _next_pow2(n: float) -> int:
    return 1 << max(0, math.ceil(math.log2(max(1.0, n))))


def sharp_example_grid(delta: float, n_dims: int, oversample: float = 2.0) -> Grid:
    """Smallest power-of-two grid of period ``4/delta`` holding ``N(delta)``."""
    if oversample < 1:
        raise ValueError("oversample must be at least 1")
    L = 4.0 / delta
    extents = [1.0] * (n_dims - 1) + [n_dims - 1 + delta]
    samples, centers = [], []
    for ext in extents:
        center = round(ext * L / 2) / L
        # band center +/- N/(2L) must contain [0, ext] with one spare mode
        need = 2 * max(center, ext - center) * L + 2
        samples.append(_next_pow2(max(need, oversample * (ext * L + 1))))
        centers.append(center)
    return Grid(n_dims, L, tuple(samples), tuple(centers))


def sharp_example(delta: float, n_dims: int, grid: Grid | None = None, oversample: float = 2.0,
                  max_points: int = 1 << 24) -> GridFunction:
    """``F_hat = sum_theta psi_theta`` with ``psi_theta`` the cap bump.

    Raises
    ------
    ResolutionError
        If ``grid`` cannot hold ``N(delta)`` or the default grid would exceed
        ``max_points`` samples (use ``sharp_example_ratio`` for ``n = 2``).
    """
    parts = cap_partition(delta, n_dims)
    if grid is None:
        grid = sharp_example_grid(delta, n_dims, oversample)
        if math.prod(grid.shape) > max_points:
            raise ResolutionError(f"dense grid {grid.shape} exceeds {max_points} samples")
    parts.check_resolved(grid)
    freqs = np.stack(grid.freqs(), axis=-1)
    coeffs = cap_bump(delta, n_dims, freqs).astype(complex)
    return GridFunction.from_coeffs(grid, coeffs)


def _fast_len(n: int) -> int:
    """Smallest ``2^a 3^b 5^c`` not below ``n``."""
    best = _next_pow2(n)
    p5 = 1
    while p5 < best:
        p35 = p5
        while p35 < best:
            q = p35
            while q < n:
                q *= 2
            best = min(best, q)
            p35 *= 3
        p5 *= 5
    return best


@dataclass(frozen=True, eq=False)
class BandedSpectrum:
    """Sparse two-dimensional spectrum on the lattice ``(1/period) Z^2``.

    Column ``i`` holds modes ``(k1[i], base[i] + j)`` for ``j < band`` with
    amplitudes ``amps[i, j]`` (the ``coeff`` convention of ``grid_fourier``,
    so ``F(x) = period^-2 sum amps e(x.k/period)``).
    """

    period: float
    k1: np.ndarray
    base: np.ndarray
    amps: np.ndarray

    def __post_init__(self) -> None:
        k1 = np.asarray(self.k1, np.int64)
        if np.unique(k1).size != k1.size:
            raise ValueError("columns must be distinct")
        object.__setattr__(self, "k1", k1)
        object.__setattr__(self, "base", np.asarray(self.base, np.int64))
        object.__setattr__(self, "amps", np.asarray(self.amps, complex))

    def select(self, keep: np.ndarray) -> "BandedSpectrum":
        return BandedSpectrum(self.period, self.k1[keep], self.base[keep], self.amps[keep])

    def scaled(self, factors: np.ndarray) -> "BandedSpectrum":
        return BandedSpectrum(self.period, self.k1, self.base, self.amps * np.asarray(factors)[:, None])

    def to_gridfunction(self, grid: Grid) -> GridFunction:
        out = np.zeros(grid.shape, dtype=complex)
        L = self.period
        if any(abs(P - L) > 1e-12 * L for P in grid.period):
            raise ValueError("grid period must match the spectrum")
        c1, c2 = (round(c * L) for c in grid.band_center)
        N1, N2 = grid.shape
        for j in range(self.amps.shape[1]):
            m1 = self.k1 - c1
            m2 = self.base + j - c2
            if np.any(m1 < -N1 // 2) or np.any(m1 >= N1 // 2) or np.any(m2 < -N2 // 2) or np.any(m2 >= N2 // 2):
                raise ResolutionError("spectrum leaves the grid band")
            np.add.at(out, (np.mod(m1, N1), np.mod(m2, N2)), self.amps[:, j])
        return GridFunction.from_coeffs(grid, out)

    def sample_shape(self, oversample: float) -> tuple[int, int]:
        K1 = int(self.k1.max() - self.k1.min()) + 1
        K2 = int((self.base + self.amps.shape[1]).max() - self.base.min())
        return _fast_len(math.ceil(oversample * K1)), _fast_len(math.ceil(oversample * K2))

    def power_integrals(self, ps: Sequence[float], oversample: float = 2.0, rows_per_chunk: int = 0) -> dict:
        """Midpoint sums of ``|F|^p`` over one period for every ``p`` in ``ps``.

        The spectrum is shifted to start at zero, sampled on an
        ``oversample``-times Nyquist grid, and streamed in blocks of rows so
        memory stays ``O(rows * N1)``.  For even ``p`` the sum is exact once
        ``oversample > p/2``.
        """
        L = self.period
        N1, N2 = self.sample_shape(oversample)
        m1 = self.k1 - self.k1.min()
        b0 = self.base.min()
        shift = (self.base - b0).astype(float)
        J = self.amps.shape[1]
        if rows_per_chunk <= 0:
            rows_per_chunk = max(1, min(N2, (1 << 22) // max(N1, len(m1))))
        totals = {float(p): 0.0 for p in ps}
        jj = np.arange(J, dtype=float)
        for start in range(0, N2, rows_per_chunk):
            rows = np.arange(start, min(N2, start + rows_per_chunk), dtype=float)
            t = rows[:, None] / N2
            inner = np.exp(2j * np.pi * t * jj[None, :]) @ self.amps.T
            inner *= np.exp(2j * np.pi * t * shift[None, :])
            block = np.zeros((rows.size, N1), dtype=complex)
            block[:, m1] = inner
            vals = np.abs(np.fft.ifft(block, axis=1)) * (N1 / L ** 2)
            for p in totals:
                totals[p] += float(np.sum(vals ** p))
        cell = (L / N1) * (L / N2)
        return {p: v * cell for p, v in totals.items()}


def sharp_example_spectrum(delta: float) -> tuple[BandedSpectrum, np.ndarray]:
    """Banded spectrum of the ``n = 2`` sharp example and the cap of each column."""
    parts = cap_partition(delta, 2)
    L = 4.0 / delta
    nL = round(L)
    k1 = np.arange(0, nL + 1)
    xi1 = k1 / L
    lo = np.ceil(k1.astype(float) ** 2 / nL - 1e-9).astype(np.int64)
    band = round(delta * L) + 2
    k2 = lo[:, None] + np.arange(band)[None, :]
    xi = np.stack([np.broadcast_to(xi1[:, None], k2.shape), k2 / L], axis=-1)
    amps = cap_bump(delta, 2, xi)
    keep = np.any(amps != 0, axis=1)
    cap = parts.base_index(xi1[:, None])
    spec = BandedSpectrum(L, k1[keep], lo[keep], amps[keep])
    return spec, cap[keep]


@dataclass(frozen=True)
class SharpExampleReport:
    delta: float
    ps: tuple[float, ...]
    ratio: dict
    ratio_fine: dict
    numerator: dict
    cap_norms: dict
    oversample: float
    sample_shape: tuple[int, int]

    def to_json(self) -> dict:
        L = 4.0 / self.delta
        return {
            "delta": self.delta,
            "grid": {"L": L, "N": list(self.sample_shape)},
            "ratio": {str(p): self.ratio[p] for p in self.ps},
            "self_convergence": {
                str(p): {"coarse": self.ratio[p], "fine": self.ratio_fine.get(p)} for p in self.ps
            },
            "oversample": self.oversample,
        }


def _sharp_terms(spec: BandedSpectrum, cap: np.ndarray, ps, oversample: float):
    num = spec.power_integrals(ps, oversample)
    per_cap = {float(p): [] for p in ps}
    for c in np.unique(cap):
        sub = spec.select(cap == c).power_integrals(ps, oversample)
        for p in per_cap:
            per_cap[p].append(sub[p] ** (1.0 / p))
    ratio = {}
    numerator = {}
    for p in per_cap:
        numerator[p] = num[p] ** (1.0 / p)
        ratio[p] = numerator[p] / math.sqrt(sum(v * v for v in per_cap[p]))
    return ratio, numerator, per_cap


def sharp_example_ratio(delta: float, ps: Sequence[float], oversample: float = 2.0,
                        self_convergence: bool = True) -> SharpExampleReport:
    """Global-period decoupling ratios of the ``n = 2`` sharp example.

    With ``self_convergence`` the evaluation is repeated at twice the
    oversampling and both values are reported.
    """
    ps = tuple(float(p) for p in ps)
    spec, cap = sharp_example_spectrum(delta)
    ratio, numerator, per_cap = _sharp_terms(spec, cap, ps, oversample)
    fine = {}
    if self_convergence:
        fine, _, _ = _sharp_terms(spec, cap, ps, 2 * oversample)
    return SharpExampleReport(delta, ps, ratio, fine, numerator, per_cap, oversample,
                              spec.sample_shape(oversample))


def fit_log_slope(deltas: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of ``log(value)`` against ``log(1/delta)``."""
    x = np.log(1.0 / np.asarray(deltas, float))
    y = np.log(np.asarray(values, float))
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# point-mass configurations


def _as_fraction(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, Mapping):
        return Fraction(int(v["num"]), int(v["den"]))
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return Fraction(int(v[0]), int(v[1]))
    f = Fraction(float(v))
    return f


@dataclass(frozen=True)
class PointMassConfig:
    """Frequency points with exact rational coordinates, a set label per
    point, and half the (even) Lebesgue exponent ``k``."""

    points: tuple
    assignment: tuple
    k: int

    def __post_init__(self) -> None:
        pts = tuple(tuple(_as_fraction(c) for c in pt) for pt in self.points)
        if not pts:
            raise ValueError("need at least one point")
        dim = len(pts[0])
        if any(len(pt) != dim for pt in pts):
            raise ValueError("points must share one dimension")
        assignment = tuple(int(a) for a in self.assignment)
        if len(assignment) != len(pts):
            raise ValueError("one set label per point")
        if int(self.k) < 1:
            raise ValueError("k must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "k", int(self.k))

    @property
    def p(self) -> int:
        return 2 * self.k

    @property
    def dim(self) -> int:
        return len(self.points[0])

    @property
    def sets(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.assignment)))

    def indices_of(self, label: int) -> tuple[int, ...]:
        return tuple(i for i, a in enumerate(self.assignment) if a == label)

    def collisions(self, indices: Iterable[int] | None = None) -> list[tuple[tuple[int, ...], tuple[int, ...], tuple]]:
        """Pairs of distinct ``k``-multisets with equal sums."""
        idx = tuple(range(len(self.points))) if indices is None else tuple(indices)
        seen: dict = {}
        bad = []
        for combo in itertools.combinations_with_replacement(idx, self.k):
            s = _tuple_sum(self.points, combo)
            if s in seen:
                bad.append((seen[s], combo, s))
            else:
                seen[s] = combo
        return bad

    def check_generic(self, indices: Iterable[int] | None = None) -> None:
        bad = self.collisions(indices)
        if bad:
            a, b, s = bad[0]
            shown = "(" + ", ".join(str(c) for c in s) + ")"
            raise DegenerateConfigurationError(
                f"multisets {a} and {b} both sum to {shown}; {len(bad)} collision(s) in total"
            )

    def to_json(self) -> dict:
        return {
            "points": [[{"num": c.numerator, "den": c.denominator} for c in pt] for pt in self.points],
            "assignment": list(self.assignment),
            "k": self.k,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "PointMassConfig":
        return cls(tuple(tuple(pt) for pt in data["points"]), tuple(data["assignment"]), data["k"])


def _tuple_sum(points, combo) -> tuple:
    dim = len(points[0])
    return tuple(sum((points[i][a] for i in combo), Fraction(0)) for a in range(dim))


def appendix_b_config(k: int = 3) -> PointMassConfig:
    """Two points in the first set and one in the second, in the plane.

    The points ``(0,0), (1/2,0), (0,1/2)`` make every ``k``-fold sum
    ``(b/2, c/2)`` determine its multiset, so the configuration is generic.
    """
    half = Fraction(1, 2)
    return PointMassConfig(((0, 0), (half, 0), (0, half)), (0, 0, 1), k)


def sample_generic_config(n_points: int, assignment: Sequence[int], k: int, dim: int = 2,
                          seed: int = 0, bits: int = 24, max_tries: int = 100) -> PointMassConfig:
    """Random generic configuration with odd numerators over ``2^bits``."""
    rng = np.random.default_rng(seed)
    den = 1 << bits
    for _ in range(max_tries):
        nums = rng.integers(0, den // 2, size=(n_points, dim)) * 2 + 1
        pts = tuple(tuple(Fraction(int(v), den) for v in row) for row in nums)
        cfg = PointMassConfig(pts, tuple(assignment), k)
        if not cfg.collisions():
            return cfg
    raise DegenerateConfigurationError("could not sample a generic configuration")


def exp_sum_moment(config: PointMassConfig, subset: Iterable[int] | None = None) -> int:
    """``sum_s r(s)^2`` where ``r(s)`` counts ordered ``k``-tuples of the
    selected points summing to ``s``; brute force in rational arithmetic.

    ``subset`` lists point indices; by default every point is used.
    """
    idx = tuple(range(len(config.points))) if subset is None else tuple(sorted(set(subset)))
    if not idx:
        return 0
    config.check_generic(idx)
    counts: Counter = Counter()
    for tup in itertools.product(idx, repeat=config.k):
        counts[_tuple_sum(config.points, tup)] += 1
    return sum(c * c for c in counts.values())


@dataclass(frozen=True)
class PointMassBound:
    """Limit ratio ``M^{1/p} / (sum_i m_i^{2/p})^{1/2}`` of a configuration."""

    value: float
    expression: str
    total_moment: int
    set_moments: dict
    p: int

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "decimal": f"{self.value:.4f}",
            "expression": self.expression,
            "total_moment": self.total_moment,
            "set_moments": {str(k): v for k, v in self.set_moments.items()},
            "p": self.p,
        }


def point_mass_lower_bound(config: PointMassConfig) -> PointMassBound:
    """Lower bound for the decoupling constant of the sets labelled in ``config``."""
    if config.k < 2:
        raise ValueError("k must be at least 2")
    config.check_generic()
    k, p = config.k, config.p
    M = exp_sum_moment(config)
    if len(config.sets) == 1:
        # numerator and denominator are the same moment
        return PointMassBound(1.0, "1", M, {config.sets[0]: M}, p)
    moments = {s: exp_sum_moment(config, config.indices_of(s)) for s in config.sets}
    den = sum(m ** (1.0 / k) for m in moments.values())
    value = M ** (1.0 / p) / math.sqrt(den)
    terms = ["1" if m == 1 else f"{m}^(1/{k})" for m in moments.values()]
    expression = f"{M}^(1/{p})/({'+'.join(terms)})^(1/2)"
    return PointMassBound(value, expression, M, moments, p)


@dataclass(frozen=True)
class GridCheckReport:
    epsilon: float
    ratio: float
    exact: float
    relative_gap: float
    resolved_power: bool
    grid: dict
    gap_half_epsilon: float | None = None

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _point_mass_function(config: PointMassConfig, epsilon: float, grid: Grid):
    dim = config.dim
    bump = gamma_tensor(dim)
    freqs = np.stack(grid.freqs(), axis=-1)
    coeffs = np.zeros(grid.shape)
    owner = np.full(grid.shape, -1, dtype=np.int64)
    reach = bump.support_radius * epsilon
    for i, pt in enumerate(config.points):
        c = np.array([float(v) for v in pt])
        local = (freqs - c) / epsilon
        val = bump(local) if dim > 1 else bump(local[..., 0])
        near = np.all(np.abs(freqs - c) < reach, axis=-1)
        coeffs = coeffs + val
        owner[near] = config.assignment[i]
    masks = [owner == s for s in config.sets]
    return GridFunction.from_coeffs(grid, coeffs.astype(complex)), masks


def point_mass_grid_check(config: PointMassConfig, epsilon: float, samples_per_axis: int = 2048,
                          period: float | None = None, half_epsilon: bool = False) -> GridCheckReport:
    """Realize ``F_eps`` (a bump of width ``epsilon`` at every point) and
    measure its global-period decoupling ratio over the labelled sets.

    The period defaults to ``16/epsilon``.  ``resolved_power`` reports
    whether the grid resolves ``F^k``, in which case the midpoint sum is the
    exact period integral.
    """
    dim = config.dim
    pts = np.array([[float(v) for v in pt] for pt in config.points])
    bump = gamma_tensor(dim)
    reach = bump.support_radius * epsilon
    for i, j in itertools.combinations(range(len(pts)), 2):
        if np.max(np.abs(pts[i] - pts[j])) < 2 * reach:
            raise ValueError(f"bumps at points {i} and {j} overlap at epsilon={epsilon}")
    L = 16.0 / epsilon if period is None else float(period)
    lo = pts.min(axis=0) - reach
    hi = pts.max(axis=0) + reach
    center = tuple(round((a + b) / 2 * L) / L for a, b in zip(lo, hi))
    half = samples_per_axis / (2 * L)
    if np.any(lo < np.array(center) - half) or np.any(hi >= np.array(center) + half):
        raise ResolutionError("grid band does not contain the bumps")
    if samples_per_axis ** dim > 1 << 26:
        raise ResolutionError("grid too large")
    grid = Grid(dim, L, samples_per_axis, center)
    span = int(np.max(np.ceil((hi - lo) * L))) + 1
    resolved = samples_per_axis > config.k * (span - 1)
    exact = point_mass_lower_bound(config).value if len(config.sets) > 1 else 1.0

    def measure(eps: float) -> float:
        F, masks = _point_mass_function(config, eps, grid)
        return decoupling_ratio(DecouplingInstance(F, masks, config.p))

    ratio = measure(epsilon)
    gap_half = None
    if half_epsilon:
        gap_half = abs(measure(epsilon / 2) - exact) / exact
    return GridCheckReport(
        epsilon=epsilon,
        ratio=ratio,
        exact=exact,
        relative_gap=abs(ratio - exact) / exact,
        resolved_power=bool(resolved),
        grid=grid.to_json(),
        gap_half_epsilon=gap_half,
    )


# ---------------------------------------------------------------------------
# lower-bound search


@dataclass(frozen=True, eq=False)
class CapProfiles:
    """Spatial samples of the sharp cap profiles, one row per cap."""

    delta: float
    n_dims: int
    grid: Grid
    values: np.ndarray
    coeffs: np.ndarray

    @classmethod
    def build(cls, delta: float, n_dims: int, oversample: float = 2.0, max_bytes: int = 1 << 29) -> "CapProfiles":
        F = sharp_example(delta, n_dims, oversample=oversample)
        grid = F.grid
        parts = cap_partition(delta, n_dims)
        labels = parts.labels(grid)
        count = parts.count
        if count * math.prod(grid.shape) * 16 > max_bytes:
            raise ResolutionError("cap profiles exceed the memory budget")
        rows, coeffs = [], []
        for i in range(count):
            G = project(F, labels == i)
            rows.append(G.spatial_values.reshape(-1))
            coeffs.append(G.freq_coeffs)
        return cls(delta, n_dims, grid, np.array(rows), np.array(coeffs))

    @property
    def count(self) -> int:
        return self.values.shape[0]

    def cap_norms(self, p: float) -> np.ndarray:
        dV = self.grid.cell_volume
        return (np.sum(np.abs(self.values) ** p, axis=1) * dV) ** (1.0 / p)

    def ratio(self, z: np.ndarray, p: float, norms: np.ndarray | None = None) -> float:
        z = np.asarray(z, complex)
        norms = self.cap_norms(p) if norms is None else norms
        den = math.sqrt(float(np.sum(np.abs(z) ** 2 * norms ** 2)))
        if den == 0.0:
            raise UndefinedRatioError("all amplitudes vanish")
        F = z @ self.values
        num = (float(np.sum(np.abs(F) ** p)) * self.grid.cell_volume) ** (1.0 / p)
        return num / den

    def function(self, z: np.ndarray) -> GridFunction:
        coeffs = np.tensordot(np.asarray(z, complex), self.coeffs, axes=1)
        return GridFunction.from_coeffs(self.grid, coeffs)


@dataclass(frozen=True)
class LowerBoundWitness:
    """Best ratio found, how it was found, and a certificate reproducing it."""

    value: float
    generator: str
    parameters: dict
    certificate: dict

    def reevaluate(self) -> float:
        if self.generator == "point_mass":
            return point_mass_lower_bound(PointMassConfig.from_json(self.certificate)).value
        cert = self.certificate
        profiles = CapProfiles.build(cert["delta"], cert["n_dims"], cert["oversample"])
        z = np.array([complex(a, b) for a, b in cert["coefficients"]])
        F = profiles.function(z)
        parts = cap_partition(cert["delta"], cert["n_dims"])
        return decoupling_ratio(DecouplingInstance(F, parts, cert["p"]))

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "generator": self.generator,
            "parameters": self.parameters,
            "certificate": self.certificate,
        }


_STRATEGIES = ("all", "sharp_example", "single_cap", "random_search", "coordinate_ascent")


def search_lower_bound(delta: float, p: float, n_dims: int, strategy: str = "all", budget: int = 400,
                       seed: int = 0, restarts: int = 20, oversample: float = 2.0) -> LowerBoundWitness:
    """Search per-cap complex amplitudes of the sharp cap profiles.

    Candidates come from the sharp example (all amplitudes 1), a single cap,
    Gaussian random amplitudes, and coordinate ascent that rescales one cap
    by 2 or 1/2 or turns its phase by pi/8 at a time.  ``budget`` counts ratio
    evaluations; results are deterministic for a fixed ``seed``.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    if strategy not in _STRATEGIES:
        raise ValueError(f"strategy must be one of {_STRATEGIES}")
    profiles = CapProfiles.build(delta, n_dims, oversample)
    norms = profiles.cap_norms(p)
    rng = np.random.default_rng(seed)
    K = profiles.count
    used = 0
    best = (-math.inf, "", np.zeros(K, complex))

    def consider(z: np.ndarray, origin: str) -> float:
        nonlocal used, best
        used += 1
        r = profiles.ratio(z, p, norms)
        if r > best[0]:
            best = (r, origin, z.copy())
        return r

    single = np.zeros(K, complex)
    single[0] = 1.0
    consider(single, "single_cap")
    if strategy in ("all", "sharp_example", "coordinate_ascent"):
        consider(np.ones(K, complex), "sharp_example")
    if strategy in ("all", "random_search"):
        n_random = max(1, min(budget // 4, 50)) if strategy == "all" else budget - used
        for _ in range(max(0, n_random)):
            if used >= budget:
                break
            consider(rng.normal(size=K) + 1j * rng.normal(size=K), "random_search")
    if strategy in ("all", "coordinate_ascent"):
        moves = (2.0, 0.5, np.exp(1j * np.pi / 8), np.exp(-1j * np.pi / 8))
        for r in range(restarts):
            if used >= budget:
                break
            z = best[2].copy() if r == 0 else rng.normal(size=K) + 1j * rng.normal(size=K)
            current = consider(z, "random_search")
            improved = True
            while improved and used < budget:
                improved = False
                for i in range(K):
                    for m in moves:
                        if used >= budget:
                            break
                        trial = z.copy()
                        trial[i] *= m
                        if not np.any(trial):
                            continue
                        val = consider(trial, "random_search")
                        if val > current * (1 + 1e-12):
                            z, current, improved = trial, val, True
    value, origin, z = best
    certificate = {
        "delta": delta,
        "n_dims": n_dims,
        "p": p,
        "oversample": oversample,
        "coefficients": [[float(c.real), float(c.imag)] for c in z],
    }
    return LowerBoundWitness(
        value=float(value),
        generator=origin,
        parameters={"seed": seed, "delta": delta, "p": p, "n": n_dims, "strategy": strategy,
                    "budget": budget, "evaluations": used, "caps": K},
        certificate=certificate,
    )


# ---------------------------------------------------------------------------
# bilinear quotient


def interval_pieces(grid: Grid, interval: tuple[float, float], scale_n: int) -> list[np.ndarray]:
    """Masks of ``I x R`` for the dyadic subintervals of length ``2^-scale_n``."""
    a, b = interval
    width = 2.0 ** -scale_n
    count = round((b - a) / width)
    if count < 1 or abs(count * width - (b - a)) > 1e-12:
        raise ValueError(f"interval {interval} is not a union of length-{width} intervals")
    xi1 = grid.axis_freqs(0)
    tol = 1e-9 / grid.period[0]
    out = []
    for j in range(count):
        lo = a + j * width
        hi = lo + width
        if j == count - 1:
            sel = (xi1 >= lo - tol) & (xi1 <= hi + tol)
        else:
            sel = (xi1 >= lo - tol) & (xi1 < hi - tol)
        out.append(np.broadcast_to(sel[:, None], grid.shape).copy())
    return out


def _check_strip(F: GridFunction, interval, delta: float, tol: float) -> None:
    grid = F.grid
    freqs = np.stack(grid.freqs(), axis=-1)
    xi1 = freqs[..., 0]
    t = freqs[..., 1] - xi1 ** 2
    eps = 1e-9 / grid.period[0]
    ok = (xi1 >= interval[0] - eps) & (xi1 <= interval[1] + eps) & (t >= -eps) & (t <= delta + eps)
    mag = np.abs(F.freq_coeffs)
    top = float(mag.max()) if mag.size else 0.0
    if np.any(mag[~ok] > tol * top):
        raise DomainError(f"supp F_hat is not inside the strip over {interval}")


def bilinear_ratio(F1: GridFunction, F2: GridFunction, scale_n: int, p: float,
                   intervals=((0.0, 0.25), (0.5, 1.0)), tol: float = 0.0) -> float:
    """``| |F1 F2|^{1/2} |_p`` over ``(sum_I |P_I F1|_p^2 * sum_J |P_J F2|_p^2)^{1/4}``
    with ``I, J`` the length ``2^-scale_n`` subintervals of the two intervals
    and global-period norms."""
    if F1.grid != F2.grid or F1.grid.n_dims != 2:
        raise ValueError("both functions must live on one two-dimensional grid")
    delta = 4.0 ** -scale_n
    I1, I2 = intervals
    _check_strip(F1, I1, delta, tol)
    _check_strip(F2, I2, delta, tol)
    grid = F1.grid
    prod = np.sqrt(np.abs(F1.spatial_values * F2.spatial_values))
    num = lp_norm(prod, p=p, kind="global", grid=grid)
    s1 = sum(lp_norm(project(F1, m), p=p, kind="global") ** 2 for m in interval_pieces(grid, I1, scale_n))
    s2 = sum(lp_norm(project(F2, m), p=p, kind="global") ** 2 for m in interval_pieces(grid, I2, scale_n))
    den = (s1 * s2) ** 0.25
    if den == 0.0:
        raise UndefinedRatioError("one of the functions vanishes")
    return num / den


def bilinear_holder_bound(F1: GridFunction, F2: GridFunction, scale_n: int, p: float,
                          intervals=((0.0, 0.25), (0.5, 1.0))) -> float:
    """``(D(F1) D(F2))^{1/2}``, the per-instance bound for ``bilinear_ratio``
    from Holder's inequality, with ``D(Fi)`` the linear quotient of ``Fi`` over
    its own subintervals."""
    grid = F1.grid
    d1 = decoupling_ratio(DecouplingInstance(F1, interval_pieces(grid, intervals[0], scale_n), p))
    d2 = decoupling_ratio(DecouplingInstance(F2, interval_pieces(grid, intervals[1], scale_n), p))
    return math.sqrt(d1 * d2)


# ---------------------------------------------------------------------------
# broad/narrow split of a sum of complex numbers


@dataclass(frozen=True)
class BroadNarrowResult:
    """Outcome of the split: ``concentrated`` names the top index,
    ``bilinear`` a non-neighbouring pair maximizing ``|z' z''|^{1/2}``."""

    case: str
    alpha_star: int
    pair: tuple[int, int] | None
    lhs: float
    bound: float
    constant: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.bound * (1 + 1e-12) + 1e-300


def broad_narrow_split(z: Sequence[complex], K: int | None = None) -> BroadNarrowResult:
    """Case split for ``|sum z_alpha|`` over ``K`` consecutive intervals.

    ``alpha*`` maximizes ``|z|``; the significant set keeps
    ``|z_alpha| >= |z_alpha*| / K``.  If it stays within the neighbours
    ``|alpha - alpha*| <= 1`` the sum is at most ``4 max |z|``, otherwise it
    is at most ``K^{3/2} max_{alpha' !~ alpha''} |z' z''|^{1/2}``.
    """
    z = np.asarray(z, complex)
    K = len(z) if K is None else int(K)
    if K != len(z) or K < 2:
        raise ValueError("need K = len(z) >= 2")
    mag = np.abs(z)
    star = int(np.argmax(mag))
    lhs = float(abs(np.sum(z)))
    big = np.flatnonzero(mag >= mag[star] / K)
    if np.all(np.abs(big - star) <= 1):
        return BroadNarrowResult("concentrated", star, None, lhs, 4.0 * float(mag[star]), 4.0)
    best, pair = -1.0, (0, 0)
    for a in range(K):
        for b in range(a + 2, K):
            v = math.sqrt(mag[a]) * math.sqrt(mag[b])  # avoids underflow of the product
            if v > best:
                best, pair = v, (a, b)
    constant = K ** 1.5
    return BroadNarrowResult("bilinear", star, pair, lhs, constant * best, constant)


def dumps_witness(w: LowerBoundWitness) -> str:
    return json.dumps(w.to_json(), sort_keys=True)
