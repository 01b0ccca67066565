"""Periodic grids, discrete Fourier transforms, frequency regions and norms.

Functions on R^n are modelled as periodic on a box of side ``period``.  A
``Grid`` samples one period at ``N`` points per axis, ``x_j = j * L / N`` for
``j`` in ``[-N/2, N/2)``, and resolves the frequency band
``band_center + (1/L) * [-N/2, N/2)`` per axis.

Normalization (kernel ``e(t) = exp(2 pi i t)``)::

    coeff(xi) = dV * sum_x F(x) e(-x . xi)
    F(x)      = (1 / |box|) * sum_xi coeff(xi) e(x . xi)

so ``sum |F|^2 dV == sum |coeff|^2 / |box|``.  Coefficient arrays are stored in
FFT order, spatial arrays in natural order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ResolutionError",
    "LatticeError",
    "Grid",
    "GridFunction",
    "FrequencyBox",
    "FrequencyRegion",
    "CapPartition",
    "LabelledPartition",
    "AffineFreqMap",
    "AffineImagePartition",
    "WeightSpec",
    "SpatialBox",
    "Ball",
    "WeightReport",
    "dft_forward",
    "dft_inverse",
    "project",
    "cap_partition",
    "parabolic_map",
    "apply_affine_freq",
    "lp_norm",
    "weight_values",
    "weighted_integrals",
    "check_weight_inequalities",
    "inner",
    "write_gridfunction",
    "read_gridfunction",
    "MAGIC",
]

MAGIC = b"DECOUPLAB-GF-v1\n"
_REL_TOL = 1e-9


class ResolutionError(ValueError):
    """Raised when a grid cannot resolve the requested frequencies."""


class LatticeError(ValueError):
    """Raised when an affine map does not preserve the frequency lattice."""


def _as_tuple(value, n_dims: int, kind=float) -> tuple:
    if np.ndim(value) == 0:
        return tuple(kind(value) for _ in range(n_dims))
    out = tuple(kind(v) for v in value)
    if len(out) != n_dims:
        raise ValueError(f"expected {n_dims} entries, got {len(out)}")
    return out


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid.

    Parameters
    ----------
    n_dims : int
        Ambient dimension.
    period : float or sequence of float
        Spatial period per axis.
    samples_per_axis : int or sequence of int
        Power-of-two sample counts.
    band_center : sequence of float, optional
        Center of the resolved frequency band; must lie on the lattice
        ``(1/L) Z^n`` so that every represented function is periodic.
    """

    n_dims: int
    period: tuple[float, ...]
    samples_per_axis: tuple[int, ...]
    band_center: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.n_dims < 1:
            raise ValueError("n_dims must be positive")
        object.__setattr__(self, "period", _as_tuple(self.period, self.n_dims))
        object.__setattr__(
            self, "samples_per_axis", _as_tuple(self.samples_per_axis, self.n_dims, int)
        )
        center = self.band_center if len(self.band_center) else 0.0
        object.__setattr__(self, "band_center", _as_tuple(center, self.n_dims))
        for L, N in zip(self.period, self.samples_per_axis):
            if not L > 0:
                raise ValueError("period must be positive")
            if N < 1 or N & (N - 1):
                raise ValueError(f"samples_per_axis must be a power of two, got {N}")
        for c, L in zip(self.band_center, self.period):
            k = c * L
            if abs(k - round(k)) > 1e-9 * max(1.0, abs(k)):
                raise LatticeError(f"band center {c} is not on the lattice (1/{L})Z")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.samples_per_axis

    @property
    def freq_spacing(self) -> tuple[float, ...]:
        return tuple(1.0 / L for L in self.period)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / N for L, N in zip(self.period, self.samples_per_axis))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def box_volume(self) -> float:
        return float(np.prod(self.period))

    def band(self) -> tuple[tuple[float, float], ...]:
        """Half-open resolvable frequency interval per axis."""
        return tuple(
            (c - N / (2 * L), c + N / (2 * L))
            for c, L, N in zip(self.band_center, self.period, self.samples_per_axis)
        )

    def axis_points(self, axis: int) -> np.ndarray:
        N = self.samples_per_axis[axis]
        return np.arange(-N // 2, N // 2) * self.spacing[axis]

    def axis_freqs(self, axis: int) -> np.ndarray:
        """Frequencies along ``axis`` in FFT order."""
        N = self.samples_per_axis[axis]
        L = self.period[axis]
        return self.band_center[axis] + np.fft.fftfreq(N, d=1.0 / N) / L

    def axis_indices(self, axis: int) -> np.ndarray:
        """Integer lattice offsets ``(xi - center) * L`` in FFT order."""
        N = self.samples_per_axis[axis]
        return np.rint(np.fft.fftfreq(N, d=1.0 / N)).astype(np.int64)

    def points(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis_points(a) for a in range(self.n_dims)], indexing="ij")

    def freqs(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis_freqs(a) for a in range(self.n_dims)], indexing="ij")

    def resolves(self, lo: Sequence[float], hi: Sequence[float]) -> bool:
        """Whether the closed box ``[lo, hi]`` lies strictly inside the band."""
        for (blo, bhi), a, b in zip(self.band(), lo, hi):
            if a < blo - 1e-12 or b >= bhi:
                return False
        return True

    def min_image(self, x: np.ndarray, axis: int) -> np.ndarray:
        L = self.period[axis]
        return x - L * np.round(x / L)

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.n_dims, self.period, tuple(N * factor for N in self.samples_per_axis), self.band_center)

    def to_json(self) -> dict:
        return {
            "n_dims": self.n_dims,
            "period": list(self.period),
            "samples_per_axis": list(self.samples_per_axis),
            "band_center": list(self.band_center),
            "normalization": "coeff = dV * sum F e(-x.xi); F = sum coeff e(x.xi) / |box|",
            "spatial_order": "natural, x_j = j*L/N, j in [-N/2, N/2)",
            "coeff_order": "fft",
        }


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.complex128)
    a.setflags(write=False)
    return a


def _center_phase(grid: Grid, sign: float) -> np.ndarray | None:
    if not any(grid.band_center):
        return None
    phase = np.zeros(grid.shape)
    for a in range(grid.n_dims):
        shape = [1] * grid.n_dims
        shape[a] = -1
        phase = phase + (grid.axis_points(a) * grid.band_center[a]).reshape(shape)
    return np.exp(sign * 2j * np.pi * phase)


def _forward(grid: Grid, spatial: np.ndarray) -> np.ndarray:
    data = spatial
    phase = _center_phase(grid, -1.0)
    if phase is not None:
        data = data * phase
    return np.fft.fftn(np.fft.ifftshift(data)) * grid.cell_volume


def _inverse(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    total = int(np.prod(grid.shape))
    data = np.fft.fftshift(np.fft.ifftn(coeffs)) * (total / grid.box_volume)
    phase = _center_phase(grid, 1.0)
    if phase is not None:
        data = data * phase
    return data


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Complex function on a ``Grid`` with both representations available.

    Construct with :meth:`from_spatial` or :meth:`from_coeffs`; the other
    representation is computed on first access and cached.
    """

    grid: Grid
    _spatial: np.ndarray | None = field(default=None, repr=False)
    _coeffs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self._spatial is None and self._coeffs is None:
            raise ValueError("GridFunction needs spatial values or coefficients")
        for arr in (self._spatial, self._coeffs):
            if arr is not None and arr.shape != self.grid.shape:
                raise ValueError(f"array shape {arr.shape} does not match grid {self.grid.shape}")

    @classmethod
    def from_spatial(cls, grid: Grid, values: np.ndarray) -> "GridFunction":
        return cls(grid, _spatial=_freeze(values))

    @classmethod
    def from_coeffs(cls, grid: Grid, coeffs: np.ndarray) -> "GridFunction":
        return cls(grid, _coeffs=_freeze(coeffs))

    @classmethod
    def zeros(cls, grid: Grid) -> "GridFunction":
        return cls.from_coeffs(grid, np.zeros(grid.shape, dtype=complex))

    @property
    def sync_flag(self) -> str:
        if self._spatial is not None and self._coeffs is not None:
            return "both"
        return "spatial" if self._spatial is not None else "coeffs"

    @property
    def spatial_values(self) -> np.ndarray:
        if self._spatial is None:
            object.__setattr__(self, "_spatial", _freeze(_inverse(self.grid, self._coeffs)))
        return self._spatial

    @property
    def freq_coeffs(self) -> np.ndarray:
        if self._coeffs is None:
            object.__setattr__(self, "_coeffs", _freeze(_forward(self.grid, self._spatial)))
        return self._coeffs

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _same_grid(self, other)
        return GridFunction.from_coeffs(self.grid, self.freq_coeffs + other.freq_coeffs)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _same_grid(self, other)
        return GridFunction.from_coeffs(self.grid, self.freq_coeffs - other.freq_coeffs)

    def scale(self, factor: complex) -> "GridFunction":
        return GridFunction.from_coeffs(self.grid, self.freq_coeffs * factor)

    def support_mask(self, tol: float = 0.0) -> np.ndarray:
        mag = np.abs(self.freq_coeffs)
        return mag > tol * (mag.max() if mag.size else 0.0)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.freq_coeffs) ** 2) / self.grid.box_volume))


def _same_grid(a: GridFunction, b: GridFunction) -> None:
    if a.grid != b.grid:
        raise ValueError("grid mismatch")


def dft_forward(F: GridFunction) -> GridFunction:
    """Return ``F`` with its coefficients computed from spatial values."""
    return GridFunction(F.grid, _spatial=F.spatial_values, _coeffs=_freeze(_forward(F.grid, F.spatial_values)))


def dft_inverse(F: GridFunction) -> GridFunction:
    """Return ``F`` with its spatial values recomputed from coefficients."""
    return GridFunction(F.grid, _spatial=_freeze(_inverse(F.grid, F.freq_coeffs)), _coeffs=F.freq_coeffs)


def inner(F: GridFunction, G: GridFunction) -> complex:
    """Discrete ``<F, G> = sum F conj(G) dV`` evaluated in coefficient space."""
    _same_grid(F, G)
    return complex(np.vdot(G.freq_coeffs, F.freq_coeffs) / F.grid.box_volume)


# ---------------------------------------------------------------------------
# frequency regions and partitions


@dataclass(frozen=True)
class FrequencyBox:
    """Axis-aligned box ``[lo, hi)``; axes flagged in ``closed_upper`` include ``hi``."""

    ident: str
    center: tuple[float, ...]
    half_widths: tuple[float, ...]
    closed_upper: tuple[bool, ...] = ()

    def __post_init__(self) -> None:
        n = len(self.center)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "half_widths", _as_tuple(self.half_widths, n))
        flags = self.closed_upper if len(self.closed_upper) else (False,) * n
        object.__setattr__(self, "closed_upper", tuple(bool(f) for f in flags))
        if any(h < 0 for h in self.half_widths):
            raise ValueError("half widths must be nonnegative")

    @classmethod
    def from_bounds(cls, ident: str, lo: Sequence[float], hi: Sequence[float], closed_upper=()) -> "FrequencyBox":
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        return cls(ident, tuple((lo + hi) / 2), tuple((hi - lo) / 2), tuple(closed_upper))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.half_widths)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.half_widths)

    def mask(self, grid: Grid) -> np.ndarray:
        out = np.ones(grid.shape, dtype=bool)
        for a in range(grid.n_dims):
            f = grid.axis_freqs(a)
            tol = _REL_TOL / grid.period[a]
            lo, hi = self.lo[a], self.hi[a]
            inside = f >= lo - tol
            inside &= (f <= hi + tol) if self.closed_upper[a] else (f < hi - tol)
            shape = [1] * grid.n_dims
            shape[a] = -1
            out = out & inside.reshape(shape)
        return out

    def contains(self, xi: Sequence[float]) -> bool:
        for a, x in enumerate(xi):
            if x < self.lo[a] - 1e-12:
                return False
            if (x > self.hi[a] + 1e-12) if self.closed_upper[a] else (x >= self.hi[a] - 1e-12):
                return False
        return True


@dataclass(frozen=True)
class FrequencyRegion:
    """A union of pairwise disjoint frequency boxes."""

    boxes: tuple[FrequencyBox, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", tuple(self.boxes))
        for i, a in enumerate(self.boxes):
            for b in self.boxes[i + 1:]:
                overlap = np.minimum(a.hi, b.hi) - np.maximum(a.lo, b.lo)
                if np.all(overlap > 1e-12):
                    raise ValueError(f"boxes {a.ident} and {b.ident} overlap")

    @classmethod
    def single(cls, box: FrequencyBox) -> "FrequencyRegion":
        return cls((box,))

    def mask(self, grid: Grid) -> np.ndarray:
        out = np.zeros(grid.shape, dtype=bool)
        for b in self.boxes:
            out |= b.mask(grid)
        return out

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.min([b.lo for b in self.boxes], axis=0)
        hi = np.max([b.hi for b in self.boxes], axis=0)
        return lo, hi


class LabelledPartition:
    """Base for partitions that label lattice modes with piece indices.

    Subclasses implement ``labels(grid)`` returning an integer array over the
    coefficient lattice, ``-1`` for modes in no piece.
    """

    count: int

    def labels(self, grid: Grid) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def piece_masks(self, grid: Grid) -> list[np.ndarray]:
        lab = self.labels(grid)
        return [lab == i for i in range(self.count)]


@dataclass(frozen=True)
class RegionPartition(LabelledPartition):
    """Partition given by an explicit list of frequency regions."""

    regions: tuple[FrequencyRegion, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "regions", tuple(self.regions))

    @property
    def count(self) -> int:  # type: ignore[override]
        return len(self.regions)

    def labels(self, grid: Grid) -> np.ndarray:
        lab = np.full(grid.shape, -1, dtype=np.int64)
        for i, region in enumerate(self.regions):
            m = region.mask(grid)
            if np.any(lab[m] >= 0):
                raise ValueError("regions of a partition overlap on the lattice")
            lab[m] = i
        return lab


__all__.append("RegionPartition")


@dataclass(frozen=True)
class CapPartition(LabelledPartition):
    """Caps of the vertical ``delta``-neighbourhood of the paraboloid.

    The neighbourhood is ``{(xi, |xi|^2 + t): xi in [0,1]^{n-1}, t in [0, delta]}``;
    caps sit over the dyadic cubes of side ``delta ** 0.5``.
    """

    delta: float
    n_dims: int
    base_cubes: tuple[tuple[float, ...], ...] = field(repr=False, default=())

    def __post_init__(self) -> None:
        side = _dyadic_side(self.delta)
        m = round(1 / side)
        cubes = tuple(
            tuple(float(i * side) for i in idx)
            for idx in np.ndindex(*([m] * (self.n_dims - 1)))
        )
        object.__setattr__(self, "base_cubes", cubes)

    @property
    def side(self) -> float:
        return math.sqrt(self.delta)

    @property
    def per_axis(self) -> int:
        return round(1 / self.side)

    @property
    def count(self) -> int:  # type: ignore[override]
        return len(self.base_cubes)

    def cap_box(self, index: int) -> FrequencyBox:
        """Axis-aligned bounding box of cap ``index``."""
        lo_base = np.asarray(self.base_cubes[index])
        hi_base = lo_base + self.side
        near = np.where(lo_base >= 0, lo_base, 0.0)
        hmin = float(np.sum(near ** 2))
        hmax = float(np.sum(hi_base ** 2))
        lo = list(lo_base) + [hmin]
        hi = list(hi_base) + [hmax + self.delta]
        closed = [bool(abs(h - 1.0) < 1e-12) for h in hi_base] + [True]
        return FrequencyBox.from_bounds(f"cap{index}", lo, hi, closed)

    def caps(self) -> list[FrequencyBox]:
        return [self.cap_box(i) for i in range(self.count)]

    def region(self) -> FrequencyRegion:
        return FrequencyRegion(tuple(self.caps()))

    def padding_factor(self) -> float:
        """Largest ratio of bounding-box volume to cap volume."""
        worst = 1.0
        for i in range(self.count):
            b = self.cap_box(i)
            height = b.hi[-1] - b.lo[-1]
            worst = max(worst, height / self.delta)
        return worst

    def base_index(self, xi_bar: np.ndarray) -> np.ndarray:
        """Cap index of base points (last axis of ``xi_bar`` = coordinates)."""
        xi_bar = np.asarray(xi_bar, float)
        m = self.per_axis
        idx = np.floor(xi_bar / self.side + 1e-9).astype(np.int64)
        idx = np.where(np.abs(xi_bar - 1.0) < 1e-12, m - 1, idx)
        inside = np.all((idx >= 0) & (idx < m) & (xi_bar >= -1e-12) & (xi_bar <= 1 + 1e-12), axis=-1)
        flat = np.zeros(idx.shape[:-1], dtype=np.int64)
        for a in range(idx.shape[-1]):
            flat = flat * m + np.clip(idx[..., a], 0, m - 1)
        return np.where(inside, flat, -1)

    def in_neighbourhood(self, xi: np.ndarray) -> np.ndarray:
        """Exact membership of points (last axis = coordinates) in N(delta)."""
        xi = np.asarray(xi, float)
        bar = xi[..., :-1]
        t = xi[..., -1] - np.sum(bar ** 2, axis=-1)
        ok = np.all((bar >= -1e-12) & (bar <= 1 + 1e-12), axis=-1)
        return ok & (t >= -1e-12) & (t <= self.delta + 1e-12)

    def labels(self, grid: Grid) -> np.ndarray:
        """Cap index of each lattice mode by its base point; the vertical
        extent is the cap's bounding box, so the labelled sets partition the
        slab over ``[0,1]^{n-1}`` and contain every mode of N(delta)."""
        if grid.n_dims != self.n_dims:
            raise ValueError("grid dimension mismatch")
        freqs = np.stack(grid.freqs(), axis=-1)
        lab = self.base_index(freqs[..., :-1])
        top = np.full(grid.shape, -np.inf)
        bottom = np.full(grid.shape, np.inf)
        for i in range(self.count):
            b = self.cap_box(i)
            sel = lab == i
            bottom[sel] = b.lo[-1]
            top[sel] = b.hi[-1]
        tol = _REL_TOL / grid.period[-1]
        vertical = (freqs[..., -1] >= bottom - tol) & (freqs[..., -1] <= top + tol)
        return np.where(vertical, lab, -1)

    def neighbourhood_mask(self, grid: Grid) -> np.ndarray:
        return self.in_neighbourhood(np.stack(grid.freqs(), axis=-1))

    def check_resolved(self, grid: Grid) -> None:
        lo, hi = self.region().bounds()
        if not grid.resolves(lo, hi):
            raise ResolutionError(f"grid band {grid.band()} does not contain cap hull {lo}..{hi}")


def _dyadic_side(delta: float) -> float:
    if not delta > 0 or delta > 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    k = math.log(delta, 4)
    if abs(k - round(k)) > 1e-12:
        raise ValueError(f"delta = {delta} is not of the form 4^-k")
    return 2.0 ** round(k)


def cap_partition(delta: float, n_dims: int) -> CapPartition:
    """Partition of N(delta) in R^n into caps over dyadic ``delta**0.5`` cubes."""
    if n_dims < 2:
        raise ValueError("n_dims must be at least 2")
    return CapPartition(delta, n_dims)


def project(F: GridFunction, U) -> GridFunction:
    """Fourier projection onto a region, a box, or a boolean mode mask.

    Raises
    ------
    ResolutionError
        If the region reaches outside the resolvable band of ``F.grid``.
    """
    grid = F.grid
    if isinstance(U, np.ndarray):
        mask = U.astype(bool)
    else:
        region = FrequencyRegion.single(U) if isinstance(U, FrequencyBox) else U
        lo, hi = region.bounds()
        if not grid.resolves(lo, hi):
            raise ResolutionError(f"region {lo}..{hi} exceeds band {grid.band()}")
        mask = region.mask(grid)
    return GridFunction.from_coeffs(grid, np.where(mask, F.freq_coeffs, 0))


# ---------------------------------------------------------------------------
# affine frequency maps


@dataclass(frozen=True)
class AffineFreqMap:
    """The frequency map ``xi -> matrix @ xi + shift``."""

    matrix: np.ndarray
    shift: np.ndarray

    def __post_init__(self) -> None:
        A = np.array(self.matrix, dtype=float)
        v = np.array(self.shift, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != v.size:
            raise ValueError("matrix must be square and match the shift")
        if abs(np.linalg.det(A)) <= 1e-300:
            raise ValueError("matrix must be invertible")
        A.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "shift", v)

    @classmethod
    def identity(cls, n_dims: int) -> "AffineFreqMap":
        return cls(np.eye(n_dims), np.zeros(n_dims))

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, float)
        return xi @ self.matrix.T + self.shift

    def inverse(self) -> "AffineFreqMap":
        Ainv = np.linalg.inv(self.matrix)
        return AffineFreqMap(Ainv, -Ainv @ self.shift)

    def compose(self, other: "AffineFreqMap") -> "AffineFreqMap":
        """``self`` after ``other``."""
        return AffineFreqMap(self.matrix @ other.matrix, self.matrix @ other.shift + self.shift)

    def lattice_factorization(self) -> tuple[tuple[Fraction, ...], np.ndarray]:
        """Split ``matrix = diag(g) @ U`` with ``U`` integer unimodular.

        ``g_i`` is the rational gcd of row ``i``.  Raises ``LatticeError`` when
        the entries are not rational with small denominators or ``U`` is not
        unimodular.
        """
        rows = []
        gains = []
        for row in self.matrix:
            fr = [Fraction(float(a)).limit_denominator(1 << 20) for a in row]
            if any(abs(float(f) - a) > 1e-12 * max(1.0, abs(a)) for f, a in zip(fr, row)):
                raise LatticeError("matrix entries must be rationals")
            nums = [f.numerator for f in fr if f != 0]
            dens = [f.denominator for f in fr if f != 0]
            g = Fraction(math.gcd(*nums), math.lcm(*dens)) if nums else Fraction(0)
            if g == 0:
                raise LatticeError("zero row")
            gains.append(g)
            rows.append([int(f / g) for f in fr])
        U = np.array(rows, dtype=np.int64)
        if abs(round(np.linalg.det(U))) != 1:
            raise LatticeError("row-normalized matrix is not unimodular")
        return tuple(gains), U


def parabolic_map(c: Sequence[float], sigma: float) -> AffineFreqMap:
    """Affine map sending the paraboloid over the cube at ``c`` of side
    ``sigma ** 0.5`` onto the paraboloid over ``[0, 1]^{n-1}``.

    ``(xi_bar, xi_n) -> ((xi_bar - c) / sigma**0.5, (xi_n - 2 xi_bar.c + |c|^2) / sigma)``
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if sigma > 1:
        raise ValueError("sigma must be at most 1")
    c = np.asarray(c, float).reshape(-1)
    d = c.size
    root = math.sqrt(sigma)
    A = np.zeros((d + 1, d + 1))
    A[:d, :d] = np.eye(d) / root
    A[d, :d] = -2 * c / sigma
    A[d, d] = 1 / sigma
    v = np.concatenate([-c / root, [float(c @ c) / sigma]])
    return AffineFreqMap(A, v)


def apply_affine_freq(
    F: GridFunction,
    T: AffineFreqMap,
    mode: str = "exact",
    target: Grid | None = None,
) -> GridFunction:
    """Return ``G`` with ``G_hat = F_hat o T^{-1}``.

    In ``exact`` mode ``T`` must preserve lattices: ``matrix = diag(g) U`` with
    ``U`` integer unimodular.  The output lives on the grid of period
    ``L_i / g_i`` with the same sample counts and band center ``T(center)``,
    every coefficient keeps its value and moves to ``T(xi)``, and on that
    torus ``|G|_p = |det A|^{1 - 1/p} |F|_p`` holds to rounding because the
    samples of ``G`` are a permutation of those of ``F`` times ``|det A|``.

    In ``resample`` mode ``G(x) = |det A| e(x.v) F(A^T x)`` is evaluated
    directly from the nonzero coefficients of ``F`` on ``target``; this is
    exact for the continuous function but costs ``modes x points``.
    """
    grid = F.grid
    if T.matrix.shape[0] != grid.n_dims:
        raise ValueError("map dimension does not match grid")
    if mode == "exact":
        return _affine_exact(F, T)
    if mode == "resample":
        if target is None:
            raise ValueError("resample mode needs a target grid")
        return _affine_resample(F, T, target)
    raise ValueError(f"unknown mode {mode!r}")


def _affine_exact(F: GridFunction, T: AffineFreqMap) -> GridFunction:
    grid = F.grid
    gains, U = T.lattice_factorization()
    new_period = tuple(L / float(g) for L, g in zip(grid.period, gains))
    center = np.asarray(grid.band_center)
    new_center = T(center)
    new_grid = Grid(grid.n_dims, new_period, grid.samples_per_axis, tuple(new_center))
    coeffs = F.freq_coeffs
    nz = np.nonzero(coeffs)
    if len(nz[0]) == 0:
        return GridFunction.zeros(new_grid)
    offsets = np.stack([grid.axis_indices(a)[nz[a]] for a in range(grid.n_dims)], axis=-1)
    moved = offsets @ U.T
    out = np.zeros(grid.shape, dtype=complex)
    idx = []
    for a in range(grid.n_dims):
        N = grid.samples_per_axis[a]
        m = moved[:, a]
        if np.any(m < -N // 2) or np.any(m >= N // 2):
            raise ResolutionError("mapped support leaves the resolvable band")
        idx.append(np.mod(m, N))
    out[tuple(idx)] = coeffs[nz]
    return GridFunction.from_coeffs(new_grid, out)


def _affine_resample(F: GridFunction, T: AffineFreqMap, target: Grid) -> GridFunction:
    grid = F.grid
    coeffs = F.freq_coeffs
    nz = np.nonzero(coeffs)
    xi = np.stack([grid.axis_freqs(a)[nz[a]] for a in range(grid.n_dims)], axis=-1)
    amp = coeffs[nz] / grid.box_volume
    eta = T(xi)
    pts = np.stack([p.ravel() for p in target.points()], axis=-1)
    values = np.zeros(pts.shape[0], dtype=complex)
    chunk = max(1, 2_000_000 // max(1, len(amp)))
    for s in range(0, pts.shape[0], chunk):
        values[s:s + chunk] = np.exp(2j * np.pi * pts[s:s + chunk] @ eta.T) @ amp
    return GridFunction.from_spatial(target, values.reshape(target.shape) * abs(T.det))


@dataclass(frozen=True)
class AffineImagePartition(LabelledPartition):
    """Image of a partition under an affine frequency map."""

    base: LabelledPartition
    T: AffineFreqMap
    source_grid: Grid

    @property
    def count(self) -> int:  # type: ignore[override]
        return self.base.count

    def labels(self, grid: Grid) -> np.ndarray:
        freqs = np.stack(grid.freqs(), axis=-1)
        pulled = self.T.inverse()(freqs)
        src = self.source_grid
        base_labels = self.base.labels(src)
        idx = []
        valid = np.ones(grid.shape, dtype=bool)
        for a in range(src.n_dims):
            k = (pulled[..., a] - src.band_center[a]) * src.period[a]
            kr = np.rint(k)
            valid &= np.abs(k - kr) < 1e-6
            N = src.samples_per_axis[a]
            valid &= (kr >= -N // 2) & (kr < N // 2)
            idx.append(np.mod(kr.astype(np.int64), N))
        lab = base_labels[tuple(idx)]
        return np.where(valid, lab, -1)


# ---------------------------------------------------------------------------
# spatial regions, weights and norms


@dataclass(frozen=True)
class SpatialBox:
    """Half-open box ``center +/- side/2`` (``side`` scalar or per axis)."""

    center: tuple[float, ...]
    side: float | tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "side", _as_tuple(self.side, len(self.center)))

    @property
    def volume(self) -> float:
        return float(np.prod(self.side))

    @property
    def radius(self) -> float:
        """Scale used by the adapted weight (side length)."""
        return float(max(self.side))

    def mask(self, grid: Grid) -> np.ndarray:
        out = np.ones(grid.shape, dtype=bool)
        for a in range(grid.n_dims):
            d = grid.min_image(grid.axis_points(a) - self.center[a], a)
            half = self.side[a] / 2
            tol = 1e-9 * grid.spacing[a]
            inside = (d >= -half - tol) & (d < half - tol)
            shape = [1] * grid.n_dims
            shape[a] = -1
            out = out & inside.reshape(shape)
        return out

    def subdivide(self, factor: int) -> list["SpatialBox"]:
        sub = tuple(s / factor for s in self.side)
        lo = np.asarray(self.center) - np.asarray(self.side) / 2
        out = []
        for idx in np.ndindex(*([factor] * len(self.center))):
            c = lo + (np.asarray(idx) + 0.5) * np.asarray(sub)
            out.append(SpatialBox(tuple(c), sub))
        return out


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def volume(self) -> float:
        n = len(self.center)
        return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * self.radius ** n

    def mask(self, grid: Grid) -> np.ndarray:
        d2 = np.zeros(grid.shape)
        for a in range(grid.n_dims):
            d = grid.min_image(grid.axis_points(a) - self.center[a], a)
            shape = [1] * grid.n_dims
            shape[a] = -1
            d2 = d2 + (d ** 2).reshape(shape)
        return d2 <= self.radius ** 2 * (1 + 1e-12)


@dataclass(frozen=True)
class WeightSpec:
    """Weight ``(1 + |x - center| / radius) ** -exponent``; exponent defaults to ``100 n``."""

    center: tuple[float, ...]
    radius: float
    exponent: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.exponent is None:
            object.__setattr__(self, "exponent", 100.0 * len(self.center))

    @classmethod
    def for_region(cls, region, exponent: float | None = None) -> "WeightSpec":
        r = region.radius if isinstance(region, (SpatialBox, Ball)) else float(region)
        return cls(region.center, r, exponent)

    def log_value(self, x: np.ndarray) -> np.ndarray:
        """``log w`` at points ``x`` (last axis = coordinates), no periodization."""
        d = np.linalg.norm(np.asarray(x, float) - np.asarray(self.center), axis=-1)
        return -self.exponent * np.log1p(d / self.radius)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_value(x))


def weight_values(grid: Grid, w: WeightSpec) -> np.ndarray:
    """Weight sampled on the grid using minimum-image distance to the center."""
    d2 = np.zeros(grid.shape)
    for a in range(grid.n_dims):
        d = grid.min_image(grid.axis_points(a) - w.center[a], a)
        shape = [1] * grid.n_dims
        shape[a] = -1
        d2 = d2 + (d ** 2).reshape(shape)
    return np.exp(-w.exponent * np.log1p(np.sqrt(d2) / w.radius))


def weighted_integrals(
    values: np.ndarray,
    grid: Grid,
    centers: np.ndarray,
    radius: float,
    exponent: float | None = None,
) -> np.ndarray:
    """``sum_x values(x) w(x - c) dV`` for every row ``c`` of ``centers``.

    All weights share ``radius`` and ``exponent``, so the sums are one
    circular correlation of ``values`` with the weight centred at the origin,
    read off at the grid points of the centers.  Centers must be grid points;
    otherwise each sum is evaluated directly.  ``values`` may carry leading
    batch axes.
    """
    values = np.asarray(values, dtype=float)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    n = grid.n_dims
    origin = WeightSpec((0.0,) * n, radius, exponent)
    steps = centers / np.asarray(grid.spacing)
    idx = np.rint(steps)
    on_grid = np.all(np.abs(steps - idx) < 1e-9)
    if not on_grid:
        out = np.empty(values.shape[:-n] + (centers.shape[0],))
        for i, c in enumerate(centers):
            w = weight_values(grid, WeightSpec(tuple(c), radius, origin.exponent))
            out[..., i] = np.sum(values * w, axis=tuple(range(-n, 0))) * grid.cell_volume
        return out
    kernel = np.fft.ifftshift(weight_values(grid, origin))
    axes = tuple(range(-n, 0))
    spectrum = np.fft.fftn(np.fft.ifftshift(values, axes=axes), axes=axes)
    corr = np.fft.ifftn(spectrum * np.conj(np.fft.fftn(kernel)), axes=axes).real
    corr = corr * grid.cell_volume
    # correlation index 0 sits at x = 0; grid index of x = j * h is j mod N
    index = tuple(np.mod(idx[:, a].astype(np.int64), grid.shape[a]) for a in range(n))
    return corr[(Ellipsis,) + index]


_NORM_KINDS = ("local", "weighted", "local_avg", "weighted_avg", "global")


def lp_norm(
    F: GridFunction | np.ndarray,
    region=None,
    p: float = 2.0,
    kind: str = "local",
    w: WeightSpec | None = None,
    grid: Grid | None = None,
) -> float:
    """Midpoint-rule ``L^p`` norm of a grid function.

    ``kind`` selects ``local`` (integral over ``region``), ``local_avg``
    (divided by the measure of the cells inside ``region``), ``weighted``
    (integral against ``w`` over one period), ``weighted_avg`` (divided by the
    exact volume of ``region``) or ``global`` (whole period).  ``p = inf``
    returns the grid maximum over the region, or over the period for weighted
    kinds.  ``F`` may be a raw spatial array if ``grid`` is given.
    """
    if isinstance(F, GridFunction):
        grid = F.grid
        values = F.spatial_values
    else:
        if grid is None:
            raise ValueError("raw arrays need a grid")
        values = np.asarray(F)
    if kind not in _NORM_KINDS:
        raise ValueError(f"unknown norm kind {kind!r}")
    if not (p >= 1):
        raise ValueError(f"p must be at least 1, got {p}")
    mag = np.abs(values)
    dV = grid.cell_volume
    weighted = kind.startswith("weighted")
    if weighted and w is None:
        if region is None:
            raise ValueError("weighted norms need a weight or a region")
        w = WeightSpec.for_region(region)
    if kind in ("local", "local_avg") and region is None:
        raise ValueError("local norms need a region")
    if kind == "global":
        mask = None
    elif weighted:
        mask = None
    else:
        mask = region.mask(grid)
    if math.isinf(p):
        sel = mag if mask is None else mag[mask]
        return float(sel.max()) if sel.size else 0.0
    if weighted:
        total = float(np.sum(mag ** p * weight_values(grid, w)) * dV)
    elif mask is None:
        total = float(np.sum(mag ** p) * dV)
    else:
        total = float(np.sum(mag[mask] ** p) * dV)
    if kind == "local_avg":
        count = int(np.count_nonzero(mask))
        if count == 0:
            raise ValueError("region contains no grid cells")
        total /= count * dV
    elif kind == "weighted_avg":
        if region is None:
            raise ValueError("weighted_avg needs a region for its volume")
        total /= region.volume
    return total ** (1.0 / p)


@dataclass(frozen=True)
class WeightReport:
    """Empirical constants of the three weight comparisons.

    ``indicator_constant``: max over the cube of ``1 / sum_sub w_sub``;
    ``domination_constant``: max of ``sum_sub w_sub / w_cube`` over samples;
    ``overlap_constant``: max of ``sum w`` over a lattice tiling family.
    """

    factor: int
    exponent: float
    indicator_constant: float
    domination_constant: float
    overlap_constant: float
    indicator_argmax: tuple[float, ...]
    domination_argmax: tuple[float, ...]
    samples: int

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _logsumexp(a: np.ndarray, axis: int = 0) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def check_weight_inequalities(
    Q: SpatialBox,
    factor: int,
    exponent: float | None = None,
    samples_per_side: int = 33,
    reach: float = 2.0,
) -> WeightReport:
    """Measure the constants in ``1_Q <~ sum w_sub <~ w_Q`` and ``sum w <~ 1``.

    Sample points form a uniform lattice over the cube enlarged by ``reach``
    side lengths on every side, plus the centers and corners of every
    subcube.  Everything is evaluated in log space, so the very large
    constants produced by the default exponent are represented exactly.
    """
    n = len(Q.center)
    exponent = 100.0 * n if exponent is None else float(exponent)
    side = np.asarray(Q.side)
    c = np.asarray(Q.center)
    subs = Q.subdivide(factor)
    sub_centers = np.array([s.center for s in subs])
    sub_r = float(max(subs[0].side))
    big_r = float(max(Q.side))

    axes = [np.linspace(c[a] - (0.5 + reach) * side[a], c[a] + (0.5 + reach) * side[a], samples_per_side * (1 + 2 * int(math.ceil(reach)))) for a in range(n)]
    grid_pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    corner_offsets = np.array(list(np.ndindex(*([2] * n)))) - 0.5
    special = [sub_centers]
    for s in subs:
        special.append(np.asarray(s.center) + corner_offsets * np.asarray(s.side))
    pts = np.concatenate([grid_pts] + special, axis=0)

    def log_w(center: np.ndarray, r: float, x: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(x - center, axis=-1)
        return -exponent * np.log1p(d / r)

    log_sub = np.stack([log_w(sc, sub_r, pts) for sc in sub_centers], axis=0)
    log_sum = _logsumexp(log_sub, axis=0)
    log_big = log_w(c, big_r, pts)

    inside = np.all(np.abs(pts - c) <= side / 2 + 1e-12, axis=-1)
    ind = -log_sum[inside]
    i_arg = int(np.argmax(ind))
    dom = log_sum - log_big
    d_arg = int(np.argmax(dom))

    # tiling family for the overlap sum: lattice translates of one subcube
    # covering the sampled window plus a margin
    margin = 3
    ranges = []
    for a in range(n):
        lo = axes[a][0] - margin * sub_r
        hi = axes[a][-1] + margin * sub_r
        k0 = math.floor((lo - sub_centers[0][a]) / sub_r)
        k1 = math.ceil((hi - sub_centers[0][a]) / sub_r)
        ranges.append(sub_centers[0][a] + sub_r * np.arange(k0, k1 + 1))
    fam = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, n)
    window = pts
    overlap = np.full(window.shape[0], -np.inf)
    for s in range(0, fam.shape[0], 256):
        block = np.stack([log_w(fc, sub_r, window) for fc in fam[s:s + 256]], axis=0)
        overlap = np.logaddexp(overlap, _logsumexp(block, axis=0))
    return WeightReport(
        factor=factor,
        exponent=exponent,
        indicator_constant=float(np.exp(ind[i_arg])),
        domination_constant=float(np.exp(dom[d_arg])),
        overlap_constant=float(np.exp(np.max(overlap))),
        indicator_argmax=tuple(float(v) for v in pts[inside][i_arg]),
        domination_argmax=tuple(float(v) for v in pts[d_arg]),
        samples=int(pts.shape[0]),
    )


# ---------------------------------------------------------------------------
# serialization


def write_gridfunction(path: str | Path, F: GridFunction) -> Path:
    """Write coefficients in the binary format plus a ``.json`` sidecar.

    Layout: 16-byte magic, u32 ``n_dims``, ``n_dims`` u32 sample counts, then
    interleaved little-endian f64 ``(re, im)`` pairs in FFT order (C order).
    """
    path = Path(path)
    grid = F.grid
    header = MAGIC + struct.pack("<I", grid.n_dims) + struct.pack(f"<{grid.n_dims}I", *grid.shape)
    data = np.ascontiguousarray(F.freq_coeffs).view(np.float64).astype("<f8", copy=False)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(grid.to_json(), indent=2, sort_keys=True) + "\n")
    return path


def read_gridfunction(path: str | Path) -> GridFunction:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:16] != MAGIC:
        raise ValueError(f"{path}: bad magic header")
    (n_dims,) = struct.unpack_from("<I", raw, 16)
    shape = struct.unpack_from(f"<{n_dims}I", raw, 20)
    offset = 20 + 4 * n_dims
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    if tuple(meta["samples_per_axis"]) != tuple(shape):
        raise ValueError("sidecar does not match binary header")
    data = np.frombuffer(raw, dtype="<f8", offset=offset)
    coeffs = data.view(np.complex128).reshape(shape)
    grid = Grid(n_dims, tuple(meta["period"]), tuple(shape), tuple(meta["band_center"]))
    return GridFunction.from_coeffs(grid, coeffs.copy())


def iter_lattice_modes(grid: Grid, mask: np.ndarray) -> Iterable[tuple[tuple[int, ...], np.ndarray]]:
    """Yield ``(index, frequency)`` for modes selected by ``mask``."""
    for idx in zip(*np.nonzero(mask)):
        yield tuple(int(i) for i in idx), np.array([grid.axis_freqs(a)[i] for a, i in enumerate(idx)])
