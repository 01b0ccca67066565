"""Tube families, transversality and Kakeya-type incidence functionals.

Tubes are directed boxes: a tube with center ``c``, unit direction ``nu``,
short radius ``r`` and length ``l`` is ``{x : |<x - c, nu>| <= l / 2,
|x - c - <x - c, nu> nu| <= r}``.  In the plane that is a rectangle of size
``2r x l``; in three dimensions a solid cylinder.  The canonical tube at
scale ``R`` is an ``R^{1/2} x ... x R^{1/2} x R`` box: ``r = R ** 0.5 / 2``
and ``l = R``, so ``|T| = R^{(n+1)/2}`` in the plane.

Planar incidence integrals are computed exactly by clipping convex polygons;
the multilinear functional is evaluated by midpoint quadrature on a
rectangular grid whose cell side is a fixed fraction of ``R ** 0.5``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid_fourier import (
    GridFunction,
    SpatialBox,
    weighted_integrals,
)

__all__ = [
    "PreconditionError",
    "DirectedTube",
    "TubeFamily",
    "TransversalityCert",
    "BallInflationReport",
    "make_tube",
    "wedge_norm",
    "paraboloid_normal",
    "transversality",
    "direction_transversality",
    "clip_convex",
    "polygon_area",
    "tube_intersection_area",
    "bilinear_kakeya_terms",
    "bilinear_kakeya_ratio",
    "multilinear_kakeya_ratio",
    "multilinear_kakeya_terms",
    "random_transverse_family",
    "interval_partition",
    "ball_inflation_check",
    "write_tubes_csv",
    "read_tubes_csv",
    "DEFAULT_NU0",
    "dilation_constant",
    "CHECK_WEIGHT_EXPONENT",
]

DEFAULT_NU0 = 0.5
CHECK_WEIGHT_EXPONENT = 8.0


def dilation_constant(n_dims: int) -> float:
    """Dilation ``3 sqrt(n)`` under which a tube meeting a cube covers it."""
    return 3.0 * math.sqrt(n_dims)


class PreconditionError(ValueError):
    """Raised when an input violates the hypotheses of a functional."""


# ---------------------------------------------------------------------------
# tubes


@dataclass(frozen=True)
class DirectedTube:
    """Directed box with cross-section radius ``short_radius``."""

    center: tuple[float, ...]
    direction: tuple[float, ...]
    short_radius: float
    length: float

    def __post_init__(self) -> None:
        c = tuple(float(v) for v in self.center)
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (len(c),):
            raise ValueError("direction and center must have the same dimension")
        norm = float(np.linalg.norm(d))
        if norm == 0:
            raise ValueError("direction must be nonzero")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "direction", tuple(float(v) for v in d / norm))
        if not (self.short_radius > 0 and self.length > 0):
            raise ValueError("tube dimensions must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        r, l = self.short_radius, self.length
        if self.dim == 2:
            return 2.0 * r * l
        cross = math.pi ** ((self.dim - 1) / 2) / math.gamma((self.dim - 1) / 2 + 1) * r ** (self.dim - 1)
        return cross * l

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float) - np.asarray(self.center)
        nu = np.asarray(self.direction)
        along = x @ nu
        perp = x - along[..., None] * nu
        return (np.abs(along) <= self.length / 2) & (np.linalg.norm(perp, axis=-1) <= self.short_radius)

    def corners(self) -> np.ndarray:
        """Counter-clockwise rectangle corners (planar tubes only)."""
        if self.dim != 2:
            raise ValueError("corners are defined for planar tubes")
        c = np.asarray(self.center)
        nu = np.asarray(self.direction)
        perp = np.array([-nu[1], nu[0]])
        a, b = self.length / 2, self.short_radius
        return np.array([c - a * nu - b * perp, c + a * nu - b * perp, c + a * nu + b * perp, c - a * nu + b * perp])

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        nu = np.abs(np.asarray(self.direction))
        reach = self.length / 2 * nu + self.short_radius * np.sqrt(np.clip(1 - nu ** 2, 0, None))
        return c - reach, c + reach

    def moved(self, rotation: np.ndarray, shift: Sequence[float]) -> "DirectedTube":
        rot = np.asarray(rotation, dtype=float)
        c = rot @ np.asarray(self.center) + np.asarray(shift, dtype=float)
        return DirectedTube(tuple(c), tuple(rot @ np.asarray(self.direction)), self.short_radius, self.length)


def make_tube(center: Sequence[float], direction: Sequence[float], R: float) -> DirectedTube:
    """Tube of scale ``R``: cross-section diameter ``R ** 0.5``, length ``R``."""
    return DirectedTube(tuple(center), tuple(direction), math.sqrt(R) / 2, float(R))


@dataclass(frozen=True)
class TubeFamily:
    """Congruent tubes with nonnegative weights ``c_T``."""

    tubes: tuple[DirectedTube, ...]
    weights: tuple[float, ...] = ()
    ambient_dim: int = 0

    def __post_init__(self) -> None:
        tubes = tuple(self.tubes)
        weights = tuple(float(w) for w in self.weights) if len(self.weights) else (1.0,) * len(tubes)
        if len(weights) != len(tubes):
            raise ValueError("one weight per tube")
        if any(not (w >= 0) for w in weights):
            raise ValueError("weights must be nonnegative")
        dim = self.ambient_dim or (tubes[0].dim if tubes else 0)
        for t in tubes:
            if t.dim != dim:
                raise ValueError("all tubes must live in the ambient dimension")
            ref = tubes[0]
            if not (math.isclose(t.short_radius, ref.short_radius, rel_tol=1e-9)
                    and math.isclose(t.length, ref.length, rel_tol=1e-9)):
                raise ValueError("tubes in a family must be congruent")
        object.__setattr__(self, "tubes", tubes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "ambient_dim", dim)

    def __len__(self) -> int:
        return len(self.tubes)

    @classmethod
    def from_arrays(cls, centers, directions, R: float, weights=None) -> "TubeFamily":
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        directions = np.atleast_2d(np.asarray(directions, dtype=float))
        tubes = tuple(make_tube(c, d, R) for c, d in zip(centers, directions))
        return cls(tubes, () if weights is None else tuple(weights), centers.shape[1])

    @property
    def directions(self) -> np.ndarray:
        return np.array([t.direction for t in self.tubes])

    def with_tube(self, tube: DirectedTube, weight: float = 1.0) -> "TubeFamily":
        return TubeFamily(self.tubes + (tube,), self.weights + (float(weight),), self.ambient_dim)

    def scaled(self, factor: float) -> "TubeFamily":
        return TubeFamily(self.tubes, tuple(w * factor for w in self.weights), self.ambient_dim)

    def moved(self, rotation: np.ndarray, shift: Sequence[float]) -> "TubeFamily":
        return TubeFamily(tuple(t.moved(rotation, shift) for t in self.tubes), self.weights, self.ambient_dim)

    def total_mass(self) -> float:
        """``integral of h = sum_T c_T |T|``."""
        return float(sum(w * t.volume for t, w in zip(self.tubes, self.weights)))


# ---------------------------------------------------------------------------
# transversality


def wedge_norm(vectors: np.ndarray) -> float:
    """``|v_1 ^ ... ^ v_k|`` as the square root of the Gram determinant."""
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    gram = v @ v.T
    return float(math.sqrt(max(np.linalg.det(gram), 0.0)))


def paraboloid_normal(xi_bar: Sequence[float]) -> np.ndarray:
    """Unit normal ``(-2 xi_bar, 1) / |(-2 xi_bar, 1)|`` of the paraboloid."""
    v = np.concatenate([-2.0 * np.asarray(xi_bar, dtype=float), [1.0]])
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class TransversalityCert:
    """Minimum wedge size over all tuples drawn one from each family."""

    families: tuple[tuple[tuple[float, ...], ...], ...]
    nu: float
    argmin: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "families": [[list(v) for v in fam] for fam in self.families],
            "nu": self.nu,
            "argmin": list(self.argmin),
        }


def _as_cube(cap) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(cap, "lo") and hasattr(cap, "hi"):
        lo, hi = cap.lo, cap.hi
    else:
        lo, hi = cap
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or np.any(hi < lo):
        raise ValueError("a base cube needs matching lo <= hi corners")
    return lo, hi


def _min_wedge(direction_sets: Sequence[np.ndarray]) -> tuple[float, tuple[int, ...]]:
    best, arg = math.inf, ()
    for combo in itertools.product(*[range(len(s)) for s in direction_sets]):
        value = wedge_norm(np.array([s[i] for s, i in zip(direction_sets, combo)]))
        if value < best:
            best, arg = value, combo
    return float(min(max(best, 0.0), 1.0)), tuple(int(i) for i in arg)


def transversality(caps: Sequence) -> TransversalityCert:
    """Transversality of caps over base cubes ``(lo, hi)`` of ``[0,1]^{n-1}``.

    The unit normals are taken at the corners of every base cube and the
    wedge is minimized over all corner tuples.
    """
    cubes = [_as_cube(c) for c in caps]
    if not cubes:
        raise ValueError("need at least one cap")
    base_dim = cubes[0][0].size
    if not 2 <= len(cubes) <= base_dim + 1:
        raise ValueError("need between 2 and n caps")
    sets = []
    for lo, hi in cubes:
        corners = [np.where(np.array(bits, dtype=bool), hi, lo) for bits in itertools.product((0, 1), repeat=base_dim)]
        sets.append(np.array([paraboloid_normal(c) for c in corners]))
    nu, arg = _min_wedge(sets)
    return TransversalityCert(tuple(tuple(tuple(float(x) for x in v) for v in s) for s in sets), nu, arg)


def direction_transversality(families: Sequence[TubeFamily]) -> TransversalityCert:
    """Minimum wedge of tube directions, one direction from each family."""
    sets = [f.directions for f in families]
    if any(len(s) == 0 for s in sets):
        raise ValueError("empty tube family")
    nu, arg = _min_wedge(sets)
    return TransversalityCert(tuple(tuple(tuple(float(x) for x in v) for v in s) for s in sets), nu, arg)


# ---------------------------------------------------------------------------
# exact planar geometry


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a simple polygon given by its vertices."""
    poly = np.asarray(poly, dtype=float)
    if poly.shape[0] < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2)


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Intersection of a polygon with a convex counter-clockwise polygon.

    Sutherland-Hodgman clipping against each edge of ``clip``.
    """
    out = [np.asarray(p, dtype=float) for p in subject]
    clip = np.asarray(clip, dtype=float)
    for i in range(len(clip)):
        a, b = clip[i], clip[(i + 1) % len(clip)]
        edge = b - a

        def side(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        inp, out = out, []
        if not inp:
            break
        prev = inp[-1]
        s_prev = side(prev)
        for cur in inp:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    out.append(prev + (cur - prev) * (s_prev / (s_prev - s_cur)))
                out.append(cur)
            elif s_prev >= 0:
                out.append(prev + (cur - prev) * (s_prev / (s_prev - s_cur)))
            prev, s_prev = cur, s_cur
    return np.array(out) if out else np.zeros((0, 2))


def tube_intersection_area(t1: DirectedTube, t2: DirectedTube) -> float:
    """Exact area of the intersection of two planar tubes."""
    lo1, hi1 = t1.bounding_box()
    lo2, hi2 = t2.bounding_box()
    if np.any(hi1 < lo2) or np.any(hi2 < lo1):
        return 0.0
    return polygon_area(clip_convex(t1.corners(), t2.corners()))


def _check_pairwise(T1: TubeFamily, T2: TubeFamily, nu0: float) -> float:
    d1, d2 = T1.directions, T2.directions
    cross = np.abs(d1[:, None, 0] * d2[None, :, 1] - d1[:, None, 1] * d2[None, :, 0])
    nu = float(cross.min()) if cross.size else 1.0
    if nu < nu0:
        raise PreconditionError(f"transversality {nu:.3g} below the threshold {nu0}")
    return nu


def bilinear_kakeya_terms(T1: TubeFamily, T2: TubeFamily, R: float, nu0: float = DEFAULT_NU0) -> dict:
    """Both sides of ``int h1 h2 <~ R^{-2} int h1 int h2`` by exact geometry."""
    if T1.ambient_dim != 2 or T2.ambient_dim != 2:
        raise PreconditionError("the bilinear functional is planar")
    nu = _check_pairwise(T1, T2, nu0)
    overlap = 0.0
    for t, c in zip(T1.tubes, T1.weights):
        if c == 0:
            continue
        for u, d in zip(T2.tubes, T2.weights):
            if d == 0:
                continue
            overlap += c * d * tube_intersection_area(t, u)
    rhs = T1.total_mass() * T2.total_mass() / R ** 2
    return {"numerator": overlap, "denominator": rhs, "nu": nu}


def bilinear_kakeya_ratio(T1: TubeFamily, T2: TubeFamily, R: float, nu0: float = DEFAULT_NU0) -> float:
    """``int h1 h2 / (R^{-2} int h1 int h2)`` with ``h_i = sum c_T 1_T``."""
    terms = bilinear_kakeya_terms(T1, T2, R, nu0)
    if terms["denominator"] == 0:
        raise PreconditionError("both families need positive total weight")
    return terms["numerator"] / terms["denominator"]


# ---------------------------------------------------------------------------
# grid evaluation of the multilinear functional


def _cell_centers(lo: np.ndarray, hi: np.ndarray, step: float) -> list[np.ndarray]:
    axes = []
    for a, b in zip(lo, hi):
        count = max(1, int(math.ceil((b - a) / step)))
        start = (a + b) / 2 - count * step / 2
        axes.append(start + step * (np.arange(count) + 0.5))
    return axes


def _count_field(family: TubeFamily, axes: list[np.ndarray], dilation: float = 1.0) -> np.ndarray:
    """``sum_T 1_{dilation T}`` at the cell centers (unit weights)."""
    shape = tuple(len(a) for a in axes)
    out = np.zeros(shape)
    for t in family.tubes:
        lo, hi = t.bounding_box()
        reach = (dilation - 1.0) * max(t.short_radius, t.length / 2)
        lo, hi = lo - reach, hi + reach
        sl = []
        for ax, a, b in zip(axes, lo, hi):
            i0 = int(np.searchsorted(ax, a, side="left"))
            i1 = int(np.searchsorted(ax, b, side="right"))
            sl.append(slice(i0, i1))
        sub_axes = [ax[s] for ax, s in zip(axes, sl)]
        if any(len(s) == 0 for s in sub_axes):
            continue
        pts = np.stack(np.meshgrid(*sub_axes, indexing="ij"), axis=-1)
        big = DirectedTube(t.center, t.direction, t.short_radius * dilation, t.length * dilation)
        out[tuple(sl)] += big.contains(pts)
    return out


def multilinear_kakeya_terms(
    families: Sequence[TubeFamily],
    R: float,
    q: float,
    cells_per_root: int = 4,
    nu0: float = DEFAULT_NU0,
    dilation: float = 1.0,
) -> dict:
    """Both sides of ``||prod_j sum 1_{T_j}||_{q/n} <~ R^{n^2/(2q)} prod |T_j|``.

    Midpoint quadrature with ``cells_per_root`` cells per ``R ** 0.5``.
    ``dilation`` enlarges every tube before counting.
    """
    families = list(families)
    n = len(families)
    if n < 2 or any(f.ambient_dim != n for f in families):
        raise PreconditionError("need n families of tubes in R^n")
    if q < n / (n - 1) - 1e-12:
        raise PreconditionError(f"q must be at least n/(n-1) = {n / (n - 1):.4g}")
    if cells_per_root < 1:
        raise ValueError("cells_per_root must be positive")
    cert = direction_transversality(families)
    if cert.nu < nu0:
        raise PreconditionError(f"transversality {cert.nu:.3g} below the threshold {nu0}")
    boxes = [t.bounding_box() for f in families for t in f.tubes]
    lo = np.min([b[0] for b in boxes], axis=0)
    hi = np.max([b[1] for b in boxes], axis=0)
    if dilation > 1:
        pad = (dilation - 1.0) * max(R / 2, math.sqrt(R))
        lo, hi = lo - pad, hi + pad
    step = math.sqrt(R) / cells_per_root
    axes = _cell_centers(lo, hi, step)
    product = np.ones(tuple(len(a) for a in axes))
    for f in families:
        product *= _count_field(f, axes, dilation)
        if not product.any():
            break
    exponent = q / n
    integral = float(np.sum(product ** exponent)) * step ** n
    lhs = integral ** (1.0 / exponent)
    rhs = R ** (n * n / (2 * q)) * math.prod(len(f) for f in families)
    return {"lhs": lhs, "rhs": rhs, "nu": cert.nu, "cells": int(product.size), "cell_side": step}


def multilinear_kakeya_ratio(
    families: Sequence[TubeFamily],
    R: float,
    q: float,
    cells_per_root: int = 4,
    nu0: float = DEFAULT_NU0,
    dilation: float = 1.0,
) -> float:
    terms = multilinear_kakeya_terms(families, R, q, cells_per_root, nu0, dilation)
    if terms["rhs"] == 0:
        raise PreconditionError("every family must be nonempty")
    return terms["lhs"] / terms["rhs"]


def random_transverse_family(
    rng: np.random.Generator,
    axis_direction: Sequence[float],
    count: int,
    R: float,
    spread: float,
    max_angle: float = 0.2,
    weights: bool = True,
) -> TubeFamily:
    """Tubes whose directions lie within ``max_angle`` of ``axis_direction``.

    Centers are uniform in the cube ``[-spread, spread]^n``; weights are
    uniform on ``[0, 1]`` when ``weights`` is true.
    """
    base = np.asarray(axis_direction, dtype=float)
    base = base / np.linalg.norm(base)
    n = base.size
    dirs = []
    for _ in range(count):
        v = rng.normal(size=n)
        v -= (v @ base) * base
        nv = np.linalg.norm(v)
        v = v / nv if nv > 0 else v
        angle = rng.uniform(0.0, max_angle)
        dirs.append(math.cos(angle) * base + math.sin(angle) * v)
    centers = rng.uniform(-spread, spread, size=(count, n))
    w = rng.uniform(0.0, 1.0, size=count) if weights else None
    return TubeFamily.from_arrays(centers, np.array(dirs), R, w)


# ---------------------------------------------------------------------------
# ball inflation


def interval_partition(interval: Sequence[float], delta: float) -> list[tuple[float, float]]:
    """Split ``[a, b]`` into consecutive pieces of length ``delta``."""
    a, b = float(interval[0]), float(interval[1])
    count = (b - a) / delta
    if count < 1 - 1e-9 or abs(count - round(count)) > 1e-9:
        raise PreconditionError(f"interval {interval} is not a union of {delta}-intervals")
    return [(a + i * delta, a + (i + 1) * delta) for i in range(int(round(count)))]


def _strip_masks(F: GridFunction, pieces: Sequence[tuple[float, float]], last_closed: bool) -> list[np.ndarray]:
    xi1 = F.grid.freqs()[0]
    masks = []
    for i, (a, b) in enumerate(pieces):
        upper = (xi1 <= b + 1e-12) if (last_closed and i == len(pieces) - 1) else (xi1 < b - 1e-12)
        masks.append((xi1 >= a - 1e-12) & upper)
    return masks


@dataclass(frozen=True)
class BallInflationReport:
    """Both sides of the ball inflation inequality on one cube ``Q``."""

    delta: float
    q: float
    p: float
    lhs: float
    rhs: float
    ratio: float
    degenerate: bool
    cube_side: float
    small_side: float
    small_cubes: int
    weight_exponent: float
    pieces: tuple[int, int]
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["pieces"] = list(self.pieces)
        return out


def ball_inflation_check(
    F: GridFunction,
    delta: float,
    q: float,
    I1: Sequence[float] = (0.0, 0.25),
    I2: Sequence[float] = (0.5, 1.0),
    center: Sequence[float] = (0.0, 0.0),
    weight_exponent: float = CHECK_WEIGHT_EXPONENT,
    support_tol: float = 1e-12,
) -> BallInflationReport:
    """Average over ``delta^{-1}``-cubes ``Delta`` of ``Q`` against the ``Q`` term.

    With ``p = 2 q`` the left side is
    ``mean_Delta [prod_i (sum_J ||P_J F||^2_{L^q_#(w_Delta)})^{1/4}]^p``
    and the right side the same bracket with ``w_Q`` in place of
    ``w_Delta``; ``J`` runs over the ``delta``-pieces of ``I_i``.  ``Q`` has
    side ``delta^{-2}`` and is centered at ``center``.
    """
    grid = F.grid
    if grid.n_dims != 2:
        raise PreconditionError("ball inflation is checked in the plane")
    if q < 2:
        raise PreconditionError("q must be at least 2")
    lo_gap = max(I1[0], I2[0]) - min(I1[1], I2[1])
    if lo_gap < 0.25 - 1e-12:
        raise PreconditionError("the intervals must be separated by at least 1/4")
    side_big = 1.0 / delta ** 2
    side_small = 1.0 / delta
    if min(grid.period) < side_big - 1e-9:
        raise PreconditionError("the grid period must contain the cube of side delta^{-2}")
    coeffs = F.freq_coeffs
    xi1, xi2 = grid.freqs()
    scale = float(np.max(np.abs(coeffs))) if coeffs.size else 0.0
    live = np.abs(coeffs) > support_tol * scale if scale > 0 else np.zeros(coeffs.shape, bool)
    in_nbhd = (xi1 >= -1e-12) & (xi1 <= 1 + 1e-12) & (xi2 >= xi1 ** 2 - 1e-12) & (xi2 <= xi1 ** 2 + delta ** 2 + 1e-12)
    if np.any(live & ~in_nbhd):
        raise PreconditionError("the Fourier support must lie in the delta^2-neighbourhood")
    p = 2.0 * q
    pieces1 = interval_partition(I1, delta)
    pieces2 = interval_partition(I2, delta)
    masks1 = _strip_masks(F, pieces1, I1[1] >= 1 - 1e-12)
    masks2 = _strip_masks(F, pieces2, I2[1] >= 1 - 1e-12)
    big = SpatialBox(tuple(center), side_big)
    smalls = big.subdivide(int(round(side_big / side_small)))
    small_centers = np.array([b.center for b in smalls])
    if scale == 0:
        return BallInflationReport(delta, q, p, 0.0, 0.0, math.nan, True, side_big, side_small,
                                   len(smalls), weight_exponent, (len(pieces1), len(pieces2)))

    def piece_powers(masks):
        return np.stack([np.abs(GridFunction.from_coeffs(grid, np.where(m, coeffs, 0)).spatial_values) ** q for m in masks])

    brackets_small = np.ones(len(smalls))
    bracket_big = 1.0
    for masks in (masks1, masks2):
        powers = piece_powers(masks)
        small = weighted_integrals(powers, grid, small_centers, side_small, weight_exponent) / side_small ** 2
        large = weighted_integrals(powers, grid, np.array([center], float), side_big, weight_exponent)[:, 0] / side_big ** 2
        brackets_small *= np.sum(np.clip(small, 0, None) ** (2.0 / q), axis=0) ** 0.25
        bracket_big *= float(np.sum(np.clip(large, 0, None) ** (2.0 / q))) ** 0.25
    lhs = float(np.mean(brackets_small ** p))
    rhs = bracket_big ** p
    degenerate = rhs == 0.0
    ratio = lhs / rhs if not degenerate else math.nan
    return BallInflationReport(delta, q, p, lhs, rhs, ratio, degenerate, side_big, side_small,
                               len(smalls), weight_exponent, (len(pieces1), len(pieces2)),
                               {"support_modes": int(np.count_nonzero(live))})


# ---------------------------------------------------------------------------
# CSV interchange


def write_tubes_csv(path: str | Path, family: TubeFamily) -> Path:
    """Columns ``dim, center_0.., direction_0.., short_radius, length, weight``."""
    path = Path(path)
    n = family.ambient_dim
    header = ["dim"] + [f"center_{a}" for a in range(n)] + [f"direction_{a}" for a in range(n)] + ["short_radius", "length", "weight"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, w in zip(family.tubes, family.weights):
            writer.writerow([n, *map(repr, t.center), *map(repr, t.direction), repr(t.short_radius), repr(t.length), repr(w)])
    return path


def read_tubes_csv(path: str | Path) -> TubeFamily:
    tubes, weights, dim = [], [], 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            dim = int(row["dim"])
            center = tuple(float(row[f"center_{a}"]) for a in range(dim))
            direction = tuple(float(row[f"direction_{a}"]) for a in range(dim))
            tubes.append(DirectedTube(center, direction, float(row["short_radius"]), float(row["length"])))
            weights.append(float(row["weight"]))
    return TubeFamily(tuple(tubes), tuple(weights), dim)
