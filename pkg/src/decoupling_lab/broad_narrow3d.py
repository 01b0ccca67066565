"""Broad, narrow and concentrated balls for functions on the 3D paraboloid.

A function is held as a finite sum of modes ``sum_m c_m e(x . xi_m)`` with
frequencies in the ``K^{-2}``-neighbourhood of the paraboloid over
``[0,1]^2``.  Norms over a ball of radius ``K^2`` are computed with a seeded
jittered quadrature rule; every norm in one classification uses the same
nodes, so the triangle inequalities behind the case split hold exactly for
the discretized norms.

The classification re-executes the decision tree of the trichotomy: the
largest cap ``alpha*``, the significant set ``S_big``, the farthest
significant cap ``alpha**``, the line through their centers and the strip
around it.  Each outcome records the measured constant of its case
inequality.  :func:`narrow_cylinder_check` measures how far the paraboloid
over the strip departs from the tangent cylinder and compares the strip
decoupling ratio with that of the function flattened along the generatrix.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid_fourier import GridFunction
from .kakeya import PreconditionError, transversality

__all__ = [
    "ModeSum",
    "BallQuadrature",
    "Line",
    "BallClassification",
    "NarrowCylinderReport",
    "DegenerateBallError",
    "ALLOWED_K",
    "DEFAULT_STRIP_CONSTANT",
    "WIDE_STRIP_CONSTANT",
    "ball_quadrature",
    "cap_labels",
    "classify_ball",
    "narrow_cylinder_check",
    "random_cap_modes",
    "canonical_instance",
    "trichotomy_suite",
    "write_classifications_jsonl",
]

ALLOWED_K = (4, 8, 16)
DEFAULT_STRIP_CONSTANT = 1.0
WIDE_STRIP_CONSTANT = 100.0
SIGNIFICANCE_FACTOR = 100.0


class DegenerateBallError(ValueError):
    """The function vanishes on the ball, so no case is meaningful."""


@dataclass(frozen=True, eq=False)
class ModeSum:
    """Finite exponential sum ``x -> sum_m coeffs[m] e(x . freqs[m])``."""

    freqs: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        freqs = np.atleast_2d(np.asarray(self.freqs, float))
        coeffs = np.asarray(self.coeffs, complex).reshape(-1)
        if freqs.shape[0] != coeffs.size:
            raise ValueError("one coefficient per frequency")
        for name, arr in (("freqs", freqs), ("coeffs", coeffs)):
            arr = np.array(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return int(self.coeffs.size)

    @property
    def dim(self) -> int:
        return int(self.freqs.shape[1])

    @classmethod
    def from_grid_function(cls, F: GridFunction, tol: float = 0.0) -> "ModeSum":
        """Modes of a grid function; ``F(x) = |box|^{-1} sum coeff e(x . xi)``."""
        coeffs = F.freq_coeffs
        mask = np.abs(coeffs) > tol
        freqs = np.stack([f[mask] for f in F.grid.freqs()], axis=1)
        return cls(freqs, coeffs[mask] / F.grid.box_volume)

    def phases(self, points: np.ndarray) -> np.ndarray:
        """Matrix ``c_m e(x_i . xi_m)`` of shape ``(points, modes)``."""
        return np.exp(2j * np.pi * (np.asarray(points, float) @ self.freqs.T)) * self.coeffs

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.phases(points).sum(axis=1)

    def subset(self, keep: np.ndarray) -> "ModeSum":
        return ModeSum(self.freqs[keep], self.coeffs[keep])

    def permuted(self, order: np.ndarray) -> "ModeSum":
        return ModeSum(self.freqs[order], self.coeffs[order])


@dataclass(frozen=True, eq=False)
class BallQuadrature:
    """Equal-weight nodes approximating the normalized measure of a ball."""

    center: np.ndarray
    radius: float
    points: np.ndarray

    @property
    def volume(self) -> float:
        d = self.points.shape[1]
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius ** d

    def lp_norms(self, values: np.ndarray, p: float) -> np.ndarray:
        """``L^p(B)`` norms of the columns of ``values`` (rows are nodes)."""
        return (self.volume * np.mean(np.abs(values) ** p, axis=0)) ** (1.0 / p)


def ball_quadrature(center: Sequence[float], radius: float, nodes: int = 4096, seed: int = 0) -> BallQuadrature:
    """Jittered nodes: one uniform point per cell of a cubic lattice, kept inside the ball."""
    center = np.asarray(center, float)
    d = center.size
    ratio = math.pi ** (d / 2) / math.gamma(d / 2 + 1) / 2 ** d
    per_axis = max(2, int(math.ceil((nodes / ratio) ** (1.0 / d))))
    rng = np.random.default_rng(seed)
    idx = np.stack(np.meshgrid(*[np.arange(per_axis)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    unit = (idx + rng.random(idx.shape)) / per_axis * 2 - 1
    unit = unit[np.sum(unit ** 2, axis=1) <= 1]
    return BallQuadrature(center, float(radius), center + radius * unit)


def cap_labels(freqs: np.ndarray, K: int) -> np.ndarray:
    """Integer cell ``(i, j)`` of ``C_K`` holding each frequency's base point."""
    base = np.asarray(freqs, float)[:, :2]
    idx = np.floor(base * K + 1e-9).astype(np.int64)
    return np.clip(idx, 0, K - 1)


@dataclass(frozen=True)
class Line:
    """Line ``{xi : normal . xi + offset = 0}`` with a unit normal."""

    normal: tuple[float, float]
    offset: float

    @classmethod
    def through(cls, a: Sequence[float], b: Sequence[float]) -> "Line":
        a, b = np.asarray(a, float), np.asarray(b, float)
        d = b - a
        length = float(np.hypot(*d))
        if length == 0:
            raise ValueError("a line needs two distinct points")
        normal = np.array([-d[1], d[0]]) / length
        return cls((float(normal[0]), float(normal[1])), float(-normal @ a))

    @property
    def direction(self) -> np.ndarray:
        return np.array([self.normal[1], -self.normal[0]])

    def signed_distance(self, xi_bar: np.ndarray) -> np.ndarray:
        return np.asarray(xi_bar, float) @ np.asarray(self.normal) + self.offset

    def generatrix(self) -> np.ndarray:
        """Unit vector along ``<A, B, -2C>``, tangent to the paraboloid above the line."""
        v = np.array([self.normal[0], self.normal[1], -2.0 * self.offset])
        return v / np.linalg.norm(v)

    def to_json(self) -> dict:
        return {"normal": list(self.normal), "offset": self.offset}


def _cap_box(cell: Sequence[int], K: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.asarray(cell, float) / K
    return lo, lo + 1.0 / K


def _cap_center(cell, K) -> np.ndarray:
    return (np.asarray(cell, float) + 0.5) / K


def _cap_distance(a, b, K) -> float:
    """Euclidean distance between the closed cells ``a`` and ``b``."""
    gap = np.maximum(np.abs(np.asarray(a) - np.asarray(b)) - 1, 0) / K
    return float(np.hypot(*gap))


def _cap_in_strip(cell, K, line: Line, width: float) -> bool:
    lo, hi = _cap_box(cell, K)
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]])
    return bool(np.all(np.abs(line.signed_distance(corners)) <= width * (1 + 1e-12)))


@dataclass(frozen=True)
class BallClassification:
    """Outcome of the trichotomy on one ball with its measured case constant."""

    center: tuple[float, ...]
    radius: float
    K: int
    p: float
    case: str
    certified_constant: float
    alpha_star: tuple[int, int]
    witness: tuple[tuple[int, int], ...]
    s_big: tuple[tuple[int, int], ...]
    line: Line | None = None
    strip_width: float | None = None
    nu: float | None = None
    triangle_area: float | None = None
    norms: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "center": list(self.center),
            "radius": self.radius,
            "K": self.K,
            "p": self.p,
            "case": self.case,
            "constant": self.certified_constant,
            "alpha_star": list(self.alpha_star),
            "witness": [list(c) for c in self.witness],
            "s_big": len(self.s_big),
            "line": self.line.to_json() if self.line else None,
            "strip_width": self.strip_width,
            "nu": self.nu,
            "triangle_area": self.triangle_area,
        }


def _check_support(F: ModeSum, K: int, tol: float = 1e-12) -> None:
    if F.dim != 3:
        raise PreconditionError("the trichotomy is three-dimensional")
    base = F.freqs[:, :2]
    if np.any(base < -tol) or np.any(base > 1 + tol):
        raise PreconditionError("frequencies must lie over [0,1]^2")
    height = F.freqs[:, 2] - np.sum(base ** 2, axis=1)
    if np.any(height < -tol) or np.any(height > K ** -2.0 + tol):
        raise PreconditionError("frequencies must lie in the K^-2 neighbourhood of the paraboloid")


def _as_modes(F) -> ModeSum:
    return ModeSum.from_grid_function(F) if isinstance(F, GridFunction) else F


def _cap_columns(F: ModeSum, K: int, quad: BallQuadrature):
    """Per-cap partial sums at the nodes, caps sorted by position."""
    labels = cap_labels(F.freqs, K)
    keys = sorted({(int(a), int(b)) for a, b in labels})
    key_index = {k: i for i, k in enumerate(keys)}
    col = np.array([key_index[(int(a), int(b))] for a, b in labels], dtype=np.int64)
    values = np.zeros((quad.points.shape[0], len(keys)), complex)
    chunk = 256
    for start in range(0, len(F), chunk):
        ph = F.subset(slice(start, start + chunk)).phases(quad.points)
        for j, c in enumerate(col[start:start + chunk]):
            values[:, c] += ph[:, j]
    return keys, values


def classify_ball(
    F,
    center: Sequence[float],
    K: int,
    p: float,
    nodes: int = 4096,
    seed: int = 0,
    strip_constant: float = DEFAULT_STRIP_CONSTANT,
    check_K: bool = True,
) -> BallClassification:
    """Concentrated, narrow or broad case on the ball ``B(center, K^2)``.

    Caps and the significant set: ``alpha*`` maximizes ``||P_alpha F||_{L^p(B)}``;
    ``S_big`` holds the caps with norm at least ``||F||/(100 K^2)``.  If every
    cap of ``S_big`` lies within ``strip_constant / K`` of ``alpha*`` the
    ball is concentrated and the constant is ``||F|| / max ||P_alpha F||``.
    Otherwise ``alpha**`` is the significant cap farthest from ``alpha*``
    and ``L`` the line through their centers; if every significant cap lies
    in the strip of half-width ``strip_constant / K`` around ``L`` the ball
    is narrow with constant ``||F|| / ||sum_{S_big in strip} P_alpha F||``;
    otherwise the significant cap outside the strip spanning the largest
    triangle with ``alpha*, alpha**`` completes a broad triple with
    constant ``||F|| / (K^2 prod ||P_alpha_i F||^{1/3})``.

    Ties are broken by cap position, so the outcome does not depend on the
    order of the modes.
    """
    F = _as_modes(F)
    if check_K and K not in ALLOWED_K:
        raise PreconditionError(f"K must be one of {ALLOWED_K}")
    _check_support(F, K)
    quad = ball_quadrature(center, K ** 2, nodes, seed)
    keys, cols = _cap_columns(F, K, quad)
    cap_norms = quad.lp_norms(cols, p)
    total = float(quad.lp_norms(cols.sum(axis=1)[:, None], p)[0])
    if not total > 0 or len(keys) == 0:
        raise DegenerateBallError("F vanishes on the ball")
    order = sorted(range(len(keys)), key=lambda i: (-cap_norms[i], keys[i]))
    star = order[0]
    big = [i for i in range(len(keys)) if cap_norms[i] >= total / (SIGNIFICANCE_FACTOR * K ** 2)]
    if not big:
        raise AssertionError("the significant set is empty")
    width = strip_constant / K
    common = dict(center=tuple(float(c) for c in center), radius=float(K ** 2), K=K, p=float(p),
                  alpha_star=keys[star], s_big=tuple(keys[i] for i in big),
                  norms={"total": total, "max_cap": float(cap_norms[star])})
    dist = {i: _cap_distance(keys[i], keys[star], K) for i in big}
    if all(d <= width * (1 + 1e-12) for d in dist.values()):
        return BallClassification(case="concentrated", certified_constant=total / float(cap_norms[star]),
                                  witness=(keys[star],), **common)
    far = max(big, key=lambda i: (dist[i], cap_norms[i], tuple(-v for v in keys[i])))
    line = Line.through(_cap_center(keys[star], K), _cap_center(keys[far], K))
    outside = [i for i in big if not _cap_in_strip(keys[i], K, line, width)]
    if not outside:
        inside = [i for i in big]
        strip_sum = float(quad.lp_norms(cols[:, inside].sum(axis=1)[:, None], p)[0])
        constant = total / strip_sum if strip_sum > 0 else math.inf
        return BallClassification(case="narrow", certified_constant=constant,
                                  witness=(keys[star], keys[far]), line=line, strip_width=width, **common)
    a, b = _cap_center(keys[star], K), _cap_center(keys[far], K)

    def area(i):
        c = _cap_center(keys[i], K)
        return abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])) / 2

    third = max(outside, key=lambda i: (area(i), cap_norms[i], tuple(-v for v in keys[i])))
    triple = (star, far, third)
    geo = float(np.prod([cap_norms[i] for i in triple])) ** (1.0 / 3.0)
    cert = transversality([_cap_box(keys[i], K) for i in triple])
    return BallClassification(case="broad", certified_constant=total / (K ** 2 * geo),
                              witness=tuple(keys[i] for i in triple), line=line, strip_width=width,
                              nu=float(cert.nu), triangle_area=float(area(third)), **common)


@dataclass(frozen=True)
class NarrowCylinderReport:
    """Cylinder deviation and the strip-versus-flattened decoupling ratios."""

    K: int
    p: float
    deviation_modes: float
    deviation_sampled: float
    deviation_constant: float
    ratio_3d: float
    ratio_2d: float
    ratio_factor: float
    caps: int
    deviation_ceiling: float = 10.0
    ratio_ceiling: float = 4.0

    @property
    def holds(self) -> bool:
        return bool(self.deviation_constant <= self.deviation_ceiling and self.ratio_factor <= self.ratio_ceiling)

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["holds"] = self.holds
        return out


def _decoupling_ratio(values: np.ndarray, quad: BallQuadrature, p: float) -> float:
    total = float(quad.lp_norms(values.sum(axis=1)[:, None], p)[0])
    pieces = quad.lp_norms(values, p)
    denom = float(np.sqrt(np.sum(pieces ** 2)))
    return total / denom if denom > 0 else math.nan


def narrow_cylinder_check(
    F,
    line: Line,
    K: int,
    p: float,
    strip_constant: float = DEFAULT_STRIP_CONSTANT,
    center: Sequence[float] = (0.0, 0.0, 0.0),
    nodes: int = 4096,
    seed: int = 0,
    samples: int = 20_000,
) -> NarrowCylinderReport:
    """Deviation from the tangent cylinder and the flattened decoupling ratio.

    Above ``xi_bar`` at signed distance ``s`` from ``L`` the cylinder with
    directrix over ``L`` and generatrix ``<A, B, -2C>`` has height
    ``|xi_bar|^2 - s^2``, so the deviation is ``s^2``; it is measured over
    the modes and over seeded samples of the strip inside ``[0,1]^2``, and
    ``deviation_constant = K^2 max s^2``.  The strip ratio is
    ``||F||_{L^p(B)} / (sum_beta ||P_beta F||^2)^{1/2}`` on the 3D ball; the
    flattened ratio uses the same cap grouping for the planar function
    obtained by restricting ``F`` to the plane orthogonal to the generatrix.
    ``ratio_factor`` is the larger of the two ratios over the smaller.
    """
    F = _as_modes(F)
    _check_support(F, K)
    width = strip_constant / K
    labels = cap_labels(F.freqs, K)
    keys = sorted({(int(a), int(b)) for a, b in labels})
    for key in keys:
        if not _cap_in_strip(key, K, line, width):
            raise PreconditionError(f"cap {key} is not contained in the strip around the line")
    s_modes = line.signed_distance(F.freqs[:, :2])
    cyl = np.sum(F.freqs[:, :2] ** 2, axis=1) - s_modes ** 2
    paraboloid = np.sum(F.freqs[:, :2] ** 2, axis=1)
    dev_modes = float(np.max(np.abs(paraboloid - cyl))) if len(F) else 0.0
    rng = np.random.default_rng(seed)
    pts = rng.random((samples, 2))
    pts = pts[np.abs(line.signed_distance(pts)) <= width]
    dev_sampled = float(np.max(line.signed_distance(pts) ** 2)) if pts.size else 0.0
    dev_const = max(dev_modes, dev_sampled) * K ** 2

    quad3 = ball_quadrature(center, K ** 2, nodes, seed)
    _, cols3 = _cap_columns(F, K, quad3)
    ratio3 = _decoupling_ratio(cols3, quad3, p)

    g = line.generatrix()
    e_a = np.array([line.direction[0], line.direction[1], 0.0])
    e_b = np.cross(g, e_a)
    e_b /= np.linalg.norm(e_b)
    flat = ModeSum(np.stack([F.freqs @ e_a, F.freqs @ e_b], axis=1), F.coeffs)
    quad2 = ball_quadrature(np.zeros(2), K ** 2, nodes, seed)
    # the planar modes keep the cap grouping of their 3D parents
    col = np.array([keys.index((int(a), int(b))) for a, b in labels], dtype=np.int64)
    ph = flat.phases(quad2.points)
    cols2 = np.zeros((quad2.points.shape[0], len(keys)), complex)
    for j, c in enumerate(col):
        cols2[:, c] += ph[:, j]
    ratio2 = _decoupling_ratio(cols2, quad2, p)
    factor = max(ratio2 / ratio3, ratio3 / ratio2) if ratio2 > 0 and ratio3 > 0 else math.inf
    return NarrowCylinderReport(K, float(p), dev_modes, dev_sampled, dev_const, ratio3, ratio2, factor, len(keys))


# ---------------------------------------------------------------------------
# synthetic instances


def random_cap_modes(cells: Sequence[Sequence[int]], K: int, rng: np.random.Generator, modes_per_cap: int = 4,
                     amplitudes: Sequence[float] | None = None) -> ModeSum:
    """Random modes in ``N_alpha(K^{-2})`` for each listed cell ``alpha``."""
    freqs, coeffs = [], []
    for idx, cell in enumerate(cells):
        lo, hi = _cap_box(cell, K)
        base = lo + (hi - lo) * rng.random((modes_per_cap, 2))
        height = np.sum(base ** 2, axis=1) + rng.random(modes_per_cap) * K ** -2.0
        amp = 1.0 if amplitudes is None else float(amplitudes[idx])
        phase = np.exp(2j * np.pi * rng.random(modes_per_cap))
        freqs.append(np.column_stack([base, height]))
        coeffs.append(amp * phase / math.sqrt(modes_per_cap))
    return ModeSum(np.concatenate(freqs), np.concatenate(coeffs))


def canonical_instance(kind: str, K: int, seed: int = 0, modes_per_cap: int = 4) -> ModeSum:
    """One cap, caps along the diagonal, or caps at three corners of the square."""
    rng = np.random.default_rng(seed)
    if kind == "concentrated":
        cells = [(K // 2, K // 3)]
    elif kind == "narrow":
        cells = [(i, i) for i in range(K)]
    elif kind == "broad":
        cells = [(0, 0), (K - 1, 0), (0, K - 1)]
    else:
        raise ValueError(f"unknown instance kind {kind!r}")
    return random_cap_modes(cells, K, rng, modes_per_cap)


def _random_cells(kind: str, K: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    if kind == "concentrated":
        i, j = rng.integers(0, K, size=2)
        cells = {(int(i), int(j))}
        for di, dj in ((0, 1), (1, 0), (1, 1)):
            if rng.random() < 0.5 and i + di < K and j + dj < K:
                cells.add((int(i + di), int(j + dj)))
        return sorted(cells)
    if kind == "narrow":
        a = rng.random(2)
        b = rng.random(2)
        while np.hypot(*(a - b)) < 0.5:
            b = rng.random(2)
        line = Line.through(a, b)
        cells = [(i, j) for i in range(K) for j in range(K) if _cap_in_strip((i, j), K, line, 1.0 / K)]
        if len(cells) > 8:
            pick = rng.choice(len(cells), size=8, replace=False)
            cells = [cells[int(t)] for t in sorted(pick)]
        return cells or [(0, 0)]
    count = int(rng.integers(3, 7))
    flat = rng.choice(K * K, size=count, replace=False)
    return [(int(v // K), int(v % K)) for v in sorted(flat)]


def trichotomy_suite(K: int, p: float = 4.0, instances: int = 6, balls: int = 2, seed: int = 0,
                     nodes: int = 2048, strip_constant: float = DEFAULT_STRIP_CONSTANT) -> list[BallClassification]:
    """Classify random concentrated-, narrow- and scatter-type functions on several balls."""
    rng = np.random.default_rng(seed)
    out = []
    kinds = ("concentrated", "narrow", "scatter")
    for t in range(instances):
        kind = kinds[t % 3]
        cells = _random_cells(kind, K, rng)
        amps = 2.0 ** rng.uniform(-1, 1, size=len(cells))
        F = random_cap_modes(cells, K, rng, amplitudes=amps)
        for b in range(balls):
            center = rng.uniform(-4 * K ** 2, 4 * K ** 2, size=3)
            out.append(classify_ball(F, center, K, p, nodes=nodes, seed=int(rng.integers(2 ** 31)),
                                     strip_constant=strip_constant))
    return out


def write_classifications_jsonl(path: str | Path, results: Sequence[BallClassification]) -> Path:
    """One JSON object per ball: center, case, constant and witness caps."""
    path = Path(path)
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
    return path
