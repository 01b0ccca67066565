"""Multiscale bookkeeping: the bilinear ``M_{p,q}`` ledger and bootstrap arithmetic.

Three groups of tools live here.

``M_{p,q}(r, sigma)`` quantities for a pair ``(F1, F2)`` of planar grid
functions with Fourier support over separated intervals ``I1, I2``: the
average over the cubes ``Q^r`` of side ``2^r`` tiling an outer cube
``Q^R`` of the bilinear product of per-interval weighted ``L^q`` averages.
The Hoelder, orthogonality and two-scale comparisons between such
quantities report their measured constants.

Exact exponent arithmetic with ``fractions.Fraction``: the two-scale
exponent ``kappa_p``, the per-scale products of the multiscale inequality,
and both bootstrap calculators.

Wave packet pigeonholing over dyadic bands and a synthetic multiscale trace
generator, with checks of the three relations that link consecutive scales.
Packets are modelled as indicator-like: on a cube ``Q`` a side ``j``
contributes ``|F_j|^2 = sum |w_T|^2`` over the tubes meeting ``Q``.
"""

from __future__ import annotations

import csv
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .grid_fourier import GridFunction, SpatialBox, weighted_integrals
from .kakeya import (
    CHECK_WEIGHT_EXPONENT,
    PreconditionError,
    TubeFamily,
    interval_partition,
    make_tube,
    multilinear_kakeya_ratio,
)
from .wave_packets import WavePacketSet

__all__ = [
    "MultiscaleQuantity",
    "LemmaReport",
    "ExponentLedger",
    "PacketTubes",
    "SideRecord",
    "PigeonholeBuckets",
    "ScaleRecord",
    "MultiscaleTrace",
    "RelationReport",
    "GoodScaleResult",
    "kappa",
    "compute_M",
    "check_H1",
    "check_H2",
    "check_O",
    "two_scale_check",
    "bilinear_to_M_check",
    "multiscale_iterate",
    "multiscale_exponent",
    "exponent_ledger",
    "bootstrap_ch3",
    "bootstrap_ch5",
    "write_trace_csv",
    "dyadic_band",
    "pigeonhole_wavepackets",
    "synthetic_trace",
    "verify_r1_r2_r3",
    "good_scale_search",
    "adversarial_exponents",
    "series_exponent",
    "DEFAULT_EPS",
    "DEFAULT_INTERVALS",
]

DEFAULT_EPS = 0.1
DEFAULT_INTERVALS = ((0.0, 0.25), (0.5, 1.0))


# ---------------------------------------------------------------------------
# the M_{p,q} ledger


@dataclass(frozen=True)
class MultiscaleQuantity:
    """One evaluated ``M_{p,q}(r, sigma)`` with its scale data."""

    p: float
    q: float
    r: int
    sigma: int
    R: int
    value: float
    instance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _scale_exponent(side: float) -> int:
    e = math.log2(side)
    if abs(e - round(e)) > 1e-9:
        raise PreconditionError(f"cube side {side} is not a power of two")
    return int(round(e))


def _strip_mask(grid, interval: tuple[float, float], closed: bool) -> np.ndarray:
    xi1 = grid.freqs()[0]
    upper = xi1 <= interval[1] + 1e-12 if closed else xi1 < interval[1] - 1e-12
    return (xi1 >= interval[0] - 1e-12) & upper


def _interval_powers(F: GridFunction, interval, sigma: int, q: float) -> np.ndarray:
    pieces = interval_partition(interval, 2.0 ** -sigma)
    coeffs = F.freq_coeffs
    out = []
    for i, piece in enumerate(pieces):
        closed = i == len(pieces) - 1 and piece[1] >= 1 - 1e-12
        mask = _strip_mask(F.grid, piece, closed)
        out.append(np.abs(GridFunction.from_coeffs(F.grid, np.where(mask, coeffs, 0)).spatial_values) ** q)
    return np.stack(out)


def _sub_centers(QR: SpatialBox, r: int) -> np.ndarray:
    side = 2.0 ** r
    factor = int(round(QR.side[0] / side))
    return np.array([b.center for b in QR.subdivide(factor)])


def compute_M(
    F1: GridFunction,
    F2: GridFunction,
    p: float,
    q: float,
    r: int,
    sigma: int,
    QR: SpatialBox,
    intervals: Sequence[Sequence[float]] = DEFAULT_INTERVALS,
    weight_exponent: float = CHECK_WEIGHT_EXPONENT,
) -> MultiscaleQuantity:
    """``[mean_{Q^r} prod_i (sum_{I} ||P_I F_i||^2_{L^q_#(w_{Q^r})})^{p/4}]^{1/p}``.

    ``I`` runs over the dyadic pieces of length ``2^{-sigma}`` of
    ``intervals[i]`` and ``Q^r`` over the cubes of side ``2^r`` tiling
    ``QR``.  ``L^q_#(w_Q)`` is the weighted average ``(|Q|^{-1} int |f|^q
    w_Q)^{1/q}``.
    """
    if F1.grid != F2.grid:
        raise ValueError("both functions must share one grid")
    if F1.grid.n_dims != 2:
        raise PreconditionError("the bilinear ledger is planar")
    R = _scale_exponent(QR.side[0])
    if not (r <= R):
        raise PreconditionError(f"need r <= R, got r={r}, R={R}")
    if p < 1 or q < 1:
        raise PreconditionError("p and q must be at least 1")
    centers = _sub_centers(QR, r)
    side = 2.0 ** r
    product = np.ones(len(centers))
    for F, interval in zip((F1, F2), intervals):
        powers = _interval_powers(F, tuple(interval), sigma, q)
        avg = np.clip(weighted_integrals(powers, F.grid, centers, side, weight_exponent), 0, None) / side ** 2
        product *= np.sum(avg ** (2.0 / q), axis=0) ** (p / 4.0)
    value = float(np.mean(product)) ** (1.0 / p)
    return MultiscaleQuantity(p, q, r, sigma, R, value,
                              {"cubes": len(centers), "weight_exponent": weight_exponent,
                               "intervals": [list(i) for i in intervals]})


@dataclass(frozen=True)
class LemmaReport:
    """Measured constant ``lhs / rhs`` of one comparison and its ceiling."""

    name: str
    lhs: float
    rhs: float
    constant: float
    ceiling: float
    params: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return bool(self.constant <= self.ceiling)

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["holds"] = self.holds
        return out


def _ratio(lhs: float, rhs: float) -> float:
    if rhs == 0:
        return 0.0 if lhs == 0 else math.inf
    return lhs / rhs


def check_H1(F1, F2, p, q1, q2, r, sigma, QR, ceiling: float = 10.0, **kw) -> LemmaReport:
    """``M_{p,q1} <~ M_{p,q2}`` for ``q1 <= q2``."""
    if q1 > q2:
        raise PreconditionError("H1 needs q1 <= q2")
    a = compute_M(F1, F2, p, q1, r, sigma, QR, **kw).value
    b = compute_M(F1, F2, p, q2, r, sigma, QR, **kw).value
    return LemmaReport("H1", a, b, _ratio(a, b), ceiling, {"p": p, "q1": q1, "q2": q2, "r": r, "sigma": sigma})


def check_H2(F1, F2, p, q1, q2, alpha, r, sigma, QR, ceiling: float = 1 + 1e-9, **kw) -> LemmaReport:
    """``M_{p,q} <= M_{p,q1}^alpha M_{p,q2}^{1-alpha}`` with ``1/q = alpha/q1 + (1-alpha)/q2``."""
    if not 0 <= alpha <= 1:
        raise PreconditionError("alpha must lie in [0, 1]")
    q = 1.0 / (alpha / q1 + (1 - alpha) / q2)
    m = compute_M(F1, F2, p, q, r, sigma, QR, **kw).value
    m1 = compute_M(F1, F2, p, q1, r, sigma, QR, **kw).value
    m2 = compute_M(F1, F2, p, q2, r, sigma, QR, **kw).value
    rhs = m1 ** alpha * m2 ** (1 - alpha)
    return LemmaReport("H2", m, rhs, _ratio(m, rhs), ceiling,
                       {"p": p, "q": q, "q1": q1, "q2": q2, "alpha": alpha, "r": r, "sigma": sigma})


def check_O(F1, F2, p, r, sigma, QR, ceiling: float = 20.0, **kw) -> LemmaReport:
    """``M_{p,2}(r, sigma) <~ M_{p,2}(r, r)`` for ``sigma <= r``."""
    if sigma > r:
        raise PreconditionError("O needs sigma <= r")
    a = compute_M(F1, F2, p, 2.0, r, sigma, QR, **kw).value
    b = compute_M(F1, F2, p, 2.0, r, r, QR, **kw).value
    return LemmaReport("O", a, b, _ratio(a, b), ceiling, {"p": p, "r": r, "sigma": sigma})


def kappa(p) -> Fraction:
    """``kappa_p = (p - 4) / (p - 2)`` as an exact rational."""
    p = Fraction(p)
    if p == 2:
        raise ValueError("kappa is undefined at p = 2")
    return (p - 4) / (p - 2)


def two_scale_check(F1, F2, p, m: int, r: int, QR, eps: float = DEFAULT_EPS,
                    ceiling: float = 100.0, **kw) -> LemmaReport:
    """``M_{p,2}(m,m) <~ 2^{m eps} M_{p,2}(2m,2m)^{1-kappa} M_{p,p}(2r,m)^kappa``.

    ``QR`` must have side ``2^{2r}``.
    """
    if p < 4:
        raise PreconditionError("the two-scale inequality needs p >= 4")
    if m > r:
        raise PreconditionError("need m <= r")
    if _scale_exponent(QR.side[0]) != 2 * r:
        raise PreconditionError("the outer cube must have side 2^{2r}")
    k = float(kappa(Fraction(p).limit_denominator(10 ** 6)))
    lhs = compute_M(F1, F2, p, 2.0, m, m, QR, **kw).value
    fine = compute_M(F1, F2, p, 2.0, 2 * m, 2 * m, QR, **kw).value
    top = compute_M(F1, F2, p, float(p), 2 * r, m, QR, **kw).value
    rhs = 2.0 ** (m * eps) * fine ** (1 - k) * top ** k
    return LemmaReport("two_scale", lhs, rhs, _ratio(lhs, rhs), ceiling,
                       {"p": p, "m": m, "r": r, "eps": eps, "kappa": k,
                        "M_fine": fine, "M_top": top})


def bilinear_to_M_check(F1, F2, p, n: int, s: int, QR, ceiling: float = 100.0, **kw) -> LemmaReport:
    """``|| |F1 F2|^{1/2} ||_{L^p_#(Q^{2n})} <~ 2^{n/2^{s+1}} M_{p,2}(n/2^s, n/2^s)``."""
    if _scale_exponent(QR.side[0]) != 2 * n:
        raise PreconditionError("the outer cube must have side 2^{2n}")
    if n % (2 ** s):
        raise PreconditionError("n / 2^s must be an integer")
    scale = n // 2 ** s
    mask = QR.mask(F1.grid)
    prod = np.abs(F1.spatial_values * F2.spatial_values) ** (p / 2)
    lhs = (float(np.sum(prod[mask])) * F1.grid.cell_volume / QR.volume) ** (1.0 / p)
    m = compute_M(F1, F2, p, 2.0, scale, scale, QR, **kw).value
    rhs = 2.0 ** (n / 2 ** (s + 1)) * m
    return LemmaReport("bilinear_to_M", lhs, rhs, _ratio(lhs, rhs), ceiling, {"p": p, "n": n, "s": s})


def multiscale_iterate(p, s: int, D_values: Mapping, n: int, eps: float = 0.0, M_top: float = 1.0) -> float:
    """``2^{s eps n} M_top prod_{l=1}^s D(n - n/2^l)^{kappa (1-kappa)^{s-l}}``.

    ``D_values`` maps the scale ``n - n/2^l`` to the value of ``D`` there.
    """
    k = kappa(p)
    total = 2.0 ** (s * eps * n) * M_top
    for l in range(1, s + 1):
        key = n - Fraction(n, 2 ** l)
        value = _lookup(D_values, key)
        total *= float(value) ** float(k * (1 - k) ** (s - l))
    return total


def _lookup(values: Mapping, key: Fraction):
    for candidate in (key, float(key), int(key) if key.denominator == 1 else None):
        if candidate is not None and candidate in values:
            return values[candidate]
    raise KeyError(f"missing value for scale {key}")


def multiscale_exponent(p, s: int, exponents: Mapping[int, Fraction]) -> Fraction:
    """Exact ``sum_l kappa (1-kappa)^{s-l} e_l`` where ``D(n - n/2^l) = 2^{e_l}``."""
    k = kappa(p)
    total = Fraction(0)
    for l in range(1, s + 1):
        if l not in exponents:
            raise KeyError(f"missing exponent for l={l}")
        total += k * (1 - k) ** (s - l) * Fraction(exponents[l])
    return total


# ---------------------------------------------------------------------------
# exact exponent ledgers


REGIMES = ("subcritical", "lower_critical", "intermediate", "upper_critical", "supercritical")


@dataclass(frozen=True)
class ExponentLedger:
    """Exact record of the induction exponents for one ``(n, p)``."""

    n: int
    p: Fraction
    kappa_p: Fraction | None
    A: Fraction
    B: Fraction
    regime: str
    supported: bool
    C0: Fraction | None
    sigma0: Fraction | None
    trace: tuple = ()
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def enc(v):
            if isinstance(v, Fraction):
                return {"num": v.numerator, "den": v.denominator}
            if isinstance(v, dict):
                return {k: enc(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [enc(x) for x in v]
            return v

        return {
            "n": self.n,
            "p": enc(self.p),
            "kappa_p": enc(self.kappa_p),
            "A": enc(self.A),
            "B": enc(self.B),
            "regime": self.regime,
            "supported": self.supported,
            "C0": enc(self.C0),
            "sigma0": enc(self.sigma0),
            "trace_length": len(self.trace),
            "extra": enc(self.extra),
        }


def exponent_ledger(n: int, p) -> ExponentLedger:
    """``A``, ``B`` and the regime of ``p`` relative to ``2n/(n-1)`` and ``2(n+1)/(n-1)``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    p = Fraction(p)
    if p <= 0:
        raise ValueError("p must be positive")
    A = Fraction(1, 1) / ((n - 1) * p) - Fraction(1, 1) / (n * p)
    B = Fraction(1, 2 * n) - Fraction(1, 1) / ((n - 1) * p)
    lower = Fraction(2 * n, n - 1)
    upper = Fraction(2 * (n + 1), n - 1)
    if p < lower:
        regime = "subcritical"
    elif p == lower:
        regime = "lower_critical"
    elif p < upper:
        regime = "intermediate"
    elif p == upper:
        regime = "upper_critical"
    else:
        regime = "supercritical"
    k = kappa(p) if p != 2 else None
    return ExponentLedger(n, p, k, A, B, regime, regime != "subcritical", None, None)


def bootstrap_ch5(n: int, p) -> ExponentLedger:
    """``C_0`` and ``sigma_0`` of the good-scale bootstrap.

    ``C_0 = max(0, (n+1)/p - (n-1)/2)`` and ``sigma_0 = (n-1)/4 - (n+1)/(2p)
    + C_0/2``.  Below ``p = 2n/(n-1)`` the argument does not close and the
    ledger is returned with ``supported = False`` and no exponents.
    """
    base = exponent_ledger(n, p)
    if not base.supported:
        return base
    p = base.p
    C0 = max(Fraction(0), Fraction(n + 1) / p - Fraction(n - 1, 2))
    sigma0 = Fraction(n - 1, 4) - Fraction(n + 1) / (2 * p) + C0 / 2
    extra = {"lower_index": Fraction(2 * n, n - 1), "upper_index": Fraction(2 * (n + 1), n - 1),
             "C0_from_AB": n * (n - 1) * (base.A - base.B) if base.regime in ("lower_critical", "intermediate") else None}
    return ExponentLedger(n, p, base.kappa_p, base.A, base.B, base.regime, True, C0, sigma0, (), extra)


def _ch3_step(A: float, s_max: int) -> tuple[float, int]:
    best, arg = math.inf, 0
    for s in range(1, s_max + 1):
        value = A * (1 - (s + 2) / 2 ** (s + 1)) + 1 / 2 ** (s - 1)
        if value < best:
            best, arg = value, s
    return best, arg


def ch3_map(A, s: int) -> Fraction:
    """Exact ``A (1 - (s+2)/2^{s+1}) + 1/2^{s-1}``."""
    A = Fraction(A)
    return A * (1 - Fraction(s + 2, 2 ** (s + 1))) + Fraction(1, 2 ** (s - 1))


def bootstrap_ch3(p=6, s_max: int = 12, start=Fraction(1, 2), tol: float = 1e-15,
                  max_iter: int = 100_000) -> ExponentLedger:
    """Iterate ``A -> min(A, min_{s <= s_max} ch3_map(A, s))`` from ``start``.

    The trace holds ``(iteration, s_chosen, A_value)`` with floating-point
    values; the iteration stops once a step decreases ``A`` by less than
    ``tol``.  The map for a fixed ``s`` has the exact fixed point
    ``4/(s+2)``, so the iteration settles at ``4/(s_max+2)``; the exponent
    ``sigma0`` is the infimum of these fixed points over all ``s``, which is
    zero.
    """
    p = Fraction(p)
    if p != 6:
        raise PreconditionError("the ch3 bootstrap is stated for p = 6")
    if s_max < 1:
        raise ValueError("s_max must be positive")
    A = float(start)
    trace = [(0, 0, A)]
    for it in range(1, max_iter + 1):
        value, s = _ch3_step(A, s_max)
        if not value < A - tol:
            break
        A = value
        trace.append((it, s, A))
    fixed = Fraction(4, s_max + 2)
    floor = min(Fraction(start), fixed)
    base = exponent_ledger(2, p)
    extra = {
        "s_max": s_max,
        "start": Fraction(start),
        "limit": floor,
        "fixed_point_s_max": fixed,
        "final_value": A,
        "iterations": len(trace) - 1,
        "descends": len(trace) > 1,
    }
    return ExponentLedger(2, p, kappa(p), base.A, base.B, base.regime, True, None, Fraction(0), tuple(trace), extra)


def write_trace_csv(path: str | Path, ledger: ExponentLedger) -> Path:
    """Bootstrap trace as CSV with columns ``iteration, s_chosen, A_value``."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "s_chosen", "A_value"])
        for it, s, a in ledger.trace:
            writer.writerow([it, s, repr(float(a))])
    return path


# ---------------------------------------------------------------------------
# wave packet pigeonholing


def dyadic_band(value: float) -> int:
    """Index ``j`` with ``2^j <= value < 2^{j+1}``; exact powers go up."""
    if not value > 0:
        raise ValueError("dyadic bands need positive values")
    mantissa, exponent = math.frexp(value)
    return exponent - 1


@dataclass(frozen=True, eq=False)
class PacketTubes:
    """Packets of one side at one scale, each living in a parent cube.

    Tube ``i`` is ``{x : |x_bar - base_i + 2 omega_i (x_n - height_i)| <=
    radius, |x_n - height_i| <= half_length}``.
    """

    scale: float
    omega: np.ndarray
    base: np.ndarray
    height: np.ndarray
    weights: np.ndarray
    parent: np.ndarray
    radius: float
    half_length: float
    cap_side: float

    def __post_init__(self) -> None:
        m = len(np.atleast_1d(self.weights))
        omega = np.asarray(self.omega, float).reshape(m, -1)
        base = np.asarray(self.base, float).reshape(m, -1)
        for name, arr in (("omega", omega), ("base", base),
                          ("height", np.asarray(self.height, float).reshape(m)),
                          ("weights", np.asarray(self.weights).reshape(m)),
                          ("parent", np.asarray(self.parent, np.int64).reshape(m))):
            arr = np.array(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return int(self.weights.size)

    @property
    def dim(self) -> int:
        return self.omega.shape[1] + 1

    @classmethod
    def from_wave_packets(cls, packets: WavePacketSet, parent: int = 0, height: float = 0.0) -> "PacketTubes":
        if packets.formulation != "extension":
            raise ValueError("pigeonholing uses the extension formulation")
        R = packets.scale
        m = len(packets)
        return cls(R, packets.omega_centers, packets.q_centers, np.full(m, height), packets.coefficients,
                   np.full(m, parent), math.sqrt(R), float(R), 1.0 / math.sqrt(R))

    def subset(self, keep: np.ndarray) -> "PacketTubes":
        return PacketTubes(self.scale, self.omega[keep], self.base[keep], self.height[keep],
                           self.weights[keep], self.parent[keep], self.radius, self.half_length, self.cap_side)

    def cap_keys(self) -> list[tuple[int, ...]]:
        idx = np.floor(self.omega / self.cap_side + 1e-9).astype(np.int64)
        return [tuple(int(v) for v in row) for row in idx]

    def directions(self) -> np.ndarray:
        v = np.concatenate([-2.0 * self.omega, np.ones((len(self), 1))], axis=1)
        return v / np.linalg.norm(v, axis=1, keepdims=True)


def _meets(tubes: PacketTubes, lo: np.ndarray, hi: np.ndarray, iters: int = 64) -> np.ndarray:
    """Boolean ``(tubes, cubes)`` incidence: does tube ``i`` meet box ``[lo_k, hi_k]``.

    For each pair the distance from the tube axis point at height ``t`` to
    the box slice is convex in ``t``; a ternary search minimizes it over the
    common height range.
    """
    m, K = len(tubes), lo.shape[0]
    if m == 0 or K == 0:
        return np.zeros((m, K), bool)
    t_lo = np.maximum(lo[None, :, -1], (tubes.height - tubes.half_length)[:, None])
    t_hi = np.minimum(hi[None, :, -1], (tubes.height + tubes.half_length)[:, None])
    valid = t_lo <= t_hi
    base = tubes.base[:, None, :]
    slope = -2.0 * tubes.omega[:, None, :]
    h = tubes.height[:, None, None]
    blo, bhi = lo[None, :, :-1], hi[None, :, :-1]

    def dist(t):
        c = base + slope * (t[..., None] - h)
        gap = np.maximum(blo - c, 0) + np.maximum(c - bhi, 0)
        return np.linalg.norm(gap, axis=-1)

    a = np.where(valid, t_lo, 0.0)
    b = np.where(valid, t_hi, 0.0)
    for _ in range(iters):
        m1 = a + (b - a) / 3
        m2 = b - (b - a) / 3
        left = dist(m1) <= dist(m2)
        b = np.where(left, m2, b)
        a = np.where(left, a, m1)
    best = np.minimum(dist((a + b) / 2), np.minimum(dist(np.where(valid, t_lo, 0.0)), dist(np.where(valid, t_hi, 0.0))))
    return valid & (best <= tubes.radius * (1 + 1e-12))


@dataclass(frozen=True)
class SideRecord:
    """Uniformized parameters of one side after pigeonholing."""

    M: float
    U: float
    beta: float
    h: float
    tubes: int
    caps: int
    weight_band: int
    count_band: int
    cap_band: int
    incidence_band: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class PigeonholeBuckets:
    """Dominant bucket of one pigeonholing step and its bookkeeping."""

    k: int
    sides: tuple[SideRecord, ...]
    selected: tuple[np.ndarray, ...]
    surviving_parents: tuple[int, ...]
    surviving_cubes: tuple[int, ...]
    discarded_fraction: float
    full_total: float
    selected_total: float
    bucket_contributions: dict
    bucket_count: int
    p: float

    @property
    def dominant_contribution(self) -> float:
        return max(self.bucket_contributions.values()) if self.bucket_contributions else 0.0

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "p": self.p,
            "sides": [s.to_json() for s in self.sides],
            "surviving_parents": list(self.surviving_parents),
            "surviving_cubes": len(self.surviving_cubes),
            "discarded_fraction": self.discarded_fraction,
            "full_total": self.full_total,
            "selected_total": self.selected_total,
            "bucket_count": self.bucket_count,
        }


def _cube_arrays(cubes) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(cubes, tuple) and len(cubes) == 3:
        lo, hi, parent = cubes
        return np.asarray(lo, float), np.asarray(hi, float), np.asarray(parent, np.int64)
    lo = np.array([np.asarray(c.center) - np.asarray(c.side) / 2 for c in cubes])
    hi = np.array([np.asarray(c.center) + np.asarray(c.side) / 2 for c in cubes])
    return lo, hi, np.zeros(len(cubes), np.int64)


def _incidence(tubes: PacketTubes, lo, hi, cube_parent) -> np.ndarray:
    """Incidence restricted to cubes of the tube's own parent."""
    inc = np.zeros((len(tubes), lo.shape[0]), bool)
    for par in np.unique(tubes.parent):
        rows = np.nonzero(tubes.parent == par)[0]
        cols = np.nonzero(cube_parent == par)[0]
        if rows.size and cols.size:
            inc[np.ix_(rows, cols)] = _meets(tubes.subset(rows), lo[cols], hi[cols])
    return inc


def _contributions(energies: Sequence[np.ndarray], volumes: np.ndarray, p: float) -> np.ndarray:
    n = len(energies)
    out = volumes.copy()
    for e in energies:
        out = out * np.clip(e, 0, None) ** (p / (2 * n))
    return out


def pigeonhole_wavepackets(
    sides: Sequence,
    cubes,
    p: float = 6.0,
    k: int = 1,
    max_joint: int = 4096,
) -> PigeonholeBuckets:
    """Dyadic pigeonholing of packets into a dominant uniform bucket.

    Levels, in order: the weight band of ``|w_T|``; the band of the number
    of tubes per (parent, cap); the band of the number of caps per parent;
    the band of the number of incident tubes per cube.  The first two are
    chosen jointly over the sides to maximize the model value of
    ``|| prod_j F_j^{1/n} ||_p^p``; the cube level is an exact partition of
    the cubes, so its bucket contributions add up to ``selected_total``.

    ``cubes`` is a list of ``SpatialBox`` (single parent ``0``) or a triple
    ``(lo, hi, parent)`` of arrays.
    """
    sides = [PacketTubes.from_wave_packets(s) if isinstance(s, WavePacketSet) else s for s in sides]
    n = len(sides)
    if n < 1 or any(len(s) == 0 for s in sides):
        raise ValueError("every side needs at least one packet")
    lo, hi, cube_parent = _cube_arrays(cubes)
    volumes = np.prod(hi - lo, axis=1)
    sq = [np.abs(s.weights) ** 2 for s in sides]
    inc = [_incidence(s, lo, hi, cube_parent).astype(float) for s in sides]
    energy_all = [sq[j] @ inc[j] for j in range(n)]
    full_total = float(np.sum(_contributions(energy_all, volumes, p)))

    # per-side candidates: (weight band, count band) -> boolean selection
    candidates = []
    caps_of = [s.cap_keys() for s in sides]
    for j, s in enumerate(sides):
        mags = np.abs(s.weights)
        bands = np.array([dyadic_band(float(v)) if v > 0 else -10 ** 9 for v in mags])
        opts = []
        for wb in sorted(set(bands.tolist()) - {-10 ** 9}, reverse=True):
            in_band = bands == wb
            groups = defaultdict(list)
            for i in np.nonzero(in_band)[0]:
                groups[(int(s.parent[i]), caps_of[j][i])].append(i)
            cb_of = {key: dyadic_band(len(v)) for key, v in groups.items()}
            for cb in sorted(set(cb_of.values()), reverse=True):
                sel = np.zeros(len(s), bool)
                for key, v in groups.items():
                    if cb_of[key] == cb:
                        sel[v] = True
                opts.append((wb, cb, sel))
        candidates.append(opts)

    def value_of(sels):
        energies = [(sq[j] * sels[j]) @ inc[j] for j in range(n)]
        return float(np.sum(_contributions(energies, volumes, p)))

    sizes = [len(o) for o in candidates]
    if math.prod(sizes) <= max_joint:
        best, choice = -1.0, None
        for combo in itertools.product(*[range(z) for z in sizes]):
            v = value_of([candidates[j][c][2] for j, c in enumerate(combo)])
            if v > best:
                best, choice = v, combo
    else:
        choice = [0] * n
        improved = True
        while improved:
            improved = False
            for j in range(n):
                cur = value_of([candidates[i][choice[i]][2] for i in range(n)])
                for c in range(sizes[j]):
                    trial = list(choice)
                    trial[j] = c
                    v = value_of([candidates[i][trial[i]][2] for i in range(n)])
                    if v > cur * (1 + 1e-12):
                        choice, cur, improved = trial, v, True
    sels = [candidates[j][choice[j]][2].copy() for j in range(n)]

    # parent level: number of caps per parent, banded
    parents = sorted(set(int(v) for v in cube_parent))
    cap_counts = []
    for j, s in enumerate(sides):
        counts = {}
        for par in parents:
            keys = {caps_of[j][i] for i in np.nonzero(sels[j] & (s.parent == par))[0]}
            counts[par] = len(keys)
        cap_counts.append(counts)
    parent_bands = {}
    for par in parents:
        if all(cap_counts[j][par] > 0 for j in range(n)):
            parent_bands[par] = tuple(dyadic_band(cap_counts[j][par]) for j in range(n))
    if not parent_bands:
        raise ValueError("no parent cube carries packets from every side")

    energies_sel = [(sq[j] * sels[j]) @ inc[j] for j in range(n)]
    contrib_sel = _contributions(energies_sel, volumes, p)
    by_band = defaultdict(float)
    for idx, par in enumerate(cube_parent):
        if int(par) in parent_bands:
            by_band[parent_bands[int(par)]] += contrib_sel[idx]
    top_band = max(by_band, key=lambda b: (by_band[b], b))
    kept_parents = tuple(par for par, b in parent_bands.items() if b == top_band)
    keep_parent_mask = np.isin(cube_parent, kept_parents)
    for j, s in enumerate(sides):
        sels[j] &= np.isin(s.parent, kept_parents)
    energies = [(sq[j] * sels[j]) @ inc[j] for j in range(n)]
    contrib = _contributions(energies, volumes, p)
    counts = [sels[j].astype(float) @ inc[j] for j in range(n)]
    selected_total = float(np.sum(contrib[keep_parent_mask]))

    # cube level: exact partition of the cubes of the kept parents
    buckets = defaultdict(float)
    members = defaultdict(list)
    for idx in np.nonzero(keep_parent_mask)[0]:
        if all(counts[j][idx] > 0 for j in range(n)):
            key = tuple(dyadic_band(counts[j][idx]) for j in range(n))
        else:
            key = ("empty",)
        buckets[key] += contrib[idx]
        members[key].append(int(idx))
    live = {key: v for key, v in buckets.items() if key != ("empty",)}
    if not live:
        raise ValueError("no cube meets tubes from every side")
    top = max(live, key=lambda key: (live[key], key))
    dominant = live[top]

    records = []
    for j, s in enumerate(sides):
        wb, cb, _ = candidates[j][choice[j]]
        records.append(SideRecord(
            M=float(2 ** top_band[j]),
            U=float(2 ** cb),
            beta=float(2 ** top_band[j]) / float(2 ** top[j]),
            h=float(2.0 ** wb),
            tubes=int(np.count_nonzero(sels[j])),
            caps=int(len({caps_of[j][i] for i in np.nonzero(sels[j])[0]})),
            weight_band=int(wb),
            count_band=int(cb),
            cap_band=int(top_band[j]),
            incidence_band=int(top[j]),
        ))
    bucket_count = sum(len(o) for o in candidates) + len(by_band) + len(buckets)
    discarded = 1.0 - dominant / full_total if full_total > 0 else 0.0
    return PigeonholeBuckets(
        k=k,
        sides=tuple(records),
        selected=tuple(sels),
        surviving_parents=tuple(int(v) for v in kept_parents),
        surviving_cubes=tuple(members[top]),
        discarded_fraction=float(discarded),
        full_total=full_total,
        selected_total=selected_total,
        bucket_contributions={str(key): float(v) for key, v in buckets.items()},
        bucket_count=int(bucket_count),
        p=float(p),
    )


# ---------------------------------------------------------------------------
# synthetic multiscale traces


@dataclass(frozen=True, eq=False)
class ScaleRecord:
    """One scale of a trace: packets, cubes and the pigeonholing outcome."""

    k: int
    scale: float
    sides: tuple[PacketTubes, ...]
    cubes: tuple[np.ndarray, np.ndarray, np.ndarray]
    parent_boxes: tuple[np.ndarray, np.ndarray]
    buckets: PigeonholeBuckets


@dataclass(frozen=True, eq=False)
class MultiscaleTrace:
    R: float
    s: int
    n: int
    p: float
    scales: tuple[ScaleRecord, ...]
    params: dict = field(default_factory=dict)

    def y_values(self) -> list[float]:
        """``y_k = prod_j U_{j,k}`` per scale."""
        return [math.prod(side.U for side in rec.buckets.sides) for rec in self.scales]


def _cap_pool(interval: tuple[float, float], cap_side: float) -> np.ndarray:
    count = int(round(1 / cap_side))
    centers = (np.arange(count) + 0.5) * cap_side
    lo = np.arange(count) * cap_side
    hi = lo + cap_side
    pick = (hi > interval[0] + 1e-12) & (lo < interval[1] - 1e-12)
    return centers[pick]


def _subcubes(lo: np.ndarray, hi: np.ndarray, side: float) -> tuple[np.ndarray, np.ndarray]:
    factor = int(round((hi[0] - lo[0]) / side))
    idx = np.array(list(itertools.product(range(factor), repeat=lo.size)), float)
    sub_lo = lo + idx * side
    return sub_lo, sub_lo + side


def synthetic_trace(
    s: int = 3,
    p: float = 6.0,
    seed: int = 0,
    caps: tuple[int, int] = (1, 4),
    tubes_per_cap: tuple[int, int] = (1, 4),
    weight_spread: float = 1.0,
    intervals: Sequence[Sequence[float]] = ((0.0, 0.25), (0.75, 1.0)),
    through_origin: bool = False,
) -> MultiscaleTrace:
    """Planar multiscale trace at ``R = 2^{2^s}``.

    At scale ``k`` the tubes are ``R_k^{1/2} x R_k`` with ``R_k =
    R^{2^{1-k}}`` and live in parent cubes of side ``R_k``, which split into
    cubes of side ``R_k^{1/2}``.  Each parent receives, per side, a random
    number of caps from the lattice of caps of side ``R_k^{-1/2}`` meeting
    the side's interval and a random number of parallel tubes per cap on
    the lattice of offsets of spacing ``R_k^{1/2}``.  At the top scale the
    weights are ``2^{u}`` with ``u`` uniform on ``[0, weight_spread]``;
    below, they split the model energy of the retained coarser packets on
    the parent, which is how local orthogonality ties the scales together.
    ``through_origin`` places one tube per cap through the parent center,
    which models the sharp example.
    """
    if s < 1:
        raise ValueError("s must be positive")
    rng = np.random.default_rng(seed)
    R = 2.0 ** (2 ** s)
    n = 2
    S1_lo, S1_hi = np.full(n, -R / 2), np.full(n, R / 2)
    parents_lo, parents_hi = S1_lo[None, :], S1_hi[None, :]
    parent_energy = None
    records = []
    for k in range(1, s + 1):
        Rk = R ** (2.0 ** (1 - k))
        root = math.sqrt(Rk)
        cap_side = 1.0 / root
        lo_list, hi_list, par_list = [], [], []
        for pi in range(parents_lo.shape[0]):
            sl, sh = _subcubes(parents_lo[pi], parents_hi[pi], root)
            lo_list.append(sl)
            hi_list.append(sh)
            par_list.append(np.full(sl.shape[0], pi))
        cube_lo, cube_hi = np.concatenate(lo_list), np.concatenate(hi_list)
        cube_par = np.concatenate(par_list)
        sides = []
        for j in range(n):
            pool = _cap_pool(tuple(intervals[j]), cap_side)
            omegas, bases, heights, weights, parents = [], [], [], [], []
            for pi in range(parents_lo.shape[0]):
                center = (parents_lo[pi] + parents_hi[pi]) / 2
                m = 1 if through_origin else int(rng.integers(caps[0], caps[1] + 1))
                chosen = pool if through_origin else rng.choice(pool, size=min(m, pool.size), replace=False)
                offsets = center[0] + root * (np.arange(int(round(Rk / root))) - (Rk / root - 1) / 2)
                for w in np.atleast_1d(chosen):
                    u = 1 if through_origin else int(rng.integers(tubes_per_cap[0], tubes_per_cap[1] + 1))
                    pos = np.array([center[0]]) if through_origin else rng.choice(offsets, size=min(u, offsets.size), replace=False)
                    for b in pos:
                        omegas.append([w])
                        bases.append([b])
                        heights.append(center[1])
                        parents.append(pi)
                        weights.append(2.0 ** rng.uniform(0, weight_spread) if not through_origin else 1.0)
            tubes = PacketTubes(Rk, np.array(omegas), np.array(bases), np.array(heights), np.array(weights, float),
                                np.array(parents), root / 2, Rk / 2, cap_side)
            if parent_energy is not None:
                inc = _incidence(tubes, cube_lo, cube_hi, cube_par).astype(float)
                footprint = inc @ np.prod(cube_hi - cube_lo, axis=1)
                raw = tubes.weights ** 2 * footprint
                scaled = np.zeros(len(tubes))
                for pi in range(parents_lo.shape[0]):
                    rows = tubes.parent == pi
                    total = float(np.sum(raw[rows]))
                    if total > 0:
                        scaled[rows] = tubes.weights[rows] * math.sqrt(parent_energy[j][pi] / total)
                tubes = PacketTubes(Rk, tubes.omega, tubes.base, tubes.height, scaled, tubes.parent,
                                    tubes.radius, tubes.half_length, cap_side)
                keep = np.abs(tubes.weights) > 0
                tubes = tubes.subset(keep)
            sides.append(tubes)
        buckets = pigeonholing_step(sides, (cube_lo, cube_hi, cube_par), p, k)
        records.append(ScaleRecord(k, Rk, tuple(sides), (cube_lo, cube_hi, cube_par),
                                   (parents_lo, parents_hi), buckets))
        # next parents are the surviving cubes; their energies feed the next scale
        surv = np.array(buckets.surviving_cubes, np.int64)
        parents_lo, parents_hi = cube_lo[surv], cube_hi[surv]
        vol = np.prod(cube_hi[surv] - cube_lo[surv], axis=1)
        parent_energy = []
        for j in range(n):
            inc = _incidence(sides[j], cube_lo[surv], cube_hi[surv], cube_par[surv]).astype(float)
            parent_energy.append(((np.abs(sides[j].weights) ** 2) * buckets.selected[j]) @ inc * vol)
    params = {"seed": seed, "caps": list(caps), "tubes_per_cap": list(tubes_per_cap),
              "weight_spread": weight_spread, "intervals": [list(i) for i in intervals],
              "through_origin": through_origin}
    return MultiscaleTrace(R, s, n, float(p), tuple(records), params)


def pigeonholing_step(sides, cubes, p, k):
    return pigeonhole_wavepackets(sides, cubes, p=p, k=k)


@dataclass(frozen=True)
class RelationReport:
    """Measured constants of the three scale relations, per scale."""

    r1: tuple[float, ...]
    r2: tuple[float, ...]
    r3: tuple[float, ...]
    kakeya: tuple[float, ...]
    ceiling: float
    details: tuple[dict, ...] = ()

    @property
    def holds(self) -> bool:
        values = [v for v in self.r1 + self.r2 + self.r3 if not math.isnan(v)]
        return all(v <= self.ceiling for v in values)

    def to_json(self) -> dict:
        return {"r1": list(self.r1), "r2": list(self.r2), "r3": list(self.r3),
                "kakeya": list(self.kakeya), "ceiling": self.ceiling, "holds": self.holds,
                "details": list(self.details)}


def _cap_norms(tubes: PacketTubes, selected: np.ndarray, lo, hi, par, p: float) -> dict:
    """Model ``||P_theta F||_p^p`` per cap over the given cubes."""
    inc = _incidence(tubes, lo, hi, par).astype(float)
    vol = np.prod(hi - lo, axis=1)
    sq = np.abs(tubes.weights) ** 2 * selected
    keys = tubes.cap_keys()
    out = defaultdict(float)
    for key in set(keys):
        rows = np.array([kk == key for kk in keys])
        e = sq[rows] @ inc[rows]
        out[key] += float(np.sum(vol * e ** (p / 2)))
    return out


def verify_r1_r2_r3(trace: MultiscaleTrace, ceiling: float = 100.0, kakeya: bool = True) -> RelationReport:
    """Constants of the denominator bound, the cube-count growth and the ``h`` ratio.

    ``r1`` is ``rhs / lhs`` of the denominator lower bound; ``r2`` is
    ``|S_{k+1}^*|^{n-1} / (|S_k^{**}|^{n-1} prod beta prod U)``; ``r3`` is
    ``(prod h_k / prod h_{k-1})`` over its bound (``nan`` at ``k = 1``).
    ``kakeya`` holds the multilinear Kakeya ratio of the retained tubes of
    the busiest surviving parent at the endpoint exponent.
    """
    if not trace.scales:
        raise ValueError("the trace is empty")
    ks = [rec.k for rec in trace.scales]
    if ks != list(range(1, len(ks) + 1)):
        raise ValueError("the trace must list consecutive scales from 1")
    n, p, R = trace.n, trace.p, trace.R
    r1, r2, r3, kk, details = [], [], [], [], []
    prev = None
    for rec in trace.scales:
        b = rec.buckets
        lo, hi, par = rec.cubes
        kept = np.isin(par, b.surviving_parents)
        lhs = 1.0
        for j, tubes in enumerate(rec.sides):
            norms = _cap_norms(tubes, b.selected[j], lo[kept], hi[kept], par[kept], p)
            lhs *= sum(v ** (2.0 / p) for v in norms.values()) ** (1.0 / (2 * n))
        prodM = math.prod(sd.M for sd in b.sides)
        prodU = math.prod(sd.U for sd in b.sides)
        prodB = math.prod(sd.beta for sd in b.sides)
        prodH = math.prod(sd.h for sd in b.sides)
        Skk = len(b.surviving_parents)
        rhs = (R ** ((n + 1) / (2 ** rec.k * p)) * Skk ** (1.0 / p) * prodM ** (1.0 / (2 * n))
               * prodH ** (1.0 / n) * prodU ** (1.0 / (n * p)))
        r1.append(rhs / lhs if lhs > 0 else math.inf)
        S_next = len(b.surviving_cubes)
        r2.append(S_next ** (n - 1) / (Skk ** (n - 1) * prodB * prodU))
        if prev is None:
            r3.append(math.nan)
        else:
            pb = prev.buckets
            bound = (R ** (n * (n - 1) / 2 ** (rec.k + 1))
                     / math.prod(sd.beta for sd in pb.sides) ** 0.5 / prodU ** 0.5
                     * (math.prod(sd.M for sd in pb.sides) / prodM) ** 0.5)
            r3.append((prodH / math.prod(sd.h for sd in pb.sides)) / bound)
        if kakeya:
            kk.append(_parent_kakeya(rec, n))
        details.append({"k": rec.k, "S_kk": Skk, "S_next": S_next,
                        "sides": [sd.to_json() for sd in b.sides],
                        "discarded_fraction": b.discarded_fraction})
        prev = rec
    return RelationReport(tuple(r1), tuple(r2), tuple(r3), tuple(kk), ceiling, tuple(details))


def _parent_kakeya(rec: ScaleRecord, n: int) -> float:
    b = rec.buckets
    par = rec.cubes[2]
    surv = np.array(b.surviving_cubes, np.int64)
    if surv.size == 0:
        return math.nan
    values, counts = np.unique(par[surv], return_counts=True)
    busiest = int(values[np.argmax(counts)])
    families = []
    for j, tubes in enumerate(rec.sides):
        rows = np.nonzero(b.selected[j] & (tubes.parent == busiest))[0]
        if rows.size == 0:
            return math.nan
        dirs = tubes.directions()[rows]
        centers = np.concatenate([tubes.base[rows], tubes.height[rows, None]], axis=1)
        families.append(TubeFamily(tuple(make_tube(c, d, rec.scale) for c, d in zip(centers, dirs))))
    try:
        return multilinear_kakeya_ratio(families, rec.scale, n / (n - 1), nu0=0.0)
    except PreconditionError:
        return math.nan


# ---------------------------------------------------------------------------
# good scales


@dataclass(frozen=True)
class GoodScaleResult:
    """Outcome of the good-scale search in ``log_R`` units."""

    good_k: int | None
    exponents: tuple
    margins: tuple
    series: float | None
    forced_exponent: float | None
    ceiling: float | None
    contradiction: bool

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def series_exponent(A, B, C0, eps, N: int):
    """``(C0+eps) (2^{-2}/A) [2 + (B/A) sum_{j=0}^{N-2} ((1+B/A)/2)^j]``."""
    A, B, C = _num(A), _num(B), _num(C0) + _num(eps)
    ratio = B / A
    geo = sum(((1 + ratio) / 2) ** j for j in range(0, N - 1))
    return C * (_num(1) / 4 / A) * (2 + ratio * geo)


def _num(v):
    return v if isinstance(v, (Fraction, float)) else Fraction(v)


def adversarial_exponents(A, B, C0, eps, N: int, margin=0):
    """``e_k = log_R y_k`` making every scale ``k <= N`` exactly (or barely) bad.

    ``e_N, ..., e_1`` solve ``A e_k - B sum_{l>k} e_l = (C0+eps) 2^{-k} + margin``.
    """
    A, B, C = _num(A), _num(B), _num(C0) + _num(eps)
    e = [None] * (N + 1)
    tail = 0 * A
    for kk in range(N, 0, -1):
        e[kk] = (C / 2 ** kk + _num(margin) + B * tail) / A
        tail += e[kk]
    return e[1:]


def good_scale_search(y=None, A=None, B=None, C0=None, eps=DEFAULT_EPS, R=None, n=None,
                      exponents=None) -> GoodScaleResult:
    """Smallest ``k`` with ``y_k^A / prod_{l>k} y_l^B <= R^{(C0+eps) 2^{-k}}``.

    Work is done with ``e_l = log_R y_l``, given directly through
    ``exponents`` (exact rationals allowed) or computed from ``y`` and
    ``R``.  When no scale is good the first exponent is at least the
    geometric series of :func:`series_exponent`; with ``n`` given the
    result flags whether that forces ``y_1 > R^{n(n-1)/2}``.
    """
    if exponents is None:
        if y is None or R is None:
            raise ValueError("give exponents or both y and R")
        if any(v < 1 for v in y):
            raise ValueError("y values must be at least 1")
        exponents = [math.log(v) / math.log(R) for v in y]
    e = list(exponents)
    N = len(e)
    A, B, C = _num(A), _num(B), _num(C0) + _num(eps)
    margins = []
    good = None
    for kk in range(1, N + 1):
        lhs = A * e[kk - 1] - B * sum(e[kk:], 0 * A)
        margin = C / 2 ** kk - lhs
        margins.append(margin)
        if good is None and margin >= 0:
            good = kk
    series = forced = ceiling = None
    contradiction = False
    if good is None:
        series = series_exponent(A, B, C0, eps, N)
        forced = e[0]
        if n is not None:
            ceiling = Fraction(n * (n - 1), 2)
            contradiction = bool(series > ceiling)
    return GoodScaleResult(good, tuple(e), tuple(margins), series, forced, ceiling, contradiction)
