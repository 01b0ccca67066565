"""Wave packet decompositions for the paraboloid extension operator and for
functions Fourier supported in a single rectangular box.

Extension formulation
---------------------
``f`` is sampled on the node grid ``xi_j = j * h`` of a ``Grid`` whose
spatial side plays the role of frequency space ``R^{n-1}``.  With
``h = R^{-1/2} / m`` every frequency cube ``omega`` of side ``2 R^{-1/2}``
holds exactly ``2m`` nodes per axis, the smooth partition of unity is exact
at the nodes, and the Fourier series on ``omega`` becomes a length ``2m``
DFT.  The energy identity and the reconstruction therefore hold to rounding.

``gamma_T`` has unit ``L^2`` norm.  Coefficients are normalised so that
``sum |a_T|^2 = |f|_2^2``: ``a_T = 2^{-(n-1)/2} <f, gamma_T>``, hence
``f = 2^{-(n-1)/2} sum a_T gamma_T`` and ``Ef = 2^{-(n-1)/2} sum a_T phi_T``
with ``phi_T = E gamma_T``.

Box formulation
---------------
For ``supp F_hat`` inside a box ``B`` of sides ``l`` we expand ``F_hat eta_B``
in a Fourier series over a window of ``period_factor * l`` per axis, giving
tiles at spacing ``1 / (period_factor * l)``.  Any factor ``>= 3/2`` makes
``F = sum <F, W_T> W_T`` exact; the default ``2`` is the tiling dual to ``2B``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .grid_fourier import (
    FrequencyBox,
    Grid,
    GridFunction,
    ResolutionError,
    lp_norm,
)

__all__ = [
    "DomainError",
    "SmoothBump",
    "Tube",
    "Tile",
    "WavePacketSet",
    "ProfileReport",
    "build_bump",
    "gamma_tensor",
    "frequency_grid",
    "extension_operator",
    "wp_decompose_extension",
    "wp_reconstruct_extension",
    "packet_values",
    "packet_profile_check",
    "wp_decompose_box",
    "wp_synthesize_box",
    "level_set_reconstruction",
    "write_packets_jsonl",
]


class DomainError(ValueError):
    """Input violates a support hypothesis."""


def _smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step from 0 at ``t <= 0`` to 1 at ``t >= 1``."""
    t = np.asarray(t, float)

    def g(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    a = g(t)
    b = g(1.0 - t)
    return a / (a + b)


def _theta(x: np.ndarray) -> np.ndarray:
    u = np.clip(6.0 * np.asarray(x, float), -1.0, 1.0)
    return (np.pi / 4) * (2.0 * _smooth_step((u + 1.0) / 2.0) - 1.0)


def _psi(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, float)
    alpha = np.sin(_theta(x + 0.5) + np.pi / 4)
    beta = np.cos(_theta(x - 0.5) + np.pi / 4)
    out = alpha * beta
    return np.where(np.abs(x) >= 2.0 / 3.0, 0.0, out)


@dataclass(frozen=True)
class SmoothBump:
    """Tensor-product bump ``prod psi(x_j)`` over ``n_dims`` axes."""

    profile: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    n_dims: int = 1
    support_radius: float = 2.0 / 3.0
    plateau_radius: float = 1.0 / 3.0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if self.n_dims == 1:
            return self.profile(x)
        if x.shape[-1] != self.n_dims:
            raise ValueError(f"last axis must have length {self.n_dims}")
        out = np.ones(x.shape[:-1])
        for j in range(self.n_dims):
            out = out * self.profile(x[..., j])
        return out

    def partition_deviation(self, samples: int = 100_000, seed: int = 0) -> float:
        """Max of ``|sum_l psi(x - l)^2 - 1|`` over random points."""
        rng = np.random.default_rng(seed)
        x = rng.uniform(-3.0, 3.0, samples)
        total = sum(self.profile(x - l) ** 2 for l in range(-5, 6))
        return float(np.max(np.abs(total - 1.0)))

    def l2_norm(self, nodes: int = 4096) -> float:
        """``|gamma|_2`` by the trapezoid rule (spectrally accurate here)."""
        t = np.linspace(-1.0, 1.0, nodes + 1)
        one_d = np.sum(self.profile(t) ** 2) * (t[1] - t[0])
        return float(math.sqrt(one_d ** self.n_dims))

    def integral(self, nodes: int = 4096) -> float:
        t = np.linspace(-1.0, 1.0, nodes + 1)
        return float((np.sum(self.profile(t)) * (t[1] - t[0])) ** self.n_dims)


def build_bump() -> SmoothBump:
    """One-dimensional bump: 1 on ``[-1/3, 1/3]``, 0 off ``(-2/3, 2/3)``,
    with ``sum_l psi(x - l)^2 = 1``."""
    return SmoothBump(_psi, 1)


def gamma_tensor(n_dims: int) -> SmoothBump:
    if n_dims < 1:
        raise ValueError("n_dims must be positive")
    return SmoothBump(_psi, n_dims)


_PSI = build_bump()


# ---------------------------------------------------------------------------
# extension formulation


def frequency_grid(base_dims: int, R: float, oversample: int = 4) -> Grid:
    """Node grid on ``R^{base_dims}`` suited to scale ``R``.

    Node spacing is ``R^{-1/2} / oversample``; the period is the smallest
    power-of-two multiple of the spacing covering ``[-1, 1]`` plus one
    frequency cube on each side.
    """
    root = math.sqrt(R)
    h = 1.0 / (root * oversample)
    need = 2.0 * (1.0 + 2.0 / root) / h
    N = 1 << int(math.ceil(math.log2(need)))
    return Grid(base_dims, N * h, N)


def _check_support(f: GridFunction, tol: float = 1e-12) -> None:
    pts = f.grid.points()
    outside = np.zeros(f.grid.shape, dtype=bool)
    for p in pts:
        outside |= np.abs(p) > 1.0 + 1e-12
    vals = np.abs(f.spatial_values)
    scale = vals.max() if vals.size else 0.0
    if np.any(vals[outside] > tol * scale):
        raise DomainError("f is not supported in [-1, 1]^{n-1}")


def extension_operator(f: GridFunction, eval_grid: Grid | None = None, points: Sequence[np.ndarray] | None = None) -> GridFunction | np.ndarray:
    """``Ef(x_bar, x_n) = int f(xi) e(x_bar . xi + x_n |xi|^2) dxi`` by node quadrature.

    ``f`` lives on a ``(n-1)``-dimensional grid whose sample points are the
    frequency nodes.  Either ``eval_grid`` (an ``n``-dimensional grid) or
    explicit per-axis coordinate arrays ``points`` select where to evaluate;
    the latter returns a plain array on the tensor product of the axes.
    """
    _check_support(f)
    base = f.grid
    d = base.n_dims
    if eval_grid is not None:
        if eval_grid.n_dims != d + 1:
            raise ValueError("evaluation grid must have one more dimension than f")
        axes = [eval_grid.axis_points(a) for a in range(d + 1)]
    elif points is not None:
        axes = [np.asarray(a, float) for a in points]
    else:
        raise ValueError("need eval_grid or points")
    vals = np.asarray(f.spatial_values)
    keep = [np.nonzero(np.any(vals != 0, axis=tuple(b for b in range(d) if b != a)))[0] for a in range(d)]
    if any(k.size == 0 for k in keep):
        out = np.zeros(tuple(len(a) for a in axes), dtype=complex)
        return GridFunction.from_spatial(eval_grid, out) if eval_grid is not None else out
    sl = tuple(slice(k.min(), k.max() + 1) for k in keep)
    vals = vals[sl]
    nodes = [base.axis_points(a)[sl[a]] for a in range(d)]
    dV = base.cell_volume
    kernels = [np.exp(2j * np.pi * np.outer(axes[a], nodes[a])) for a in range(d)]
    t_axis = axes[d]
    out = np.empty(tuple(len(a) for a in axes), dtype=complex)
    if d == 1:
        lift = np.exp(2j * np.pi * np.outer(nodes[0] ** 2, t_axis))
        out[...] = kernels[0] @ (vals[:, None] * lift) * dV
    elif d == 2:
        sq = nodes[0][:, None] ** 2 + nodes[1][None, :] ** 2
        for i, t in enumerate(t_axis):
            out[:, :, i] = kernels[0] @ (vals * np.exp(2j * np.pi * t * sq)) @ kernels[1].T * dV
    else:
        raise ValueError("extension operator supports n <= 3")
    if eval_grid is not None:
        return GridFunction.from_spatial(eval_grid, out)
    return out


@dataclass(frozen=True)
class Tube:
    """``{|(x_bar - c_q) + 2 c_omega x_n| <= M R^{1/2}, |x_n| <= R}``."""

    center_base: tuple[float, ...]
    omega_center: tuple[float, ...]
    scale: float
    dilation: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center_base", tuple(float(c) for c in self.center_base))
        object.__setattr__(self, "omega_center", tuple(float(c) for c in self.omega_center))
        if self.dilation < 1:
            raise ValueError("dilation must be at least 1")

    @property
    def short_radius(self) -> float:
        return math.sqrt(self.scale)

    @property
    def length(self) -> float:
        return float(self.scale)

    @property
    def direction(self) -> np.ndarray:
        v = np.concatenate([-2.0 * np.asarray(self.omega_center), [1.0]])
        return v / np.linalg.norm(v)

    def dilate(self, M: float) -> "Tube":
        return Tube(self.center_base, self.omega_center, self.scale, M)

    def offset(self, x: np.ndarray) -> np.ndarray:
        """``((x_bar - c_q) + 2 c_omega x_n) / R^{1/2}``, last axis = coordinates."""
        x = np.asarray(x, float)
        bar, xn = x[..., :-1], x[..., -1:]
        return (bar - np.asarray(self.center_base) + 2.0 * np.asarray(self.omega_center) * xn) / self.short_radius

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        u = np.linalg.norm(self.offset(x), axis=-1)
        return (u <= self.dilation * (1 + 1e-12)) & (np.abs(x[..., -1]) <= self.scale * (1 + 1e-12))


@dataclass(frozen=True)
class Tile:
    """Axis-parallel box dual to a frequency box (box formulation)."""

    center: tuple[float, ...]
    sides: tuple[float, ...]

    def contains(self, x: np.ndarray) -> np.ndarray:
        d = np.abs(np.asarray(x, float) - np.asarray(self.center))
        return np.all(d <= np.asarray(self.sides) / 2, axis=-1)


@dataclass(frozen=True, eq=False)
class WavePacketSet:
    """Coefficients with their tube data, stored column-wise.

    ``omega_centers`` and ``q_centers`` have one row per packet.  For the box
    formulation ``omega_centers`` repeats the box center and ``q_centers`` are
    the tile centers.
    """

    scale: float
    formulation: str
    omega_centers: np.ndarray
    q_centers: np.ndarray
    coefficients: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.formulation not in ("extension", "dual_box"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        for name in ("omega_centers", "q_centers", "coefficients"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return int(self.coefficients.size)

    @property
    def tubes(self) -> list:
        if self.formulation == "extension":
            return [Tube(tuple(q), tuple(w), self.scale) for q, w in zip(self.q_centers, self.omega_centers)]
        sides = tuple(self.meta["tile_sides"])
        return [Tile(tuple(q), sides) for q in self.q_centers]

    @property
    def profiles(self) -> list[dict]:
        return [
            {"omega_center": tuple(w), "q_center": tuple(q)}
            for q, w in zip(self.q_centers, self.omega_centers)
        ]

    def energy(self) -> float:
        return float(np.sum(np.abs(self.coefficients) ** 2))

    def omega_energy(self) -> dict[tuple[float, ...], float]:
        out: dict[tuple[float, ...], float] = {}
        for w, a in zip(map(tuple, self.omega_centers), self.coefficients):
            out[w] = out.get(w, 0.0) + float(abs(a) ** 2)
        return out

    def nonzero(self, tol: float = 0.0) -> "WavePacketSet":
        mag = np.abs(self.coefficients)
        keep = mag > tol * (mag.max() if mag.size else 0.0)
        return WavePacketSet(self.scale, self.formulation, self.omega_centers[keep], self.q_centers[keep], self.coefficients[keep], dict(self.meta, subset=True))

    def records(self) -> list[dict]:
        scale = self.scale
        return [
            {
                "omega_center": [float(v) for v in w],
                "q_center": [float(v) for v in q],
                "coeff_re": float(a.real),
                "coeff_im": float(a.imag),
                "scale": scale,
            }
            for q, w, a in zip(self.q_centers, self.omega_centers, self.coefficients)
        ]


def write_packets_jsonl(path: str | Path, packets: WavePacketSet) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for rec in packets.records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def _oversample(grid: Grid, R: float) -> int:
    root = math.sqrt(R)
    if abs(root - round(root)) > 1e-9:
        raise ResolutionError("R must be a perfect square")
    ratios = [1.0 / (root * h) for h in grid.spacing]
    m = round(ratios[0])
    if any(abs(r - m) > 1e-9 * m for r in ratios) or m < 2:
        raise ResolutionError(f"node spacing {grid.spacing} is not R^(-1/2)/m with integer m >= 2")
    return m


def _omega_range(R: float) -> range:
    root = round(math.sqrt(R))
    return range(-root, root + 1)


def wp_decompose_extension(f: GridFunction, R: float) -> WavePacketSet:
    """Wave packet coefficients of ``f`` at scale ``R``.

    Frequency cubes ``omega`` have centers ``R^{-1/2} l`` with ``|l_i| <= R^{1/2}``;
    spatial centers are ``(R^{1/2} / 2) k`` with ``k`` in ``[-m, m)^{n-1}``,
    which is the full set of distinct discrete characters on the ``2m`` nodes
    of each cube, so no truncation occurs.
    """
    _check_support(f)
    grid = f.grid
    d = grid.n_dims
    m = _oversample(grid, R)
    root = round(math.sqrt(R))
    for N in grid.samples_per_axis:
        if (root + 1) * m > N // 2:
            raise ResolutionError("grid does not contain every frequency cube meeting [-1, 1]")
    h = grid.spacing[0]
    vals = np.asarray(f.spatial_values)
    window = _PSI(np.arange(-m, m) / m)
    win = window
    for _ in range(d - 1):
        win = np.multiply.outer(win, window)
    block = 2 * m
    norm = (h ** d) * R ** (d / 4) * block ** d * 2.0 ** (-d / 2)
    omegas, qs, coeffs = [], [], []
    k_grid = np.stack(np.meshgrid(*([np.fft.fftfreq(block, 1.0 / block)] * d), indexing="ij"), axis=-1).reshape(-1, d)
    q_offsets = k_grid * (root / 2.0)
    for l in np.ndindex(*([2 * root + 1] * d)):
        lv = np.asarray(l) - root
        start = [int(grid.samples_per_axis[a] // 2 + lv[a] * m - m) for a in range(d)]
        sl = tuple(slice(s, s + block) for s in start)
        b = vals[sl] * win
        if not np.any(b):
            continue
        # sum_i b_i e(+k.i/(2m)) for k in fft order
        c = np.fft.ifftn(np.fft.ifftshift(b)) * norm
        omegas.append(np.broadcast_to(lv / root, (k_grid.shape[0], d)))
        qs.append(q_offsets)
        coeffs.append(c.reshape(-1))
    if not coeffs:
        empty = np.zeros((0, d))
        return WavePacketSet(float(R), "extension", empty, empty, np.zeros(0, complex), {"oversample": m, "dims": d})
    return WavePacketSet(
        float(R),
        "extension",
        np.concatenate(omegas),
        np.concatenate(qs),
        np.concatenate(coeffs),
        {"oversample": m, "dims": d, "q_radius": m * root / 2.0},
    )


def wp_reconstruct_extension(packets: WavePacketSet, grid: Grid) -> GridFunction:
    """``2^{-(n-1)/2} sum_T a_T gamma_T`` sampled at the nodes of ``grid``."""
    R = packets.scale
    d = grid.n_dims
    m = _oversample(grid, R)
    root = round(math.sqrt(R))
    block = 2 * m
    out = np.zeros(grid.shape, dtype=complex)
    window = _PSI(np.arange(-m, m) / m)
    win = window
    for _ in range(d - 1):
        win = np.multiply.outer(win, window)
    norm = R ** (d / 4) * 2.0 ** (-d / 2)
    per = block ** d
    for s in range(0, len(packets), per):
        w = packets.omega_centers[s]
        lv = np.rint(np.asarray(w) * root).astype(int)
        a = packets.coefficients[s:s + per].reshape([block] * d)
        # sum_k a_k e(-k.i/(2m)) evaluated at i in natural order
        vals = np.fft.fftshift(np.fft.fftn(a)) * norm * win
        start = [int(grid.samples_per_axis[x] // 2 + lv[x] * m - m) for x in range(d)]
        sl = tuple(slice(t, t + block) for t in start)
        out[sl] += vals
    return GridFunction.from_spatial(grid, out)


def omega_pieces(f: GridFunction, R: float) -> dict[tuple[float, ...], float]:
    """``|f gamma(R^{1/2}(. - c_omega))|_2^2`` for every frequency cube."""
    grid = f.grid
    d = grid.n_dims
    m = _oversample(grid, R)
    root = round(math.sqrt(R))
    pts = grid.points()
    vals = np.abs(f.spatial_values) ** 2
    out = {}
    for l in np.ndindex(*([2 * root + 1] * d)):
        lv = np.asarray(l) - root
        g = np.ones(grid.shape)
        for a in range(d):
            g = g * _PSI(root * pts[a] - lv[a]) ** 2
        out[tuple(lv / root)] = float(np.sum(vals * g) * grid.cell_volume)
    return out


__all__.append("omega_pieces")


def _profile_integral(u: np.ndarray, t: np.ndarray, nodes: int = 2049) -> np.ndarray:
    """``int psi(eta) e(eta u + eta^2 t) d eta`` for broadcastable ``u, t``."""
    eta = np.linspace(-2.0 / 3.0, 2.0 / 3.0, nodes)
    w = _PSI(eta) * (eta[1] - eta[0])
    u = np.asarray(u, float)
    t = np.asarray(t, float)
    shape = np.broadcast(u, t).shape
    uf = np.broadcast_to(u, shape).reshape(-1)
    tf = np.broadcast_to(t, shape).reshape(-1)
    out = np.empty(uf.size, dtype=complex)
    step = 4096
    for s in range(0, uf.size, step):
        ph = np.outer(uf[s:s + step], eta) + np.outer(tf[s:s + step], eta ** 2)
        out[s:s + step] = np.exp(2j * np.pi * ph) @ w
    return out.reshape(shape)


def packet_values(tube: Tube, x: np.ndarray) -> np.ndarray:
    """``phi_T(x) = E gamma_T (x)`` at points ``x`` (last axis = coordinates).

    After the substitution ``eta = R^{1/2}(xi - c_omega)`` the integral factors
    over coordinates into one-dimensional oscillatory integrals.
    """
    x = np.asarray(x, float)
    R = tube.scale
    d = x.shape[-1] - 1
    u = tube.offset(x)
    t = x[..., -1] / R
    val = np.ones(x.shape[:-1], dtype=complex)
    for j in range(d):
        val = val * _profile_integral(u[..., j], t)
    c = np.asarray(tube.omega_center)
    carrier = np.exp(2j * np.pi * (x[..., :-1] @ c + x[..., -1] * float(c @ c)))
    return R ** (-d / 4) * carrier * val


@dataclass(frozen=True)
class ProfileReport:
    scale: float
    dilation: float
    decay_order: int
    sup_global: float
    sup_outside: float
    center_value: float
    inside_outside_ratio: float
    fitted_C: float
    fitted_C_N: float
    plateau_ratio: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def packet_profile_check(
    tube: Tube,
    M: float = 1.0,
    N_decay: int = 2,
    samples_u: int = 401,
    samples_t: int = 65,
    reach: float | None = None,
) -> ProfileReport:
    """Sample ``|phi_T|`` on a grid covering the slab ``|x_n| <= R`` around ``T``.

    ``fitted_C = sup |phi_T| R^{(n-1)/4}`` and
    ``fitted_C_N = sup_{outside MT} |phi_T| R^{(n-1)/4} M^{N}``.
    ``plateau_ratio`` is ``|phi_T(center)|`` over ``R^{-(n-1)/4} |int gamma|``.
    """
    R = tube.scale
    d = len(tube.center_base)
    reach = max(4.0 * M, M + 6.0) if reach is None else reach
    root = math.sqrt(R)
    xn = np.linspace(-R, R, samples_t)
    off = np.linspace(-reach, reach, samples_u) * root
    if d == 1:
        XN, OFF = np.meshgrid(xn, off, indexing="ij")
        xbar = tube.center_base[0] - 2 * tube.omega_center[0] * XN + OFF
        pts = np.stack([xbar, XN], axis=-1)
    elif d == 2:
        sub = off[:: max(1, samples_u // 81)]
        XN, O1, O2 = np.meshgrid(xn, sub, sub, indexing="ij")
        x1 = tube.center_base[0] - 2 * tube.omega_center[0] * XN + O1
        x2 = tube.center_base[1] - 2 * tube.omega_center[1] * XN + O2
        pts = np.stack([x1, x2, XN], axis=-1)
    else:
        raise ValueError("profile check supports n <= 3")
    vals = np.abs(packet_values(tube, pts))
    inside = tube.dilate(M).contains(pts)
    sup_global = float(vals.max())
    sup_out = float(vals[~inside].max()) if np.any(~inside) else 0.0
    center = np.concatenate([np.asarray(tube.center_base), [0.0]])
    center_value = float(abs(packet_values(tube, center[None, :])[0]))
    scale = R ** (d / 4)
    integral = gamma_tensor(d).integral()
    return ProfileReport(
        scale=float(R),
        dilation=float(M),
        decay_order=int(N_decay),
        sup_global=sup_global,
        sup_outside=sup_out,
        center_value=center_value,
        inside_outside_ratio=float(sup_global / sup_out) if sup_out > 0 else math.inf,
        fitted_C=sup_global * scale,
        fitted_C_N=sup_out * scale * M ** N_decay,
        plateau_ratio=center_value * scale / integral,
    )


# ---------------------------------------------------------------------------
# box formulation


def _box_eta(grid: Grid, B: FrequencyBox) -> np.ndarray:
    """``eta_B(xi) = prod psi((xi_i - c_i) / (1.5 l_i))``; 1 on ``B``, 0 off ``2B``."""
    out = np.ones(grid.shape)
    for a in range(grid.n_dims):
        side = 2 * B.half_widths[a]
        val = _PSI((grid.axis_freqs(a) - B.center[a]) / (1.5 * side))
        shape = [1] * grid.n_dims
        shape[a] = -1
        out = out * val.reshape(shape)
    return out


def _box_window(grid: Grid, B: FrequencyBox, period_factor: float):
    """Per axis: lattice indices of the modes carrying ``eta_B``, their
    integer offsets from the box center, and the expansion window length."""
    idx, offsets, counts = [], [], []
    for a in range(grid.n_dims):
        L = grid.period[a]
        side = 2 * B.half_widths[a]
        M = period_factor * side * L
        if abs(M - round(M)) > 1e-9 or round(M) < 1:
            raise ResolutionError(f"window of {M} modes on axis {a} is not an integer")
        c_off = (B.center[a] - grid.band_center[a]) * L
        if abs(c_off - round(c_off)) > 1e-9:
            raise ResolutionError("box center must be a lattice point")
        reach = int(math.floor(side * L + 1e-9))
        offs = np.arange(-reach, reach + 1)
        absolute = int(round(c_off)) + offs
        N = grid.samples_per_axis[a]
        if absolute.min() < -N // 2 or absolute.max() >= N // 2:
            raise ResolutionError("support of eta_B leaves the resolvable band")
        idx.append(np.mod(absolute, N))
        offsets.append(offs)
        counts.append(int(round(M)))
    return idx, offsets, counts


def wp_decompose_box(F: GridFunction, B: FrequencyBox, period_factor: float = 2.0, tol: float = 1e-12) -> WavePacketSet:
    """Coefficients ``w_T = <F, W_T>`` for tiles at spacing ``1 / (period_factor l)``.

    ``W_T_hat(xi) = c * e(-x_T.(xi - c_B)) eta_B(xi)`` with
    ``c = prod (period_factor l_i)^{-1/2}``.  Then ``sum <F,W_T> W_T = F``
    whenever ``period_factor >= 3/2``; ``period_factor = 1`` is the tiling
    dual to ``B`` itself, for which the expansion aliases.
    """
    if period_factor < 1:
        raise ValueError("period_factor must be at least 1")
    grid = F.grid
    coeffs = F.freq_coeffs
    inside = B.mask(grid)
    mag = np.abs(coeffs)
    if np.any(mag[~inside] > tol * max(mag.max(), 1e-300)):
        raise DomainError("supp F_hat is not contained in B")
    idx, offsets, counts = _box_window(grid, B, period_factor)
    eta = _box_eta(grid, B)
    sub = (coeffs * eta)[np.ix_(*idx)]
    folded = np.zeros(counts, dtype=complex)
    np.add.at(folded, np.ix_(*[np.mod(o, M) for o, M in zip(offsets, counts)]), sub)
    sides = [2 * h for h in B.half_widths]
    c = float(np.prod([period_factor * s for s in sides])) ** -0.5
    # w_k = (c/|box|) sum_j g_j e(+k.j/M) with j the offset from c_B in lattice units
    total = float(np.prod(counts))
    w = np.fft.ifftn(folded) * total * c / grid.box_volume
    tile_sides = [1.0 / (period_factor * s) for s in sides]
    ks = np.stack(np.meshgrid(*[np.fft.fftfreq(M, 1.0 / M) for M in counts], indexing="ij"), axis=-1).reshape(-1, grid.n_dims)
    centers = ks * np.asarray(tile_sides)
    return WavePacketSet(
        scale=float(max(tile_sides)),
        formulation="dual_box",
        omega_centers=np.broadcast_to(np.asarray(B.center), centers.shape),
        q_centers=centers,
        coefficients=w.reshape(-1),
        meta={
            "box": B,
            "grid": grid,
            "period_factor": period_factor,
            "tile_sides": tile_sides,
            "window_counts": counts,
            "normalization": c,
        },
    )


def wp_synthesize_box(packets: WavePacketSet, coefficients: np.ndarray | None = None) -> GridFunction:
    """``sum_T w_T W_T`` for the tiles of ``packets`` (optionally new coefficients)."""
    meta = packets.meta
    grid: Grid = meta["grid"]
    B: FrequencyBox = meta["box"]
    counts = meta["window_counts"]
    w = packets.coefficients if coefficients is None else np.asarray(coefficients)
    w = w.reshape(counts)
    idx, offsets, _ = _box_window(grid, B, meta["period_factor"])
    # G_hat(xi) = c eta(xi) sum_k w_k e(-k.j/M), periodic in the offset j
    periodic = np.fft.fftn(w) * meta["normalization"]
    vals = periodic[np.ix_(*[np.mod(o, M) for o, M in zip(offsets, counts)])]
    out = np.zeros(grid.shape, dtype=complex)
    out[np.ix_(*idx)] = vals
    out *= _box_eta(grid, B)
    return GridFunction.from_coeffs(grid, out)


def level_set_reconstruction(packets: WavePacketSet, lam: float) -> GridFunction:
    """Partial sum over packets with ``lam <= |w_T| < 2 lam``."""
    mag = np.abs(packets.coefficients)
    keep = (mag >= lam) & (mag < 2 * lam)
    return wp_synthesize_box(packets, np.where(keep, packets.coefficients, 0))


def box_lp_comparability(packets: WavePacketSet, subset: np.ndarray, lam: float, p: float, phases: np.ndarray | None = None) -> float:
    """``|sum_{T in subset} w_T W_T|_p / (lam |subset|^{1/p})`` with ``|w_T| = lam``."""
    w = np.zeros(len(packets), dtype=complex)
    ph = np.ones(int(np.count_nonzero(subset))) if phases is None else phases
    w[subset] = lam * ph
    G = wp_synthesize_box(packets, w)
    norm = lp_norm(G, None, p, kind="global")
    count = int(np.count_nonzero(subset))
    denom = lam * (count ** (1.0 / p) if not math.isinf(p) else 1.0)
    return norm / denom


__all__.append("box_lp_comparability")
