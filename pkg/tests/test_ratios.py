from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decoupling_lab.grid_fourier import (
    AffineFreqMap,
    AffineImagePartition,
    Grid,
    GridFunction,
    SpatialBox,
    apply_affine_freq,
    cap_partition,
)
from decoupling_lab.ratios import (
    DecouplingInstance,
    DegenerateConfigurationError,
    PointMassConfig,
    UndefinedRatioError,
    appendix_b_config,
    bilinear_holder_bound,
    bilinear_ratio,
    broad_narrow_split,
    decoupling_ratio,
    exp_sum_moment,
    fit_log_slope,
    interval_pieces,
    iterability_check,
    parallel_decoupling_check,
    point_mass_grid_check,
    point_mass_lower_bound,
    sample_generic_config,
    search_lower_bound,
    sharp_example,
    sharp_example_ratio,
    sharp_example_spectrum,
)
from decoupling_lab.wave_packets import DomainError


def neighbourhood_grid(n_dims: int) -> Grid:
    """Small grid whose band holds N(delta) for delta >= 1/16 in n = 2 and 1/4 in n = 3."""
    if n_dims == 2:
        return Grid(2, 16.0, 64, band_center=(0.5, 0.5))
    return Grid(3, 8.0, 32, band_center=(0.5, 0.5, 1.0))


def random_cap_function(delta: float, n_dims: int, rng: np.random.Generator) -> GridFunction:
    grid = neighbourhood_grid(n_dims)
    parts = cap_partition(delta, n_dims)
    inside = parts.neighbourhood_mask(grid) & (parts.labels(grid) >= 0)
    coeffs = np.where(inside, rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape), 0)
    return GridFunction.from_coeffs(grid, coeffs)


def one_mode_per_cap(delta: float, n_dims: int) -> GridFunction:
    grid = neighbourhood_grid(n_dims)
    parts = cap_partition(delta, n_dims)
    labels = parts.labels(grid) * parts.neighbourhood_mask(grid) - ~parts.neighbourhood_mask(grid)
    coeffs = np.zeros(grid.shape, complex)
    for i in range(parts.count):
        first = np.flatnonzero(labels == i)[0]
        coeffs.flat[first] = 1.0
    return GridFunction.from_coeffs(grid, coeffs)


# ---------------------------------------------------------------------------
# the quotient


def test_single_cap_ratio_is_one():
    rng = np.random.default_rng(0)
    F = random_cap_function(1 / 16, 2, rng)
    parts = cap_partition(1 / 16, 2)
    only = GridFunction.from_coeffs(F.grid, np.where(parts.labels(F.grid) == 2, F.freq_coeffs, 0))
    for p in (2.0, 4.0, 7.0):
        assert decoupling_ratio(DecouplingInstance(only, parts, p)) == 1.0


def test_zero_function_is_undefined():
    grid = neighbourhood_grid(2)
    with pytest.raises(UndefinedRatioError):
        decoupling_ratio(DecouplingInstance(GridFunction.zeros(grid), cap_partition(1 / 4, 2), 4.0))


def test_support_outside_pieces_rejected():
    grid = neighbourhood_grid(2)
    coeffs = np.zeros(grid.shape, complex)
    coeffs[0, 0] = 1.0  # the band center (1/2, 1/2) lies above the parabola's caps
    coeffs[np.unravel_index(np.argmin(np.abs(grid.freqs()[0] + 0.25) + np.abs(grid.freqs()[1])), grid.shape)] = 1.0
    with pytest.raises(DomainError):
        DecouplingInstance(GridFunction.from_coeffs(grid, coeffs), cap_partition(1 / 4, 2), 4.0)


@pytest.mark.parametrize("n_dims,delta", [(2, 1 / 16), (3, 1 / 4)])
def test_plancherel_and_trivial_bound(n_dims, delta):
    rng = np.random.default_rng(n_dims)
    parts = cap_partition(delta, n_dims)
    for _ in range(10):
        F = random_cap_function(delta, n_dims, rng)
        assert decoupling_ratio(DecouplingInstance(F, parts, 2.0)) <= 1 + 1e-9
        for p in (4.0, 6.0):
            assert decoupling_ratio(DecouplingInstance(F, parts, p)) <= math.sqrt(parts.count) * (1 + 1e-6)


@pytest.mark.parametrize("n_dims,delta", [(2, 1 / 16), (3, 1 / 4)])
def test_orthogonal_witness_reaches_plancherel(n_dims, delta):
    F = one_mode_per_cap(delta, n_dims)
    assert decoupling_ratio(DecouplingInstance(F, cap_partition(delta, n_dims), 2.0)) >= 1 - 1e-6


@pytest.mark.parametrize("kind", ["local", "weighted"])
def test_local_kinds_are_finite(kind):
    F = random_cap_function(1 / 16, 2, np.random.default_rng(4))
    value = decoupling_ratio(DecouplingInstance(F, cap_partition(1 / 16, 2), 4.0, norm_kind=kind))
    assert math.isfinite(value) and value > 0


def test_affine_invariance():
    rng = np.random.default_rng(9)
    F = random_cap_function(1 / 16, 2, rng)
    parts = cap_partition(1 / 16, 2)
    base = decoupling_ratio(DecouplingInstance(F, parts, 6.0))
    for _ in range(5):
        shear = int(rng.integers(-1, 2))
        T = AffineFreqMap([[1.0, 0.0], [float(shear), 1.0]], [int(rng.integers(-3, 4)) / 16, 0.0])
        G = apply_affine_freq(F, T)
        image = AffineImagePartition(parts, T, F.grid)
        assert decoupling_ratio(DecouplingInstance(G, image, 6.0)) == pytest.approx(base, rel=1e-10)


def test_cylindrical_consistency():
    rng = np.random.default_rng(2)
    line = Grid(1, 16.0, 32)
    plane = Grid(2, 16.0, 32)
    coeffs = np.zeros(line.shape, complex)
    coeffs[:8] = rng.normal(size=8) + 1j * rng.normal(size=8)
    F = GridFunction.from_coeffs(line, coeffs)
    g = rng.normal(size=32) + 1j * rng.normal(size=32)
    G = GridFunction.from_spatial(plane, F.spatial_values[:, None] * g[None, :])
    xi = line.axis_freqs(0)
    cuts = [(0.0, 0.125), (0.125, 0.25), (0.25, 0.375), (0.375, 0.5)]
    masks_1d = [(xi >= a) & (xi < b) for a, b in cuts]
    masks_2d = [np.broadcast_to(m[:, None], plane.shape).copy() for m in masks_1d]
    for p in (2.0, 4.0, 6.0):
        low = decoupling_ratio(DecouplingInstance(F, masks_1d, p))
        high = decoupling_ratio(DecouplingInstance(G, masks_2d, p))
        assert high == pytest.approx(low, rel=1e-8)


def test_iterability_and_parallel_decoupling():
    rng = np.random.default_rng(3)
    for _ in range(3):
        F = random_cap_function(1 / 16, 2, rng)
        for p in (4.0, 6.0):
            assert iterability_check(F, cap_partition(1 / 4, 2), cap_partition(1 / 16, 2), p)["holds"]
            windows = SpatialBox((0.0, 0.0), 16.0).subdivide(2)
            assert parallel_decoupling_check(F, cap_partition(1 / 16, 2), p, windows)["holds"]


# ---------------------------------------------------------------------------
# sharp example


def test_sharp_example_trivial_scale():
    assert sharp_example_ratio(1.0, [4.0, 6.0]).ratio[4.0] == 1.0


def test_banded_evaluator_matches_dense_grid():
    delta = 1 / 16
    F = sharp_example(delta, 2, oversample=4)
    spec, _ = sharp_example_spectrum(delta)
    assert np.array_equal(spec.to_gridfunction(F.grid).freq_coeffs, F.freq_coeffs)
    for p in (4.0, 6.0):
        dense = decoupling_ratio(DecouplingInstance(F, cap_partition(delta, 2), p))
        # sampling above p/2 times Nyquist makes both even-power sums exact
        assert sharp_example_ratio(delta, [p], oversample=4).ratio[p] == pytest.approx(dense, rel=1e-9)
        # the default sampling stays inside the half-percent self-convergence gate
        assert sharp_example_ratio(delta, [p]).ratio[p] == pytest.approx(dense, rel=5e-3)


def test_sharp_example_plateau_at_origin():
    # the cap bumps equal 1 on a quarter of each cap, so F(0) >= delta / 4
    for delta in (1 / 4, 1 / 16, 1 / 64):
        F = sharp_example(delta, 2)
        origin = tuple(N // 2 for N in F.grid.shape)
        assert abs(F.spatial_values[origin]) >= delta / 4


def test_sharp_example_slopes():
    deltas = [4.0 ** -k for k in (2, 3, 4)]
    reports = [sharp_example_ratio(d, [6.0, 50.0], self_convergence=False) for d in deltas]
    critical = fit_log_slope(deltas, [r.ratio[6.0] for r in reports])
    endpoint = fit_log_slope(deltas, [r.ratio[50.0] for r in reports])
    assert abs(critical) <= 0.05
    assert abs(endpoint - (0.25 - 3 / 100)) <= 0.05


def test_sharp_example_self_convergence():
    rep = sharp_example_ratio(1 / 64, [4.0, 6.0])
    for p in (4.0, 6.0):
        assert rep.ratio_fine[p] == pytest.approx(rep.ratio[p], rel=5e-3)


# ---------------------------------------------------------------------------
# point masses


def multiset_oracle(config: PointMassConfig, subset=None) -> int:
    """Moment from multisets and multinomial weights, keyed by integer sums."""
    idx = range(len(config.points)) if subset is None else sorted(subset)
    den = math.lcm(*[c.denominator for pt in config.points for c in pt])
    ints = {i: tuple(int(c * den) for c in config.points[i]) for i in idx}
    weights: Counter = Counter()
    for combo in itertools.combinations_with_replacement(sorted(ints), config.k):
        key = tuple(sum(ints[i][a] for i in combo) for a in range(config.dim))
        mult = math.factorial(config.k)
        for count in Counter(combo).values():
            mult //= math.factorial(count)
        weights[key] += mult
    return sum(w * w for w in weights.values())


def test_point_mass_moments():
    cfg = appendix_b_config(3)
    assert exp_sum_moment(cfg) == 93
    assert exp_sum_moment(cfg, cfg.indices_of(0)) == 20
    bound = point_mass_lower_bound(cfg)
    assert bound.value == pytest.approx(93 ** (1 / 6) / math.sqrt(20 ** (1 / 3) + 1), rel=1e-15)
    assert f"{bound.value:.4f}" == "1.1044"


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_single_point_moment(k):
    assert exp_sum_moment(PointMassConfig(((Fraction(1, 3), Fraction(2, 7)),), (0,), k)) == 1


def test_single_set_bound_is_one():
    cfg = sample_generic_config(3, (0, 0, 0), 3, seed=1)
    assert point_mass_lower_bound(cfg).value == 1.0


def test_four_points_split_two_two():
    cfg = sample_generic_config(4, (0, 0, 1, 1), 3, seed=7)
    total = multiset_oracle(cfg)
    pair = multiset_oracle(cfg, (0, 1))
    assert exp_sum_moment(cfg) == total
    expected = total ** (1 / 6) / math.sqrt(2 * pair ** (1 / 3))
    value = point_mass_lower_bound(cfg).value
    assert value == pytest.approx(expected, rel=1e-14)
    assert value > 1


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n_points=st.integers(1, 6), k=st.integers(1, 3))
def test_moment_matches_multiset_oracle(seed, n_points, k):
    cfg = sample_generic_config(n_points, [i % 2 for i in range(n_points)], k, seed=seed)
    assert exp_sum_moment(cfg) == multiset_oracle(cfg)


def test_degenerate_configuration_named():
    cfg = PointMassConfig(((0, 0), (1, 0), (2, 0)), (0, 0, 1), 2)
    with pytest.raises(DegenerateConfigurationError, match="sum to"):
        exp_sum_moment(cfg)


def test_config_json_round_trip():
    cfg = appendix_b_config(3)
    again = PointMassConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert again == cfg


def test_single_point_grid_check():
    cfg = PointMassConfig(((0, 0),), (0,), 3)
    assert point_mass_grid_check(cfg, 2.0 ** -6, samples_per_axis=256).ratio == pytest.approx(1.0, abs=1e-6)


def test_overlapping_bumps_rejected():
    cfg = PointMassConfig(((0, 0), (Fraction(1, 100), 0)), (0, 1), 3)
    with pytest.raises(ValueError, match="overlap"):
        point_mass_grid_check(cfg, 2.0 ** -4, samples_per_axis=256)


def test_grid_check_records_half_epsilon_gap():
    rep = point_mass_grid_check(appendix_b_config(3), 2.0 ** -4, samples_per_axis=256, half_epsilon=True)
    assert rep.gap_half_epsilon is not None and math.isfinite(rep.gap_half_epsilon)


# ---------------------------------------------------------------------------
# search


@pytest.mark.parametrize("delta,p,n_dims", [(1 / 16, 6.0, 2), (1 / 4, 4.0, 3)])
def test_search_bounds(delta, p, n_dims):
    w = search_lower_bound(delta, p, n_dims, budget=40, seed=1)
    caps = cap_partition(delta, n_dims).count
    assert 1 - 1e-12 <= w.value <= math.sqrt(caps) * (1 + 1e-6)
    sharp = search_lower_bound(delta, p, n_dims, strategy="sharp_example", budget=2)
    assert w.value >= sharp.value
    assert w.reevaluate() == pytest.approx(w.value, rel=1e-9)


def test_search_is_deterministic():
    a = search_lower_bound(1 / 16, 4.0, 2, budget=30, seed=5)
    b = search_lower_bound(1 / 16, 4.0, 2, budget=30, seed=5)
    assert a.to_json() == b.to_json()


def test_search_dominates_banded_sharp_ratio():
    w = search_lower_bound(1 / 16, 6.0, 2, budget=30)
    assert w.value >= sharp_example_ratio(1 / 16, [6.0]).ratio[6.0] * (1 - 1e-9)


# ---------------------------------------------------------------------------
# bilinear quotient


def strip_function(grid: Grid, interval, delta: float, rng: np.random.Generator) -> GridFunction:
    xi1, xi2 = grid.freqs()
    inside = (xi1 >= interval[0]) & (xi1 <= interval[1]) & (xi2 >= xi1 ** 2) & (xi2 <= xi1 ** 2 + delta)
    return GridFunction.from_coeffs(grid, np.where(inside, rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape), 0))


def test_bilinear_ratio_bounded_by_holder_and_symmetric():
    rng = np.random.default_rng(8)
    grid = Grid(2, 64.0, 128)
    delta = 4.0 ** -2
    for _ in range(4):
        F1 = strip_function(grid, (0.0, 0.25), delta, rng)
        F2 = strip_function(grid, (0.5, 1.0), delta, rng)
        value = bilinear_ratio(F1, F2, 2, 6.0)
        assert value > 0
        assert value <= bilinear_holder_bound(F1, F2, 2, 6.0) * (1 + 1e-9)
        swapped = bilinear_ratio(F2, F1, 2, 6.0, intervals=((0.5, 1.0), (0.0, 0.25)))
        assert swapped == pytest.approx(value, rel=1e-12)


def test_bilinear_support_violation():
    rng = np.random.default_rng(0)
    grid = Grid(2, 64.0, 128)
    F1 = strip_function(grid, (0.5, 1.0), 1 / 16, rng)
    with pytest.raises(DomainError):
        bilinear_ratio(F1, F1, 2, 6.0)


def test_interval_pieces_partition_the_strip():
    grid = Grid(2, 64.0, 128)
    pieces = interval_pieces(grid, (0.5, 1.0), 2)
    assert len(pieces) == 2
    assert not np.any(pieces[0] & pieces[1])


# ---------------------------------------------------------------------------
# broad/narrow split


def test_split_concentrated():
    z = np.zeros(8, complex)
    z[3] = 2.0 + 1.0j
    res = broad_narrow_split(z)
    assert res.case == "concentrated" and res.alpha_star == 3 and res.constant == 4.0
    assert res.holds


def test_split_two_spikes():
    z = np.zeros(8, complex)
    z[2] = z[5] = 1.0
    res = broad_narrow_split(z, 8)
    assert res.case == "bilinear"
    assert res.lhs <= 8 ** 1.5 * math.sqrt(abs(z[2] * z[5])) * (1 + 1e-12)
    assert res.holds


def test_split_random_trials():
    rng = np.random.default_rng(16)
    for _ in range(1000):
        z = rng.normal(size=16) + 1j * rng.normal(size=16)
        z *= rng.uniform(size=16) ** rng.integers(1, 8)
        assert broad_narrow_split(z, 16).holds


@settings(max_examples=200, deadline=None)
@given(z=st.lists(st.complex_numbers(max_magnitude=1e6, allow_nan=False, allow_infinity=False), min_size=2, max_size=20))
def test_split_property(z):
    assert broad_narrow_split(z).holds
