from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import Polygon

from decoupling_lab.grid_fourier import Grid, GridFunction
from decoupling_lab.kakeya import (
    DirectedTube,
    PreconditionError,
    TubeFamily,
    ball_inflation_check,
    bilinear_kakeya_ratio,
    bilinear_kakeya_terms,
    clip_convex,
    direction_transversality,
    make_tube,
    multilinear_kakeya_ratio,
    polygon_area,
    random_transverse_family,
    read_tubes_csv,
    transversality,
    tube_intersection_area,
    write_tubes_csv,
)


def rotation(angle: float) -> np.ndarray:
    return np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])


def shapely_rectangle(tube: DirectedTube) -> Polygon:
    return Polygon(tube.corners())


def transverse_pair(rng: np.random.Generator, count: int, R: float, weights: bool = True):
    a = random_transverse_family(rng, (1.0, 0.0), count, R, spread=0.3 * R, weights=weights)
    b = random_transverse_family(rng, (0.0, 1.0), count, R, spread=0.3 * R, weights=weights)
    return a, b


# ---------------------------------------------------------------------------
# transversality


def corner_normals(lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    out = []
    for bits in itertools.product((0, 1), repeat=lo.size):
        point = np.where(np.array(bits, bool), hi, lo)
        normal = np.append(-2 * point, 1.0)
        out.append(normal / np.linalg.norm(normal))
    return out


def test_identical_caps_are_not_transverse():
    cap = ((0.25, 0.25), (0.5, 0.5))
    assert transversality([cap, cap]).nu == pytest.approx(0.0, abs=1e-12)
    assert transversality([cap, cap, cap]).nu == pytest.approx(0.0, abs=1e-12)


def test_corner_caps_match_determinant_enumeration():
    caps = [((0.0, 0.0), (0.25, 0.25)), ((0.75, 0.0), (1.0, 0.25)), ((0.0, 0.75), (0.25, 1.0))]
    expected = min(
        abs(np.linalg.det(np.array(triple)))
        for triple in itertools.product(*[corner_normals(*c) for c in caps])
    )
    cert = transversality(caps)
    assert expected > 0
    assert cert.nu == pytest.approx(expected, rel=1e-12)
    assert len(cert.families) == 3 and all(len(f) == 4 for f in cert.families)


def test_planar_pair_matches_cross_products():
    caps = [((0.0,), (0.25,)), ((0.5,), (1.0,))]
    expected = min(
        abs(u[0] * v[1] - u[1] * v[0])
        for u, v in itertools.product(*[corner_normals(*c) for c in caps])
    )
    assert transversality(caps).nu == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("K", [8, 16, 32, 64])
def test_separated_triangle_gives_inverse_square_transversality(K):
    side = 1.0 / K
    cubes = [((0, 0), (side, side)), ((4 * side, 0), (5 * side, side)), ((0, 4 * side), (side, 5 * side))]
    corners = [
        [np.where(np.array(bits, bool), np.array(hi), np.array(lo)) for bits in itertools.product((0, 1), repeat=2)]
        for lo, hi in cubes
    ]
    smallest_area = min(
        abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])) / 2
        for a, b, c in itertools.product(*corners)
    )
    assert smallest_area * K ** 2 == pytest.approx(4.0)
    # det of the rows (-2 P, 1) is 8 area and every normal has length at most 3
    assert transversality(cubes).nu >= 8 * smallest_area / 27 * (1 - 1e-12)


def test_cap_count_precondition():
    with pytest.raises(ValueError):
        transversality([((0.0,), (0.5,))])
    with pytest.raises(ValueError):
        transversality([((0.0,), (0.1,)), ((0.4,), (0.5,)), ((0.8,), (0.9,))])


def test_direction_transversality_orthogonal():
    fams = [TubeFamily((make_tube((0, 0, 0), d, 16.0),)) for d in np.eye(3)]
    assert direction_transversality(fams).nu == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# exact geometry


@settings(max_examples=100, deadline=None)
@given(
    x=st.floats(-20, 20), y=st.floats(-20, 20),
    angle_a=st.floats(0, math.pi), angle_b=st.floats(0, math.pi),
    R=st.sampled_from([16.0, 64.0, 256.0]),
)
def test_intersection_area_matches_shapely(x, y, angle_a, angle_b, R):
    t1 = make_tube((0.0, 0.0), (math.cos(angle_a), math.sin(angle_a)), R)
    t2 = make_tube((x, y), (math.cos(angle_b), math.sin(angle_b)), R)
    oracle = shapely_rectangle(t1).intersection(shapely_rectangle(t2)).area
    assert tube_intersection_area(t1, t2) == pytest.approx(oracle, rel=1e-9, abs=1e-9 * R)


def test_clip_and_area_examples():
    square = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], float)
    shifted = square + 1
    assert polygon_area(square) == 4.0
    assert polygon_area(clip_convex(square, shifted)) == pytest.approx(1.0)
    assert polygon_area(clip_convex(square, square + 5)) == 0.0


def test_orthogonal_pair_closed_form():
    for R in (64.0, 256.0, 1024.0):
        t1, t2 = make_tube((0, 0), (1, 0), R), make_tube((0, 0), (0, 1), R)
        # the overlap is the sqrt(R) x sqrt(R) square and |T| = R^{3/2}
        assert tube_intersection_area(t1, t2) == pytest.approx(R)
        ratio = bilinear_kakeya_ratio(TubeFamily((t1,)), TubeFamily((t2,)), R)
        assert ratio == pytest.approx(R * R ** 2 / (t1.volume * t2.volume), rel=1e-12)
        assert abs(ratio - 1) <= 0.1


def test_parallel_tubes_rejected():
    a = TubeFamily((make_tube((0, 0), (1, 0), 64.0),))
    b = TubeFamily((make_tube((0, 3), (1, 0), 64.0),))
    with pytest.raises(PreconditionError):
        bilinear_kakeya_ratio(a, b, 64.0)


def test_bilinear_monte_carlo():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(200):
        R = (64.0, 256.0)[trial % 2]
        a, b = transverse_pair(rng, int(rng.integers(1, 51)), R)
        worst = max(worst, bilinear_kakeya_ratio(a, b, R))
    assert worst <= 10


def test_rigid_motion_invariance():
    rng = np.random.default_rng(5)
    for _ in range(10):
        R = 64.0
        a, b = transverse_pair(rng, 8, R)
        base = bilinear_kakeya_ratio(a, b, R)
        rot, shift = rotation(rng.uniform(0, 2 * math.pi)), rng.uniform(-100, 100, 2)
        moved = bilinear_kakeya_ratio(a.moved(rot, shift), b.moved(rot, shift), R)
        assert moved == pytest.approx(base, rel=1e-9)


def test_weight_scaling_covariance():
    rng = np.random.default_rng(6)
    a, b = transverse_pair(rng, 10, 64.0)
    base = bilinear_kakeya_terms(a, b, 64.0)
    doubled = bilinear_kakeya_terms(a.scaled(2.0), b.scaled(2.0), 64.0)
    assert doubled["numerator"] == pytest.approx(4 * base["numerator"], rel=1e-14)
    assert doubled["denominator"] == pytest.approx(4 * base["denominator"], rel=1e-14)
    assert bilinear_kakeya_ratio(a.scaled(2.0), b.scaled(2.0), 64.0) == pytest.approx(
        bilinear_kakeya_ratio(a, b, 64.0), rel=1e-14)


def test_disjoint_tube_cannot_increase_ratio():
    rng = np.random.default_rng(7)
    for _ in range(10):
        a, b = transverse_pair(rng, 6, 64.0)
        far = make_tube((10_000.0, 10_000.0), (1.0, 0.0), 64.0)
        assert bilinear_kakeya_ratio(a.with_tube(far), b, 64.0) <= bilinear_kakeya_ratio(a, b, 64.0)


def test_tube_family_invariants():
    with pytest.raises(ValueError):
        TubeFamily((make_tube((0, 0), (1, 0), 64.0),), (-1.0,))
    with pytest.raises(ValueError):
        TubeFamily((make_tube((0, 0), (1, 0), 64.0), make_tube((0, 0), (1, 0), 16.0)))


def test_tubes_csv_round_trip(tmp_path):
    fam = random_transverse_family(np.random.default_rng(1), (0, 0, 1), 5, 64.0, 10.0)
    again = read_tubes_csv(write_tubes_csv(tmp_path / "tubes.csv", fam))
    assert again == fam


# ---------------------------------------------------------------------------
# multilinear functional


def test_multilinear_reduces_to_bilinear():
    rng = np.random.default_rng(11)
    for _ in range(5):
        a, b = transverse_pair(rng, 6, 64.0, weights=False)
        exact = bilinear_kakeya_ratio(a, b, 64.0)
        grid = multilinear_kakeya_ratio([a, b], 64.0, 2.0)
        assert grid == pytest.approx(exact, rel=0.15)


def test_multilinear_grid_refinement():
    rng = np.random.default_rng(12)
    for _ in range(3):
        a, b = transverse_pair(rng, 6, 64.0, weights=False)
        coarse = multilinear_kakeya_ratio([a, b], 64.0, 2.0, cells_per_root=4)
        fine = multilinear_kakeya_ratio([a, b], 64.0, 2.0, cells_per_root=8)
        assert fine == pytest.approx(coarse, rel=0.05)


@pytest.mark.parametrize("n_dims", [2, 3])
def test_single_tube_per_family(n_dims):
    fams = [TubeFamily((make_tube((0,) * n_dims, d, 64.0),)) for d in np.eye(n_dims)]
    assert multilinear_kakeya_ratio(fams, 64.0, n_dims / (n_dims - 1)) <= 2


def test_endpoint_three_dimensional_trials():
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(50):
        R = 16.0
        fams = [random_transverse_family(rng, e, int(rng.integers(1, 8)), R, 0.3 * R, weights=False) for e in np.eye(3)]
        worst = max(worst, multilinear_kakeya_ratio(fams, R, 1.5))
    assert worst <= 20


def test_multilinear_preconditions():
    fams = [TubeFamily((make_tube((0, 0, 0), d, 16.0),)) for d in np.eye(3)]
    with pytest.raises(PreconditionError):
        multilinear_kakeya_ratio(fams, 16.0, 1.2)
    same = [TubeFamily((make_tube((0, 0), (1, 0), 16.0),))] * 2
    with pytest.raises(PreconditionError):
        multilinear_kakeya_ratio(same, 16.0, 2.0)


# ---------------------------------------------------------------------------
# ball inflation


def parabola_strip(delta: float):
    side = 1 / delta ** 2
    grid = Grid(2, (side, side), (256, 256))
    xi1, xi2 = grid.freqs()
    band = (xi2 >= xi1 ** 2 - 1e-12) & (xi2 <= xi1 ** 2 + delta ** 2 + 1e-12)
    sides = ((xi1 >= 0) & (xi1 <= 0.25)) | ((xi1 >= 0.5) & (xi1 <= 1))
    return grid, band & sides, xi1


def test_ball_inflation_zero_function():
    report = ball_inflation_check(GridFunction.zeros(Grid(2, (16.0, 16.0), (64, 64))), 0.25, 3.0)
    assert report.degenerate and report.lhs == 0.0 and report.rhs == 0.0


@pytest.mark.parametrize("delta", [1 / 4, 1 / 8])
def test_ball_inflation_single_flat_packet(delta):
    grid, mask, xi1 = parabola_strip(delta)
    flat = mask & (((xi1 >= 0) & (xi1 < delta)) | ((xi1 >= 0.5) & (xi1 < 0.5 + delta)))
    assert ball_inflation_check(GridFunction.from_coeffs(grid, flat.astype(complex)), delta, 3.0).ratio <= 4


@pytest.mark.parametrize("delta", [1 / 4, 1 / 8])
def test_ball_inflation_random(delta):
    rng = np.random.default_rng(int(1 / delta))
    grid, mask, _ = parabola_strip(delta)
    for _ in range(5):
        coeffs = np.where(mask, rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape), 0)
        report = ball_inflation_check(GridFunction.from_coeffs(grid, coeffs), delta, 3.0)
        assert report.p == 6.0
        assert report.ratio <= 50 * delta ** -0.1


def test_ball_inflation_preconditions():
    grid, mask, _ = parabola_strip(1 / 4)
    F = GridFunction.from_coeffs(grid, mask.astype(complex))
    with pytest.raises(PreconditionError):
        ball_inflation_check(F, 1 / 4, 3.0, I1=(0.0, 0.25), I2=(0.25, 0.5))
    with pytest.raises(PreconditionError):
        ball_inflation_check(F, 1 / 4, 1.5)
    coeffs = np.zeros(grid.shape, complex)
    coeffs[0, 5] = 1.0  # xi = (0, 5/16) sits above the delta^2 strip
    with pytest.raises(PreconditionError):
        ball_inflation_check(GridFunction.from_coeffs(grid, coeffs), 1 / 4, 3.0)
