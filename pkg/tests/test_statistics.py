import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anderson1d.measures import GridMeasure
from anderson1d.noise_field import derive_seed
from anderson1d.phase_flow import sample_Y_infinity
from anderson1d.spectrum import EigenSolveConfig
from anderson1d.statistics import (InsufficientSample, PointSample, TestReport, blocks, box_count,
                                   equilibrium_decay, histogram_block, ks_test, lp_distance,
                                   lyapunov_triangle, minami_counts, minami_estimate, noise_floor,
                                   phase_histograms, point_sample, poisson_suite, regrid, shape_suite,
                                   solve_seed, spacing_uniforms, wegner)


def kolmogorov_cdf(n, d):
    """P(D_n < d) by the Marsaglia-Tsang-Wang matrix method."""
    k = int(n * d) + 1
    m = 2 * k - 1
    h = k - n * d
    H = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i - j + 1 >= 0:
                H[i, j] = 1.0
    for i in range(m):
        H[i, 0] -= h ** (i + 1)
        H[m - 1, i] -= h ** (m - i)
    if 2 * h - 1 > 0:
        H[m - 1, 0] += (2 * h - 1) ** m
    for i in range(m):
        for j in range(m):
            if i - j + 1 > 0:
                H[i, j] /= math.factorial(i - j + 1)
    Q = np.linalg.matrix_power(H, n)
    return Q[k - 1, k - 1] * math.factorial(n) / n**n


@pytest.mark.parametrize("n", range(1, 11))
def test_ks_p_values_match_exact_distribution(n):
    rng = np.random.default_rng(n)
    for _ in range(25):
        values = rng.random(n) ** rng.uniform(0.3, 3.0)
        d, p = ks_test(values, lambda x: x)
        assert p == pytest.approx(1.0 - kolmogorov_cdf(n, d), abs=1e-10)


def test_ks_statistic_by_hand():
    d, _ = ks_test([0.1, 0.2, 0.9], lambda x: x)
    assert d == pytest.approx(max(1 / 3 - 0.1, 2 / 3 - 0.2, 1 - 0.9, 0.1, 0.2 - 1 / 3, 0.9 - 2 / 3))
    with pytest.raises(InsufficientSample):
        ks_test([], lambda x: x)


def poisson_sample(seed, realizations=300, h=1.0):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(realizations):
        n = rng.poisson(2 * h)
        rows.append(np.column_stack((rng.uniform(-h, h, n), rng.uniform(-0.5, 0.5, n))))
    return PointSample(tuple(rows), h, tuple(range(realizations)))


def test_poisson_suite_calibration():
    for seed in range(3):
        reports = poisson_suite(poisson_sample(seed))
        assert [r.name for r in reports] == ["spacing_ks_exp1", "count_dispersion", "center_uniform",
                                             "energy_center_rank_corr"]
        assert all(r.passed for r in reports)


def test_poisson_suite_rejects_lattice_like_spectra():
    # evenly spaced levels: no spacing near zero, too little dispersion
    rows = [np.column_stack((np.array([-0.5, 0.5]) + 0.01 * i % 0.1, np.array([-0.2, 0.3])))
            for i in range(300)]
    reports = poisson_suite(PointSample(tuple(rows), 1.0))
    assert not reports[0].passed and not reports[1].passed


def test_spacing_uniforms_are_uniform_for_poisson_input():
    u = spacing_uniforms(poisson_sample(7, 2000, 2.0))
    assert u.min() >= 0 and u.max() <= 1
    assert abs(u.mean() - 0.5) < 3 * math.sqrt(1 / 12 / u.size)


def test_wegner_on_synthetic_input():
    report = wegner(poisson_sample(11))
    assert report.passed
    assert report.details["target"] == 2.0
    off = PointSample(tuple(np.zeros((3, 2)) for _ in range(10)), 1.0)
    assert not wegner(off).passed


def test_minimum_sample_sizes():
    with pytest.raises(InsufficientSample):
        poisson_suite(poisson_sample(1, 50))
    with pytest.raises(InsufficientSample):
        wegner(PointSample((np.zeros((1, 2)),), 1.0))


def test_report_json_keys():
    report = TestReport("x", 1.5, 0.2, 10, (1, 2), True)
    assert list(report.to_json()) == ["name", "statistic", "p_value", "n", "seeds", "pass"]
    assert json.loads(json.dumps(report.to_json()))["pass"] is True
    assert report.line().startswith("PASS x")


def test_solve_seed_and_point_sample():
    config = EigenSolveConfig(100.0, h=2.0, grid=1024)
    result = solve_seed(derive_seed(3, 0), config, shapes=True)
    assert len(result.eigenpairs) == result.eigenvalues.size == result.points.shape[0]
    assert np.all(np.abs(result.points[:, 0]) <= 2.0)
    assert np.all(np.abs(result.points[:, 1]) <= 0.5)
    sample = point_sample([result], config, (3,))
    assert sample.counts.tolist() == [result.eigenvalues.size]


def test_box_count():
    assert [box_count(L) for L in (1, 15, 16, 200, 400, 800)] == [1, 1, 2, 3, 4, 5]


def test_minami_events_shrink_with_the_window():
    # windows are nested on a shared path, so box counts are monotone pathwise
    for s in range(20):
        seed = derive_seed(13, s)
        counts = [minami_counts(seed, 200.0, h=h) for h in (0.5, 1.0, 2.0)]
        for (full_a, boxes_a), (full_b, boxes_b) in zip(counts, counts[1:]):
            assert full_a <= full_b
            assert all(a <= b for a, b in zip(boxes_a, boxes_b))


def test_minami_estimate_rows():
    counts = {200.0: [(4, [2, 2, 1])] * 80, 400.0: [(4, [2, 0, 0, 0])] * 80}
    report = minami_estimate(counts, h=2.0)
    rows = report.details["rows"]
    assert rows[0]["estimate"] == pytest.approx(3 * (2 / 3))
    assert rows[1]["estimate"] == pytest.approx(4 * (1 / 4))
    assert rows[1]["se"] == pytest.approx(4 * math.sqrt(0.25 * 0.75 / 320))
    assert rows[0]["second_moment"] == 16.0
    assert report.passed
    flat = {200.0: [(4, [2, 2, 1])] * 80, 400.0: [(4, [2, 2, 1, 0])] * 80}
    assert not minami_estimate(flat, h=2.0).passed
    crowded = {200.0: [(9, [2, 2, 1])] * 80, 400.0: [(4, [2, 0, 0, 0])] * 80}
    assert not minami_estimate(crowded, h=2.0).passed
    sparse = {200.0: [(4, [2, 1, 1])] * 10, 400.0: [(4, [1, 1, 1, 1])] * 10}
    assert minami_estimate(sparse, h=2.0).details["reason"] == "too few events"


def test_histogram_blocks_sum_to_the_full_run():
    times = [1.0, 2.0]
    whole = phase_histograms(5, 1.0, 1.0, 0.0, times, 3000, bins=16, chunk=1000)
    parts = sum(histogram_block(5, b, rows, 1.0, 1.0, 0.0, times, 16) for b, rows in enumerate(blocks(3000, 1000)))
    assert np.array_equal(whole, parts)
    assert whole.sum(axis=1).tolist() == [3000, 3000]
    assert blocks(2500, 1000) == [1000, 1000, 500]
    with pytest.raises(ValueError):
        histogram_block(5, 0, 10, 1.0, 1.0, 0.0, [0.005], 16)


def test_equilibrium_is_reached_and_forgets_the_start():
    times = np.arange(1.0, 20.5, 1.0)
    report = equilibrium_decay(times=times, paths=20000, seed=17)
    distances = np.array(report.details["distances"])
    floor = report.details["noise_floor"]
    assert floor == pytest.approx(noise_floor(20000, 64))
    assert np.all(distances[:, 0] > distances[:, 4])
    assert np.all(distances[:, -1] < 3 * floor)
    assert report.details["merge_p_value"] > 0.01
    assert report.passed


def test_lp_identity_and_point_masses():
    w = GridMeasure(-1.0, 0.25, [0.1, 0.4, 0.2, 0.3])
    assert lp_distance(w, w) == 0.0
    for a in (0.1, 0.5, 0.9):
        assert lp_distance(GridMeasure(0.0, a, [1.0]), GridMeasure(a, a, [1.0])) == pytest.approx(a)
    assert lp_distance(GridMeasure(0.0, 2.0, [1.0]), GridMeasure(2.0, 2.0, [1.0])) == 1.0
    with pytest.raises(ValueError):
        lp_distance(GridMeasure(0.0, 1.0, [1.0]), GridMeasure(0.0, 0.5, [1.0]))


def brute_force_lp(w, v):
    """Direct definition: inf eps with w(B) <= v(B^eps) + eps over every subset B of the support."""
    xs, p = w.points, w.weights
    ys, q = v.points, v.weights
    support = [i for i in range(xs.size) if p[i] > 0]
    distances = sorted({0.0} | {abs(x - y) for x in xs for y in ys})
    best = 1.0
    for eps in distances:
        if eps >= best:
            break
        worst = 0.0
        for size in range(1, len(support) + 1):
            for subset in itertools.combinations(support, size):
                near = np.zeros(ys.size, dtype=bool)
                for i in subset:
                    near |= np.abs(ys - xs[i]) <= eps + 1e-12
                worst = max(worst, p[list(subset)].sum() - q[near].sum())
        best = min(best, max(eps, worst))
    return best


grid_weights = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6).filter(lambda w: sum(w) > 0.05)


@given(grid_weights, grid_weights, st.integers(-6, 6), st.sampled_from([0.05, 0.1, 0.3]))
def test_lp_matches_brute_force(a, b, shift, spacing):
    w = GridMeasure(0.0, spacing, a)
    v = GridMeasure(shift * spacing, spacing, b)
    assert lp_distance(w, v) == pytest.approx(brute_force_lp(w, v), abs=1e-9)


def test_lp_metric_axioms():
    rng = np.random.default_rng(19)
    for _ in range(1000):
        spacing = rng.choice([0.05, 0.1, 0.2])
        a, b, c = (GridMeasure(rng.integers(-10, 10) * spacing, spacing, rng.random(rng.integers(1, 12)))
                   for _ in range(3))
        ab, bc, ac = lp_distance(a, b), lp_distance(b, c), lp_distance(a, c)
        assert ab == pytest.approx(lp_distance(b, a), abs=1e-12)
        assert 0 <= ab <= 1
        assert ac <= ab + bc + 1e-12


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30).filter(lambda w: sum(w) > 0.01),
       st.floats(-1.0, 1.0), st.sampled_from([0.05, 0.1, 0.2]))
def test_regrid_preserves_mass_and_mean(weights, origin, spacing):
    w = GridMeasure(origin, 0.07, weights)
    start = math.floor((origin - 1) / spacing) * spacing
    moved = regrid(w, start, spacing, int(4 / spacing) + 40)
    assert moved.weights.sum() == pytest.approx(1.0)
    assert moved.mean() == pytest.approx(w.mean(), abs=1e-9)


def test_shape_suite_self_test():
    # two independent batches from the same law; both are measured against the second batch's mean
    a = [sample_Y_infinity(derive_seed(1, i), 32.0).shape for i in range(150)]
    b = [sample_Y_infinity(derive_seed(2, i), 32.0).shape for i in range(300)]
    reports = shape_suite(a, b, min_shapes=100, min_limit=300)
    assert [r.name for r in reports] == ["shape_second_moment", "shape_participation", "shape_lp_to_mean"]
    assert all(r.passed for r in reports)
    with pytest.raises(InsufficientSample):
        shape_suite(a[:10], b)


def test_lyapunov_triangle_small_run():
    report = lyapunov_triangle(seed=3, paths=60, t_end=100.0, rotations=4000)
    assert report.passed
    assert set(report.details) == {"quadrature", "renewal", "slope"}
