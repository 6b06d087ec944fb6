import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numba import njit
from scipy import stats
from scipy.integrate import solve_ivp

from anderson1d.closed_form import invariant_table, m_lambda, nu_lambda
from anderson1d.noise_field import NoisePath, derive_seed, generate, refine
from anderson1d.phase_flow import (FlowError, FlowParams, PhaseState, RotationNotReached,
                                   adjoint_rho_drift, adjoint_theta_drift, evolve, evolve_adjoint,
                                   evolve_pair, final_phases, rotation_times, sample_rotation_time,
                                   sample_Y_E, sample_Y_infinity, theta_drift)
from anderson1d.spectrum import EigenSolveConfig, count_below, segment_path

from conftest import within_se


def zero_path(T, cells):
    return NoisePath.from_increments(np.zeros(cells), (0.0, T))


def test_noiseless_oscillator_is_exact():
    # y'' = -4 y, y(0) = 0, y'(0) = 1: y = sin(2t) / 2, r^2 = y^2 + y'^2
    T = math.pi
    run = evolve(zero_path(T, 10_000), FlowParams(4.0, step=T / 10_000), PhaseState(0.0), T, stride=100)
    y = np.sin(2 * run.t) / 2
    r2 = y**2 + np.cos(2 * run.t) ** 2
    assert np.allclose(run.y, y, atol=1e-10)
    assert np.allclose(run.rho, np.log(r2), atol=1e-10)
    assert run.theta[-1] == pytest.approx(2 * math.pi, abs=1e-9)


def test_noiseless_rotation_time():
    path = zero_path(4.0, 4000)
    assert sample_rotation_time(path, FlowParams(4.0, step=1e-3)) == pytest.approx(math.pi / 2, abs=2e-3)
    with pytest.raises(RotationNotReached):
        sample_rotation_time(zero_path(1.0, 1000), FlowParams(4.0, step=1e-3))


def test_smooth_potential_against_ode():
    # deterministic increments dB = V dt: the flow must solve y'' = (V - lam) y
    T, n = 10.0, 10_000
    t = np.linspace(0.0, T, n + 1)
    V = lambda s: 0.5 * np.sin(1.3 * s) + 0.3 * np.cos(0.4 * s)  # noqa: E731
    primitive = -0.5 * np.cos(1.3 * t) / 1.3 + 0.3 * np.sin(0.4 * t) / 0.4
    path = NoisePath.from_increments(np.diff(primitive), (0.0, T))
    for lam in (1.0, -0.5):
        run = evolve(path, FlowParams(lam, step=T / n), PhaseState(0.0), T, stride=100)
        ode = solve_ivp(lambda s, u: [u[1], (V(s) - lam) * u[0]], (0, T), [0.0, 1.0],
                        t_eval=run.t, rtol=1e-11, atol=1e-12)
        assert np.abs(run.y - ode.y[0]).max() <= 2e-3 * np.abs(ode.y[0]).max()


def test_winding_is_monotone():
    for s in range(1000):
        seed = derive_seed(21, s)
        lam = -2.0 + 7.0 * (s % 97) / 97
        run = evolve(generate(seed, (0.0, 10.0), 0, base_cells=1000), FlowParams(lam), PhaseState(0.0), 10.0)
        assert np.all(np.diff(np.floor(run.theta / math.pi)) >= 0)
        assert np.isfinite(run.rho).all()


@njit(cache=True)
def _riccati_explosions(increments, dt, lam, x_max):
    """Euler on X = cot(theta) with restart at +x_max after X falls below -x_max."""
    x = x_max
    count = 0
    for dB in increments:
        x += -(lam + x * x) * dt + dB
        if x < -x_max:
            count += 1
            x = x_max
    return count


def test_winding_matches_riccati_explosion_count():
    lam, T = 1.0, 10.0
    mismatches = 0
    for s in range(40):
        path = generate(derive_seed(23, s), (0.0, T), 0, base_cells=1_000_000)
        explosions = _riccati_explosions(path.increments, path.dt, lam, 1e3)
        theta = final_phases(path.increments, path.dt, 1.0, np.array([lam]))[0]
        mismatches += explosions != math.floor(theta / math.pi)
    assert mismatches <= 1


def test_step_halving_converges():
    def terminal(step):
        values = []
        for s in range(50):
            path = generate(derive_seed(29, s), (0.0, 10.0), 9)
            values.append(evolve(path, FlowParams(1.0, step=step), PhaseState(0.0), 10.0,
                                 stride=10**6).theta[-1])
        return np.array(values)

    # first-order strong convergence: four halvings shrink the change about 8-fold
    runs = [terminal(10.0 / 2**k) for k in (9, 10, 11, 12, 13)]
    diffs = [np.sqrt(np.mean((a - b) ** 2)) for a, b in zip(runs, runs[1:])]
    assert diffs[0] > diffs[1] and diffs[2] > diffs[3]
    assert diffs[0] / diffs[3] > 4.0


def test_z_matches_finite_difference():
    d = 1e-4
    for s in range(5):
        path = generate(derive_seed(31, s), (0.0, 10.0), 0, base_cells=1000)
        run = evolve(path, FlowParams(1.0), PhaseState(0.0), 10.0, stride=10, track_z=True)
        hi = evolve(path, FlowParams(1.0 + d), PhaseState(0.0), 10.0, stride=1000).theta[-1]
        lo = evolve(path, FlowParams(1.0 - d), PhaseState(0.0), 10.0, stride=1000).theta[-1]
        assert run.z[-1] == pytest.approx((hi - lo) / (2 * d), rel=0.05)
        assert np.all(run.z >= 0)


def test_drift_formulas():
    theta = np.linspace(0, 2 * math.pi, 9)
    on_grid = np.array([0.0, math.pi, 2 * math.pi, -math.pi])
    for E in (1.0, 4.0):
        assert np.allclose(adjoint_theta_drift(on_grid, 1.0, E), -E**1.5, atol=1e-9)
    # forward drift is alpha c^2 + beta s^2 + s^3 c
    s, c = np.sin(theta), np.cos(theta)
    assert np.allclose(theta_drift(theta, 2.0), c * c + 2 * s * s + s**3 * c)
    assert np.isfinite(adjoint_rho_drift(theta, 1.0)).all()


def test_forward_lyapunov_slope():
    slopes = []
    for s in range(200):
        path = generate(derive_seed(37, s), (0.0, 200.0), 0, base_cells=20_000)
        slopes.append(evolve(path, FlowParams(1.0), PhaseState(0.0), 200.0, stride=20_000).rho[-1] / 200.0)
    slopes = np.array(slopes)
    assert within_se(slopes.mean(), nu_lambda(1.0), slopes.std(ddof=1) / math.sqrt(slopes.size))


def draw_from_mu(rng, lam, E, size):
    table = invariant_table(lam, E)
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (table.density[1:] + table.density[:-1]) * np.diff(table.theta))))
    return np.interp(rng.random(size) * cdf[-1], cdf, table.theta), table.theta, cdf / cdf[-1]


def test_adjoint_reverses_growth():
    rng = np.random.default_rng(41)
    starts, _, _ = draw_from_mu(rng, 1.0, 1.0, 200)
    slopes = []
    for s, theta0 in enumerate(starts):
        path = generate(derive_seed(41, s), (0.0, 200.0), 0, base_cells=20_000)
        run = evolve_adjoint(path, FlowParams(1.0, flavor="adjoint"), PhaseState(0.0, theta0), 200.0, stride=20_000)
        slopes.append(run.rho[-1] / 200.0)
    slopes = np.array(slopes)
    assert within_se(slopes.mean(), -nu_lambda(1.0), slopes.std(ddof=1) / math.sqrt(slopes.size))


def test_adjoint_keeps_mu_stationary():
    rng = np.random.default_rng(43)
    starts, grid, cdf = draw_from_mu(rng, 1.0, 1.0, 3000)
    finals = np.empty(starts.size)
    for s, theta0 in enumerate(starts):
        path = generate(derive_seed(43, s), (0.0, 5.0), 0, base_cells=500)
        finals[s] = evolve_adjoint(path, FlowParams(1.0), PhaseState(0.0, theta0), 5.0, stride=500).theta[-1]
    assert stats.kstest(np.mod(finals, math.pi), lambda x: np.interp(x, grid, cdf)).pvalue > 0.01


def test_rotation_time_mean_and_laplace_bound():
    m = m_lambda(1.0)
    path = generate(47, (0.0, 4e4), 0, base_cells=4_000_000)
    times, rho = rotation_times(path, FlowParams(1.0), 0.0, 10_000)
    assert times.size == 10_000
    gaps = np.diff(times, prepend=0.0)
    assert within_se(gaps.mean(), m, gaps.std(ddof=1) / 100)
    laplace = np.exp(0.5 * gaps / m)
    assert laplace.mean() <= 2.0 + 3 * laplace.std(ddof=1) / 100
    # the law does not depend on the starting phase
    other = np.diff(rotation_times(generate(53, (0.0, 4e4), 0, base_cells=4_000_000),
                                   FlowParams(1.0), 1.0, 10_000)[0], prepend=0.0)
    assert within_se(other.mean(), gaps.mean(), math.hypot(other.std(), gaps.std()) / 100)


def test_pair_with_equal_energies_has_no_gap():
    path = generate(3, (0.0, 20.0), 0, base_cells=2000)
    pair = evolve_pair(path, 1.0, 1.0, 1.0, PhaseState(0.0), 20.0)
    assert np.array_equal(pair.gap, np.zeros_like(pair.gap))
    with pytest.raises(ValueError):
        evolve_pair(path, 2.0, 1.0, 1.0, PhaseState(0.0), 20.0)


def test_pair_gap_brackets_the_count():
    config = EigenSolveConfig(100.0, h=2.0, grid=1)
    lo, hi = config.bounds
    for s in range(20):
        path = segment_path(derive_seed(59, s), config)
        pair = evolve_pair(path, lo, hi, 1.0, PhaseState(-50.0), 50.0, stride=10**7, step=config.step)
        counts = count_below(path, config, np.array([lo, hi]))
        n = counts[1] - counts[0]
        winding = math.floor(pair.gap[-1] / math.pi)
        assert n in (winding, winding + 1)


def test_pair_is_monotone_in_initial_gap():
    path = generate(61, (0.0, 30.0), 0, base_cells=3000)
    small = evolve_pair(path, 1.0, 1.0, 1.0, PhaseState(0.0), 30.0, init_hi=PhaseState(0.0, 0.3))
    large = evolve_pair(path, 1.0, 1.0, 1.0, PhaseState(0.0), 30.0, init_hi=PhaseState(0.0, 0.9))
    assert np.all(large.gap >= small.gap)


def test_y_infinity_moments():
    logs = np.array([math.log(sample_Y_infinity(derive_seed(67, s), 8.0).y[-1]) for s in range(4000)])
    se = logs.std(ddof=1) / math.sqrt(logs.size)
    assert within_se(logs.mean(), -1.0, se)
    var_se = math.sqrt(2.0 / (logs.size - 1))
    assert within_se(logs.var(ddof=1), 1.0, var_se)
    shape = sample_Y_infinity(1, 8.0)
    assert shape.y[shape.t.size // 2] == 1.0
    assert shape.shape.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_y_E_approaches_y_infinity_at_large_E():
    a = [sample_Y_E(derive_seed(71, i), 100.0, 100.0, t_max=48, step=4e-4).shape.recentered().moment(2)
         for i in range(150)]
    b = [sample_Y_infinity(derive_seed(73, i), 48.0).shape.recentered().moment(2) for i in range(600)]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_y_E_shape_is_normalized():
    shape = sample_Y_E(5, 1.0, 1.0, t_max=50.0)
    assert shape.shape.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert shape.t[0] == -shape.t[-1]


def test_trajectory_csv_and_indexing():
    run = evolve(generate(1, (0.0, 1.0), 0, base_cells=100), FlowParams(1.0), PhaseState(0.0), 1.0,
                 stride=25, track_z=True)
    assert len(run) == 5
    assert run.final.t == pytest.approx(1.0)
    buffer = io.StringIO()
    run.to_csv(buffer)
    lines = buffer.getvalue().split("\n")
    assert lines[0] == "t,theta,rho,z"
    assert len(lines) == 7 and lines[-1] == ""


def test_grid_and_parameter_errors():
    path = generate(1, (0.0, 1.0), 0, base_cells=100)
    with pytest.raises(FlowError):
        evolve(path, FlowParams(1.0), PhaseState(0.0), 0.0)
    with pytest.raises(FlowError):
        evolve(path, FlowParams(1.0), PhaseState(0.00123), 1.0)
    with pytest.raises(ValueError):
        FlowParams(1.0, E=0.5)
    with pytest.raises(ValueError):
        FlowParams(1.0, flavor="sideways")


@given(st.integers(0, 2**32), st.floats(-3.0, 6.0))
def test_refined_path_gives_same_count_scale(seed, lam):
    # refinement keeps the realization: counts at a coarse and fine step differ by at most one
    path = generate(seed, (0.0, 5.0), 0, base_cells=500)
    coarse = final_phases(path.increments, path.dt, 1.0, np.array([lam]))[0]
    fine_path = refine(refine(path))
    fine = final_phases(fine_path.increments, fine_path.dt, 1.0, np.array([lam]))[0]
    assert abs(math.floor(coarse / math.pi) - math.floor(fine / math.pi)) <= 1
