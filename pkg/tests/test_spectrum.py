import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anderson1d.closed_form import dos, nu_lambda
from anderson1d.lattice_oracle import (TridiagonalOperator, center_of_mass, eigenvector_inverse_iteration,
                                       shared_path, sturm_count)
from anderson1d.noise_field import derive_seed, generate
from anderson1d.spectrum import (ConcatenationError, EigenSolveConfig, SpectrumError, count_below,
                                 eigenfunction, eigenvalues_below, eigenvalues_in, rescaled_points,
                                 segment_path)


@pytest.fixture(scope="module")
def bulk():
    config = EigenSolveConfig(200.0, h=2.0)
    path = segment_path(derive_seed(101, 0), config)
    return config, path, eigenvalues_in(path, config)


def test_count_is_zero_far_below():
    config = EigenSolveConfig(10.0, window=(-60.0, -40.0), grid=1)
    for s in range(5):
        assert count_below(segment_path(derive_seed(103, s), config), config, -50.0) == 0


def test_count_is_monotone_in_lambda():
    config = EigenSolveConfig(50.0, window=(-2.0, 5.0), grid=1)
    lams = np.linspace(-2.0, 5.0, 15)
    for s in range(100):
        counts = count_below(segment_path(derive_seed(107, s), config), config, lams)
        assert np.all(np.diff(counts) >= 0)


def test_count_agrees_with_lattice_sturm_count():
    config = EigenSolveConfig(10.0, window=(4.0, 5.0), step=1e-3, grid=1)
    for s in range(10):
        path = shared_path(derive_seed(109, s), 10.0, 1e-3)
        flow = count_below(path, config, 5.0)
        lattice = sturm_count(TridiagonalOperator.from_path(path, 1e-3), 5.0)
        assert abs(flow - lattice) <= 1


def test_window_counts_match_eigenvalues(bulk):
    config, path, values = bulk
    lo, hi = config.bounds
    counts = count_below(path, config, np.array([lo, hi]))
    assert counts[1] - counts[0] == values.size
    assert np.all((values > lo) & (values <= hi))


def test_eigenvalues_are_simple_and_deterministic(bulk):
    config, path, values = bulk
    assert np.all(np.diff(values) > config.lambda_tol)
    again = eigenvalues_in(segment_path(derive_seed(101, 0), config), config)
    assert again.tobytes() == values.tobytes()


def test_halving_tolerance_moves_eigenvalues_little(bulk):
    config, path, values = bulk
    finer = EigenSolveConfig(config.L, h=config.h, lambda_tol=config.lambda_tol / 2)
    refined = eigenvalues_in(path, finer)
    assert refined.size == values.size
    assert np.abs(refined - values).max() <= config.lambda_tol


def test_eigenvalues_below_start_from_the_ground_state():
    config = EigenSolveConfig(10.0, window=(0.0, 3.0), grid=1)
    path = segment_path(derive_seed(113, 0), config)
    values = eigenvalues_below(path, config, 3.0)
    assert values.size == count_below(path, config, 3.0)
    assert count_below(path, config, values[0] - 1e-6) == 0


def test_eigenfunction_normalized_with_dirichlet_ends(bulk):
    config, path, values = bulk
    for lam in values:
        pair = eigenfunction(path, config, lam)
        assert pair.norm() == pytest.approx(1.0, abs=1e-12)
        assert pair.samples[0] == 0.0 and pair.samples[-1] == 0.0
        assert pair.match_defect <= config.match_tol
        assert pair.decay_rate > 0
        assert pair.shape.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_decay_rate_near_half_lyapunov():
    config = EigenSolveConfig(200.0, h=2.0)
    rates = []
    for s in range(20):
        path = segment_path(derive_seed(127, s), config)
        rates += [eigenfunction(path, config, lam).decay_rate for lam in eigenvalues_in(path, config)]
    assert len(rates) >= 20
    assert np.mean(rates) == pytest.approx(nu_lambda(1.0) / 2, rel=0.3)


def test_split_point_does_not_matter(bulk):
    config, path, values = bulk
    for lam in values:
        pair = eigenfunction(path, config, lam)
        for shift in (-0.1 * config.L, 0.1 * config.L):
            split = pair.split + shift
            if abs(split) > config.L / 2:
                continue
            other = eigenfunction(path, config, lam, split=split, strict=False)
            if other.match_defect <= config.match_tol:
                change = math.sqrt(np.sum((other.samples - pair.samples) ** 2) * pair.spacing)
                assert change <= 1e-3


def test_mismatch_raises_away_from_eigenvalues(bulk):
    config, path, values = bulk
    lam = 0.5 * (values[0] + values[1]) if values.size > 1 else values[0] + 0.01
    with pytest.raises(ConcatenationError) as info:
        eigenfunction(path, config, lam)
    assert info.value.defect > config.match_tol
    with pytest.raises(SpectrumError):
        eigenfunction(path, config, values[0], split=config.L)


def test_center_matches_lattice_eigenvector():
    mesh = 1e-3
    config = EigenSolveConfig(10.0, window=(-5.0, 10.0), step=mesh, grid=625)
    for s in range(3):
        path = shared_path(derive_seed(131, s), 10.0, mesh)
        T = TridiagonalOperator.from_path(path, mesh)
        for lam in eigenvalues_in(path, config)[:4]:
            pair = eigenfunction(path, config, lam)
            v = eigenvector_inverse_iteration(T, lam)
            assert abs(pair.center - center_of_mass(T, v)) <= 2 * mesh + config.L / config.grid


def test_rescaled_points():
    config = EigenSolveConfig(100.0, h=1.5)

    class Pair:
        def __init__(self, lam, center):
            self.lam, self.center = lam, center

    lo, hi = config.bounds
    rows = rescaled_points([Pair(1.0, 0.0), Pair(lo, 50.0), Pair(hi, -50.0)], config)
    assert rows[0].tolist() == [0.0, 0.0]
    assert rows[1, 0] == pytest.approx(-1.5) and rows[2, 0] == pytest.approx(1.5)
    assert rows[1, 1] == 0.5 and rows[2, 1] == -0.5
    assert rescaled_points([], config).shape == (0, 2)


def test_config_defaults_and_validation():
    config = EigenSolveConfig(400.0)
    assert config.center == 1.0
    assert config.step == 0.01
    assert config.bounds[1] - config.bounds[0] == pytest.approx(2 / (400 * dos(1.0)))
    assert config.lambda_tol == pytest.approx(1e-9 * (config.bounds[1] - config.bounds[0]))
    assert config.scan_spacing == pytest.approx(1 / (4 * 400 * dos(1.0)))
    with pytest.raises(ValueError):
        EigenSolveConfig(-1.0)
    with pytest.raises(ValueError):
        EigenSolveConfig(10.0, E=0.5)
    with pytest.raises(SpectrumError):
        count_below(generate(1, (0.0, 10.0), 4), EigenSolveConfig(10.0), 1.0)


@given(st.integers(0, 2**32), st.floats(-1.0, 4.0), st.floats(0.0, 3.0))
def test_counts_are_monotone_property(seed, lam, gap):
    config = EigenSolveConfig(20.0, window=(-1.0, 7.0), grid=1)
    path = segment_path(seed, config)
    low, high = count_below(path, config, np.array([lam, lam + gap]))
    assert low <= high


def test_distorted_coordinates_keep_original_units():
    # the same noise viewed at scale E = 4 gives eigenvalues in original units near the center
    config = EigenSolveConfig(400.0, E=4.0, h=2.0)
    path = segment_path(derive_seed(137, 0), config)
    values = eigenvalues_in(path, config)
    lo, hi = config.bounds
    assert np.all((values > lo) & (values <= hi))
    assert lo < 4.0 < hi
