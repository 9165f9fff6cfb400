import numpy as np
import pytest

from mfglab.distances import (w1_grid, w1_samples, tv_grid, wf_grid, wf_atoms,
                              w1_atoms, quantile_atoms, f_norm, lip_norm)
from mfglab.metrics import DomainError, build_twisted_metric
from mfglab.profiles import constant_profile


def gauss(x, m, v):
    return np.exp(-(x - m) ** 2 / (2.0 * v)) / np.sqrt(2.0 * np.pi * v)


@pytest.fixture(scope="module")
def grid():
    return np.linspace(-12.0, 12.0, 4001)


def test_w1_identical_zero(grid):
    p = gauss(grid, 0.0, 1.0)
    assert w1_grid(grid, p, p) == 0.0


def test_w1_gaussian_shift(grid):
    # CDF-shift oracle: translating a density by m costs exactly |m|
    p = gauss(grid, 0.0, 1.0)
    q = gauss(grid, 0.7, 1.0)
    assert w1_grid(grid, p, q) == pytest.approx(0.7, abs=1e-6)


def test_w1_samples_matches_grid():
    rng = np.random.default_rng(5)
    a = rng.normal(0.0, 1.0, 40_000)
    b = rng.normal(0.5, 1.0, 40_000)
    assert w1_samples(a, b) == pytest.approx(0.5, abs=2e-2)
    c = rng.normal(0.5, 1.0, 30_000)
    assert w1_samples(a, c) == pytest.approx(0.5, abs=2e-2)


def test_tv_basic(grid):
    p = gauss(grid, 0.0, 1.0)
    assert tv_grid(grid, p, p) == 0.0
    q = gauss(grid, 0.0, 2.0)
    # one-dimensional Gaussians: TV has a closed form via the crossing points
    s1, s2 = 1.0, np.sqrt(2.0)
    xc = np.sqrt(2.0 * np.log(s2 / s1) / (1.0 / s1 ** 2 - 1.0 / s2 ** 2))
    from scipy.stats import norm
    expect = (norm.cdf(xc, 0, s1) - norm.cdf(-xc, 0, s1)) - \
             (norm.cdf(xc, 0, s2) - norm.cdf(-xc, 0, s2))
    assert tv_grid(grid, p, q) == pytest.approx(expect, abs=1e-6)


def test_unnormalized_rejected(grid):
    p = gauss(grid, 0.0, 1.0)
    with pytest.raises(DomainError):
        w1_grid(grid, p, 2.0 * p)
    with pytest.raises(DomainError):
        tv_grid(grid, 2.0 * p, p)


@pytest.fixture(scope="module")
def tm():
    return build_twisted_metric(constant_profile(1.0, r_max=30.0), 1.0)


def test_wf_point_masses(tm):
    # single atoms at 0 and a: the only coupling ships the whole mass
    for a in (0.5, 1.7, 4.0):
        assert wf_atoms([0.0], [a], tm.f) == pytest.approx(tm.f(a), rel=1e-9)
        assert w1_atoms([0.0], [a]) == a


def test_wf_sandwich_random_pairs(grid, tm):
    rng = np.random.default_rng(17)
    for _ in range(8):
        p = gauss(grid, rng.uniform(-2, 2), rng.uniform(0.3, 2.0))
        q = gauss(grid, rng.uniform(-2, 2), rng.uniform(0.3, 2.0))
        atoms_p = quantile_atoms(grid, p, 96)
        atoms_q = quantile_atoms(grid, q, 96)
        wf = wf_atoms(atoms_p, atoms_q, tm.f)
        w1 = w1_atoms(atoms_p, atoms_q)
        assert wf <= w1 * (1.0 + 1e-9)
        assert wf >= tm.C * w1 * (1.0 - 1e-9)


def test_wf_grid_with_cancellation(grid, tm):
    p = gauss(grid, 0.0, 1.0)
    q = gauss(grid, 0.25, 1.0)
    wf = wf_grid(grid, p, q, tm.f)
    w1 = w1_grid(grid, p, q)
    assert 0.0 < wf <= w1 * (1.0 + 1e-6)
    assert wf_grid(grid, p, p, tm.f) == 0.0


def test_f_norm_measures_quadratic():
    x = np.linspace(-3.0, 3.0, 601)
    v = 0.5 * x ** 2
    # Lipschitz seminorm of x^2/2 on [-3,3] is 3 (attained at the edge)
    assert lip_norm(x, v) == pytest.approx(3.0, abs=2e-2)
    got = f_norm(x, v, lambda r: r)
    assert got <= 3.0 + 1e-9


def test_quantile_atoms_mean(grid):
    p = gauss(grid, 1.3, 0.49)
    atoms = quantile_atoms(grid, p, 256)
    assert np.mean(atoms) == pytest.approx(1.3, abs=2e-3)
