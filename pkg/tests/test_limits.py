import math

import numpy as np
import pytest

from urnflow.limits import (canonical_pair, cov_between, limit_cov, limit_matrix, scaling_exponent,
                            self_similarity_residual)
from urnflow.moments import PAIRS, poisson_cov
from urnflow.weights import PowerLaw, ThetaOneLog


def test_theta_one_examples():
    assert limit_cov(1.0, "rho_rho", 0.3, 0.7) == 0.3
    for pair in ("RM", "MR", "UM", "MU"):
        for tau, t in ((0.1, 0.9), (0.5, 0.5)):
            assert limit_cov(1.0, pair, tau, t) == 0.0


@pytest.mark.parametrize("theta", [0.3, 0.5, 1.0])
def test_mm_vanishes_at_zero(theta):
    assert limit_cov(theta, "MM", 0.0, 1.0) == 0.0


def test_rr_half():
    assert limit_cov(0.5, "RR", 1.0, 1.0) == pytest.approx(math.sqrt(math.pi) * (math.sqrt(2) - 1), rel=1e-14)
    assert limit_cov(0.5, "RR", 1.0, 1.0) == pytest.approx(0.7341744, abs=1e-7)


def test_pair_aliases():
    assert canonical_pair("rho_upsilon") == "RU"
    assert canonical_pair("mu_rho") == "MR"
    with pytest.raises(ValueError):
        canonical_pair("rho_sigma")


def test_argument_checks():
    with pytest.raises(ValueError):
        limit_cov(0.5, "RR", 0.8, 0.4)
    with pytest.raises(ValueError):
        limit_cov(1.5, "RR", 0.1, 0.4)


@pytest.mark.parametrize("theta", [0.3, 0.5, 0.8])
@pytest.mark.parametrize("pair", PAIRS)
def test_limits_match_exact_series_at_large_n(theta, pair):
    m = PowerLaw(theta)
    n = 10**8
    a = m.alpha(n)
    tau, t = 0.4, 0.9
    v = poisson_cov(m, pair, n * tau, n * t).value / a
    assert v == pytest.approx(limit_cov(theta, pair, tau, t), rel=0.01)


@pytest.mark.parametrize("pair", ["RR", "UU", "RU", "UR"])
def test_theta_one_diagonal_limits_match_series(pair):
    # convergence is logarithmic in n
    m = ThetaOneLog(2.0)
    tau, t = 0.5, 1.0
    lim = limit_cov(1.0, pair, tau, t)
    gaps = [abs(poisson_cov(m, pair, n * tau, n * t).value / m.beta(n) - lim) for n in (1e4, 1e8, 1e12)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.08 * lim


def test_theta_one_mm_series_approaches_tau_squared_over_sum():
    # the normalized series tends to tau^2 / (t + tau); limit_cov keeps tau^2 so that
    # the mu component scales with exponent 2
    m = ThetaOneLog(2.0)
    tau, t = 0.5, 1.0
    vals = [poisson_cov(m, "MM", n * tau, n * t).value / m.alpha(n) for n in (1e4, 1e8, 1e12)]
    target = tau**2 / (t + tau)
    gaps = [abs(v - target) for v in vals]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.1 * target
    assert limit_cov(1.0, "MM", tau, t) == tau**2


def test_cov_between_orders_times():
    assert cov_between(0.5, "U", 0.8, "R", 0.3) == limit_cov(0.5, "RU", 0.3, 0.8)
    assert cov_between(0.5, "R", 0.3, "U", 0.8) == limit_cov(0.5, "RU", 0.3, 0.8)
    assert cov_between(0.5, "U", 0.3, "R", 0.8) == limit_cov(0.5, "UR", 0.3, 0.8)


def test_theta_one_block():
    t = 0.6
    lm = limit_matrix(1.0, [t])
    np.testing.assert_allclose(lm.matrix, [[t, t, 0], [t, t, 0], [0, 0, t * t]])


def test_single_point_half():
    lm = limit_matrix(0.5, [1.0])
    assert lm.matrix.shape == (3, 3)
    assert lm.min_eigenvalue >= -1e-10 * lm.trace


def test_empty_grid():
    lm = limit_matrix(0.5, [])
    assert lm.matrix.shape == (0, 0)


@pytest.mark.parametrize("theta", [0.3, 0.5, 0.8, 1.0])
def test_limit_matrix_psd_and_symmetric(theta):
    lm = limit_matrix(theta, [k / 10 for k in range(1, 11)])
    np.testing.assert_allclose(lm.matrix, lm.matrix.T, atol=1e-14)
    assert lm.is_psd


def test_limit_matrix_grid_checks():
    with pytest.raises(ValueError):
        limit_matrix(0.5, [0.5, 0.2])


def test_self_similarity_examples():
    assert self_similarity_residual(0.5, "RR", 4.0, 0.1, 0.2) <= 1e-12
    assert self_similarity_residual(1.0, "UU", 2.0, 0.1, 0.2) == 0.0
    assert self_similarity_residual(1.0, "MM", 2.0, 0.1, 0.2) == 0.0
    assert scaling_exponent(1.0, "MM") == 2.0 and scaling_exponent(0.3, "MM") == 0.3


@pytest.mark.parametrize("theta", [0.3, 0.5, 0.8])
def test_self_similarity_all_pairs(theta, rng):
    for _ in range(20):
        a = 10 ** rng.uniform(-1, 1)
        t = rng.uniform(0.05, 1.0)
        tau = t * rng.uniform(0, 1)
        for pair in PAIRS:
            assert self_similarity_residual(theta, pair, a, tau, t) <= 1e-12
