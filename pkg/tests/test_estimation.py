import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markovcp.chains import (
    Ar1Spec,
    lazy_walk_kernel,
    simulate_ar1,
    simulate_finite,
    spectral_gap_exact,
)
from markovcp.errors import DomainError, InsufficientData, InvalidData, InvalidParameter
from markovcp.estimation import (
    EmpiricalKernel,
    adaptive_k,
    autocorrelations,
    empirical_kernel,
    estimate_rho,
    estimate_rho_autocorr,
    returns,
    rho_from_autocorr,
)

from conftest import random_reversible_kernel


def count_oracle(states, size):
    """Dictionary-based transition counting."""
    counts = {}
    for a, b in zip(states[:-1], states[1:]):
        counts[(a, b)] = counts.get((a, b), 0) + 1
    return np.array([[counts.get((i, j), 0) for j in range(size)] for i in range(size)])


# -- empirical kernel --------------------------------------------------------------


def test_empirical_kernel_hand_count():
    ek = empirical_kernel([0, 1, 0, 1, 0], 2)
    np.testing.assert_array_equal(ek.counts, [[0, 2], [2, 0]])
    np.testing.assert_array_equal(ek.p_hat, [[0, 1], [1, 0]])
    np.testing.assert_array_equal(ek.visits, [2, 2])
    np.testing.assert_array_equal(ek.pi_hat, [0.5, 0.5])


def test_empirical_kernel_unvisited_state():
    with pytest.raises(InsufficientData):
        empirical_kernel([0, 0, 0, 0], 2)


def test_empirical_kernel_bad_input():
    with pytest.raises(InvalidParameter):
        empirical_kernel([0], 1)
    with pytest.raises(InvalidParameter):
        empirical_kernel([0, 3], 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=2, max_size=200))
def test_empirical_kernel_matches_counting_oracle(states):
    size = 5
    visited = set(states[:-1])
    if len(visited) < size:
        with pytest.raises(InsufficientData):
            empirical_kernel(states, size)
        return
    ek = empirical_kernel(states, size)
    np.testing.assert_array_equal(ek.counts, count_oracle(states, size))
    np.testing.assert_array_equal(ek.counts.sum(axis=1), ek.visits)
    np.testing.assert_allclose(ek.p_hat.sum(axis=1), 1.0, rtol=0, atol=4e-16)


def test_empirical_kernel_converges_on_lazy_walk():
    p = lazy_walk_kernel(8)
    path = simulate_finite(p, np.full(8, 1 / 8), 100_000, seed=11)
    ek = empirical_kernel(path, 8)
    assert np.abs(ek.p_hat - p).max() <= 0.02


# -- spectral estimate ------------------------------------------------------------


def test_estimate_rho_one_step_mixing():
    pi = np.array([0.2, 0.3, 0.5])
    p = np.tile(pi, (3, 1))
    assert estimate_rho(EmpiricalKernel.from_kernel(p, pi)) == pytest.approx(1e-9, abs=1e-9)


def test_estimate_rho_lazy_walk_trajectory():
    p = lazy_walk_kernel(8)
    truth = (1 + math.cos(math.pi / 4)) / 2
    path = simulate_finite(p, np.full(8, 1 / 8), 100_000, seed=5)
    assert abs(estimate_rho(empirical_kernel(path, 8)) - truth) <= 0.05


def test_estimate_rho_exact_kernel_matches_spectral_gap(rng):
    for size in list(range(2, 21)) * 2:
        p, pi = random_reversible_kernel(rng, size)
        got = estimate_rho(EmpiricalKernel.from_kernel(p, pi))
        assert got == pytest.approx(spectral_gap_exact(p, pi).rho, abs=1e-8)


def test_estimate_rho_lazy_walk_exact():
    for w in (3, 8, 20):
        pi = np.full(w, 1 / w)
        got = estimate_rho(EmpiricalKernel.from_kernel(lazy_walk_kernel(w), pi))
        assert got == pytest.approx((1 + math.cos(2 * math.pi / w)) / 2, abs=1e-9)


# -- adaptive K ---------------------------------------------------------------------


def test_adaptive_k_examples():
    assert adaptive_k(20, math.exp(-1)) == 3
    assert adaptive_k(1000, 1e-6) == 1
    assert adaptive_k(1000, 0.9) == 66
    assert round(math.log(1000) / math.log(1 / 0.9)) == 66


def test_adaptive_k_errors():
    for r in (0.0, 1.0, -0.5):
        with pytest.raises(DomainError):
            adaptive_k(100, r)
    with pytest.raises(InvalidParameter):
        adaptive_k(1, 0.5)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(2, 10**6), r1=st.floats(1e-6, 1 - 1e-6), r2=st.floats(1e-6, 1 - 1e-6))
def test_adaptive_k_monotone(n, r1, r2):
    lo, hi = sorted((r1, r2))
    assert adaptive_k(n, lo) <= adaptive_k(n, hi)
    assert adaptive_k(n, lo) <= adaptive_k(2 * n, lo)


# -- returns and autocorrelation --------------------------------------------------------


def test_returns_examples():
    np.testing.assert_array_equal(returns([1, 2, 4]), [1, 1])
    np.testing.assert_array_equal(returns([3.0] * 5), np.zeros(4))
    assert returns([100, 99])[0] == pytest.approx(-0.01, abs=1e-15)


def test_returns_rejects_nonpositive():
    for bad in ([1, 0, 2], [1, -1], [1, float("nan")]):
        with pytest.raises(InvalidData):
            returns(bad)


def test_autocorrelation_matches_direct_formula():
    rng = np.random.default_rng(2)
    x = rng.normal(size=500)
    xc = x - x.mean()
    expected = [sum(xc[i] * xc[i + h] for i in range(500 - h)) / sum(xc * xc) for h in range(1, 6)]
    np.testing.assert_allclose(autocorrelations(x, 5), expected, rtol=1e-12)


def test_rho_autocorr_ar1():
    path = simulate_ar1(Ar1Spec(0.8, 1.0), 0.0, 100_000, seed=7)
    assert 0.75 <= estimate_rho_autocorr(path, 20) <= 0.85


def test_rho_autocorr_white_noise():
    x = np.random.default_rng(3).normal(size=100_000)
    with pytest.raises(InsufficientData):
        estimate_rho_autocorr(x, 20)


def test_rho_autocorr_exact_geometric():
    acf = 0.5 ** np.arange(1, 21)
    assert rho_from_autocorr(acf) == pytest.approx(0.5, abs=1e-10)
    # lags past the 0.01 floor are dropped, the rest are still exact
    assert rho_from_autocorr(0.3 ** np.arange(1, 21)) == pytest.approx(0.3, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.2, 0.99))
def test_rho_autocorr_exact_on_noiseless_input(rho):
    assert rho_from_autocorr(rho ** np.arange(1, 11)) == pytest.approx(rho, abs=1e-10)


def test_rho_autocorr_preconditions():
    with pytest.raises(InvalidParameter):
        estimate_rho_autocorr(np.arange(80.0), 20)
    with pytest.raises(InvalidParameter):
        estimate_rho_autocorr(np.arange(100.0), 1)
    with pytest.raises(InsufficientData):
        estimate_rho_autocorr(np.ones(100), 5)
