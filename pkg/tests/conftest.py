import sys

import numpy as np
import pytest


def random_ergodic_kernel(rng, size, sparsity=0.4):
    """Random kernel made irreducible by a cycle and aperiodic by self-loops."""
    p = rng.dirichlet(np.ones(size), size=size)
    p[rng.random((size, size)) < sparsity] = 0.0
    idx = np.arange(size)
    p[idx, (idx + 1) % size] += 0.1 + rng.random(size)
    p[idx, idx] += 0.05 + rng.random(size)
    return p / p.sum(axis=1, keepdims=True)


def random_reversible_kernel(rng, size):
    """P = W / rowsum(W) with W symmetric is reversible w.r.t. pi ~ rowsum(W)."""
    w = rng.random((size, size))
    w = w + w.T
    w[rng.random((size, size)) < 0.3] = 0.0
    w = np.triu(w) + np.triu(w, 1).T
    idx = np.arange(size)
    w[idx, (idx + 1) % size] = w[(idx + 1) % size, idx] = 1.0
    w[idx, idx] += 0.5
    deg = w.sum(axis=1)
    return w / deg[:, None], deg / deg.sum()


def stationary_by_solve(p):
    """pi P = pi, sum pi = 1 via a least-squares linear solve."""
    k = p.shape[0]
    a = np.vstack([p.T - np.eye(k), np.ones(k)])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    return np.linalg.lstsq(a, b, rcond=None)[0]


def brute_mixing_time(p, eps, pi=None, t_max=100_000):
    pi = stationary_by_solve(p) if pi is None else np.asarray(pi)
    for t in range(1, t_max):
        pt = np.linalg.matrix_power(p, t)
        if 0.5 * np.abs(pt - pi).sum(axis=1).max() <= eps:
            return t
    raise AssertionError("oracle did not converge")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
