"""Finite-state and Gaussian AR(1) Markov chains.

Kernels are plain ``numpy`` arrays (row-stochastic, shape ``(w, w)``) and
distributions are 1-D probability vectors. All functions are pure: inputs are
never modified.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter

from .errors import InvalidParameter, NotErgodic, NotReversible
from .rng import SeedLike, make_rng

STOCHASTIC_TOL = 1e-12
STATIONARY_TOL = 1e-12
MAX_SQUARINGS = 64
MAX_MIXING_STEPS = 1_000_000
REVERSIBILITY_TOL = 1e-10
JACOBI_TOL = 1e-10


@dataclass(frozen=True)
class Ar1Spec:
    """Gaussian AR(1): ``x[t+1] = theta * x[t] + eps``, ``eps ~ N(0, omega**2)``."""

    theta: float
    omega: float

    def __post_init__(self):
        if not (0.0 <= self.theta < 1.0):
            raise InvalidParameter(f"theta must lie in [0, 1), got {self.theta}")
        if not self.omega > 0.0:
            raise InvalidParameter(f"omega must be positive, got {self.omega}")

    @property
    def stationary_variance(self) -> float:
        return self.omega**2 / (1.0 - self.theta**2)


@dataclass(frozen=True)
class Trajectory:
    """One realization of the chain ``(X_t, Y_t)`` in time order.

    ``origin_time`` is the time index of the first element; a trajectory
    holding training and calibration data conventionally starts at ``1 - N``.
    """

    covariates: np.ndarray
    responses: np.ndarray
    origin_time: int = 0

    def __post_init__(self):
        x = np.asarray(self.covariates)
        y = np.asarray(self.responses, dtype=float)
        if x.shape[0] != y.shape[0]:
            raise InvalidParameter(
                f"covariates ({x.shape[0]}) and responses ({y.shape[0]}) differ in length"
            )
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "responses", y)

    def __len__(self) -> int:
        return int(self.responses.shape[0])

    def __getitem__(self, idx) -> "Trajectory":
        if not isinstance(idx, slice):
            raise TypeError("Trajectory supports slicing only")
        start = idx.indices(len(self))[0]
        return Trajectory(self.covariates[idx], self.responses[idx], self.origin_time + start)


class SpectralInfo(NamedTuple):
    lambda2: float
    lambda_min: float
    rho: float


def check_kernel(kernel) -> np.ndarray:
    """Validate a transition matrix and return it as a float array."""
    p = np.asarray(kernel, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] == 0:
        raise InvalidParameter(f"kernel must be a non-empty square matrix, got shape {p.shape}")
    if np.any(p < 0.0) or np.any(p > 1.0) or not np.all(np.isfinite(p)):
        raise InvalidParameter("kernel entries must lie in [0, 1]")
    if np.max(np.abs(p.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
        raise InvalidParameter("kernel rows must sum to 1")
    return p


def check_distribution(dist, size: int | None = None) -> np.ndarray:
    d = np.asarray(dist, dtype=float)
    if d.ndim != 1:
        raise InvalidParameter("distribution must be a 1-D vector")
    if size is not None and d.shape[0] != size:
        raise InvalidParameter(f"distribution has {d.shape[0]} states, expected {size}")
    if np.any(d < 0.0) or np.any(d > 1.0) or abs(d.sum() - 1.0) > STOCHASTIC_TOL:
        raise InvalidParameter("distribution entries must lie in [0, 1] and sum to 1")
    return d


def lazy_walk_kernel(w: int) -> np.ndarray:
    """Lazy random walk on the cycle Z/wZ.

    Stays put with probability 1/2 and moves to either neighbour with
    probability 1/4.
    """
    if int(w) != w or w < 3:
        raise InvalidParameter(f"lazy walk needs w >= 3, got {w}")
    w = int(w)
    p = np.zeros((w, w))
    idx = np.arange(w)
    p[idx, idx] = 0.5
    p[idx, (idx + 1) % w] = 0.25
    p[idx, (idx - 1) % w] = 0.25
    return p


def simulate_finite(kernel, init, length: int, seed: SeedLike) -> np.ndarray:
    """Sample ``length`` consecutive states, the first one drawn from ``init``."""
    p = check_kernel(kernel)
    nu = check_distribution(init, p.shape[0])
    if length < 1:
        raise InvalidParameter("length must be positive")
    rng = make_rng(seed)
    u = rng.random(length).tolist()

    def cdf(row: np.ndarray) -> list[float]:
        c = np.cumsum(row)
        c[np.flatnonzero(row)[-1]:] = 1.0
        return c.tolist()

    cum = [cdf(row) for row in p]
    states = [0] * length
    s = bisect_right(cdf(nu), u[0])
    states[0] = s
    for t in range(1, length):
        s = bisect_right(cum[s], u[t])
        states[t] = s
    return np.asarray(states, dtype=np.int64)


def simulate_ar1(spec: Ar1Spec, x0: float, length: int, seed: SeedLike) -> np.ndarray:
    """Path ``x[0] = x0, x[t+1] = theta * x[t] + eps[t+1]`` of the given length."""
    if length < 1:
        raise InvalidParameter("length must be positive")
    rng = make_rng(seed)
    eps = spec.omega * rng.standard_normal(length - 1)
    out = np.empty(length)
    out[0] = x0
    if length > 1:
        out[1:], _ = lfilter([1.0], [1.0, -spec.theta], eps, zi=[spec.theta * x0])
    return out


def stationary_distribution(kernel) -> np.ndarray:
    """Stationary law obtained by repeatedly squaring the kernel.

    Raises
    ------
    NotErgodic
        If the rows of ``P**(2**k)`` have not merged after 64 squarings
        (reducible or periodic chain).
    """
    m = check_kernel(kernel)
    for _ in range(MAX_SQUARINGS):
        if np.max(np.abs(m - m[0])) < STATIONARY_TOL:
            pi = np.clip(m[0], 0.0, None)
            return pi / pi.sum()
        m = m @ m
    raise NotErgodic("repeated squaring did not converge; chain is not ergodic")


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InvalidParameter(f"dimension mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def worst_tv(power, pi) -> float:
    """max over start states z of TV(P^t(z, .), pi) for the matrix ``power``."""
    return 0.5 * float(np.abs(np.asarray(power) - np.asarray(pi)).sum(axis=1).max())


def mixing_time(kernel, eps: float = 0.25) -> int:
    if not 0.0 < eps < 1.0:
        raise InvalidParameter(f"eps must lie in (0, 1), got {eps}")
    p = check_kernel(kernel)
    pi = stationary_distribution(p)
    power = p
    for t in range(1, MAX_MIXING_STEPS + 1):
        if worst_tv(power, pi) <= eps:
            return t
        power = power @ p
    raise NotErgodic(f"worst-case TV still above {eps} after {MAX_MIXING_STEPS} steps")


def jacobi_eigvalsh(a, tol: float = JACOBI_TOL, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations.

    Sweeps over all off-diagonal pairs until the Frobenius norm of the
    off-diagonal part drops below ``tol``. Returns eigenvalues in ascending
    order.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise InvalidParameter("matrix must be square")
    a = 0.5 * (a + a.T)
    for _ in range(max_sweeps):
        if np.linalg.norm(a - np.diag(np.diag(a))) < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
    else:
        raise ArithmeticError("Jacobi iteration did not converge")
    return np.sort(np.diag(a))


def symmetrize(kernel, pi) -> np.ndarray:
    """D^{1/2} P D^{-1/2} with D = diag(pi)."""
    root = np.sqrt(np.asarray(pi, dtype=float))
    return root[:, None] * np.asarray(kernel, dtype=float) / root[None, :]


def spectral_gap_exact(kernel, pi) -> SpectralInfo:
    """Second-largest and smallest eigenvalues of a reversible kernel.

    ``rho = max(lambda2, |lambda_min|)`` is one minus the absolute spectral gap.
    """
    p = check_kernel(kernel)
    pi = check_distribution(pi, p.shape[0])
    flow = pi[:, None] * p
    if np.max(np.abs(flow - flow.T)) > REVERSIBILITY_TOL:
        raise NotReversible("detailed balance pi_i P_ij = pi_j P_ji fails")
    if np.any(pi <= 0.0):
        raise InvalidParameter("stationary distribution must be strictly positive")
    eig = jacobi_eigvalsh(symmetrize(p, pi))
    if eig.shape[0] == 1:
        return SpectralInfo(0.0, 0.0, 0.0)
    lambda2 = float(eig[-2])
    lambda_min = float(eig[0])
    return SpectralInfo(lambda2, lambda_min, max(lambda2, abs(lambda_min)))


def ar1_marginal(spec: Ar1Spec, x: float, t: int) -> tuple[float, float]:
    """Mean and variance of X_t given X_0 = x."""
    if t < 1:
        raise InvalidParameter("t must be >= 1")
    mean = spec.theta**t * x
    var = spec.omega**2 * (1.0 - spec.theta ** (2 * t)) / (1.0 - spec.theta**2)
    return mean, var


def ar1_beta_bound(spec: Ar1Spec, a: int) -> float:
    """Pinsker-based upper bound on the beta-mixing coefficient beta(a)."""
    if a < 1:
        raise InvalidParameter("a must be >= 1")
    return spec.theta**a * math.sqrt((1.0 - spec.theta**2) / (2.0 * spec.omega**2))
