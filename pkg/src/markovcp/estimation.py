"""Estimating the ergodicity rate and the thinning step from data."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chains import jacobi_eigvalsh
from .errors import DomainError, InsufficientData, InvalidData, InvalidParameter

RHO_CLIP = 1e-9
AUTOCORR_FLOOR = 0.01


@dataclass(frozen=True)
class EmpiricalKernel:
    counts: np.ndarray
    p_hat: np.ndarray
    pi_hat: np.ndarray
    visits: np.ndarray

    @classmethod
    def from_kernel(cls, kernel, pi) -> "EmpiricalKernel":
        """Wrap an exact kernel and stationary law (no counting)."""
        p = np.asarray(kernel, dtype=float)
        pi = np.asarray(pi, dtype=float)
        return cls(np.zeros_like(p, dtype=np.int64), p, pi, np.ones(p.shape[0], dtype=np.int64))


def empirical_kernel(states, num_states: int) -> EmpiricalKernel:
    """Transition counts and row-normalised kernel of an observed state path."""
    s = np.asarray(states, dtype=np.int64)
    if s.ndim != 1 or s.size < 2:
        raise InvalidParameter("need a state sequence of length >= 2")
    if s.min() < 0 or s.max() >= num_states:
        raise InvalidParameter(f"states must lie in [0, {num_states})")
    counts = np.zeros((num_states, num_states), dtype=np.int64)
    np.add.at(counts, (s[:-1], s[1:]), 1)
    visits = counts.sum(axis=1)
    missing = np.flatnonzero(visits == 0)
    if missing.size:
        raise InsufficientData(f"states never left: {missing.tolist()}")
    p_hat = counts / visits[:, None]
    pi_hat = visits / visits.sum()
    return EmpiricalKernel(counts, p_hat, pi_hat, visits)


def estimate_rho(ek: EmpiricalKernel) -> float:
    """One minus the estimated absolute spectral gap of a reversible chain.

    The empirical kernel is conjugated by ``diag(pi_hat)**0.5`` and
    symmetrised additively before the eigen-solve, so sampling asymmetry
    does not produce complex eigenvalues.
    """
    root = np.sqrt(ek.pi_hat)
    lmat = root[:, None] * ek.p_hat / root[None, :]
    eig = jacobi_eigvalsh(0.5 * (lmat + lmat.T))
    if eig.size == 1:
        rho = 0.0
    else:
        rho = max(float(eig[-2]), abs(float(eig[0])))
    return float(np.clip(rho, RHO_CLIP, 1.0 - RHO_CLIP))


def adaptive_k(n: int, rho_hat: float) -> int:
    """Plug-in thinning step round(ln(n) / ln(1/rho_hat)), at least 1."""
    if not 0.0 < rho_hat < 1.0:
        raise DomainError(f"rho_hat must lie in (0, 1), got {rho_hat}")
    if n < 2:
        raise InvalidParameter("n must be >= 2")
    return max(1, int(round(math.log(n) / math.log(1.0 / rho_hat))))


def returns(series) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if np.any(~(x > 0.0)):
        bad = int(np.flatnonzero(~(x > 0.0))[0])
        raise InvalidData(f"series must be strictly positive (index {bad} is {x[bad]})")
    return x[1:] / x[:-1] - 1.0


def autocorrelations(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags 1..max_lag (biased, mean-removed)."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0:
        raise InsufficientData("series is constant")
    return np.array([np.dot(x[:-h], x[h:]) / denom for h in range(1, max_lag + 1)])


def rho_from_autocorr(acf) -> float:
    """exp(slope) of a least-squares fit of ln acf(h) on h, over lags with acf > 0.01.

    ``acf[h - 1]`` is the autocorrelation at lag ``h``.
    """
    acf = np.asarray(acf, dtype=float)
    lags = np.arange(1, acf.size + 1)
    keep = acf > AUTOCORR_FLOOR
    if keep.sum() < 2:
        raise InsufficientData("fewer than two lags with usable autocorrelation")
    slope = np.polyfit(lags[keep], np.log(acf[keep]), 1)[0]
    return float(np.clip(math.exp(slope), RHO_CLIP, 1.0 - RHO_CLIP))


def estimate_rho_autocorr(series, max_lag: int) -> float:
    x = np.asarray(series, dtype=float)
    if max_lag < 2:
        raise InvalidParameter("max_lag must be >= 2")
    if x.size <= 4 * max_lag:
        raise InvalidParameter(f"series of length {x.size} too short for max_lag={max_lag}")
    return rho_from_autocorr(autocorrelations(x, max_lag))
