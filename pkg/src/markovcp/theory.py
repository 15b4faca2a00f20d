"""Coverage-gap and quantile-deviation bounds for conformal prediction on Markov chains.

The ergodicity constants of a real chain are generally unobservable, so every
calculator takes the total-variation and beta-mixing terms as inputs through
:class:`BoundInputs`. Regimes where a bound is undefined or vacuous raise
:class:`~markovcp.errors.DomainError` instead of being clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import DomainError, InvalidParameter

INV_E = math.exp(-1.0)
LAMBERT_TOL = 1e-12

DeltaSeq = Union[Callable[[int], float], Sequence[float], None]


# ---------------------------------------------------------------------------
# Lambert W


def _lambert_newton(x: float, w: float, lo: float, hi: float, increasing: bool) -> float:
    """Newton iteration on w*exp(w) - x kept inside the bracket [lo, hi].

    Steps that would leave the bracket are replaced by bisection.
    """
    for _ in range(200):
        ew = math.exp(w)
        f = w * ew - x
        if f == 0.0:
            return w
        if (f > 0.0) == increasing:
            hi = w
        else:
            lo = w
        d = ew * (1.0 + w)
        step = f / d if d != 0.0 else math.inf
        w_new = w - step
        if not (lo < w_new < hi) or not math.isfinite(w_new):
            w_new = 0.5 * (lo + hi)
        if abs(w_new - w) <= 4e-16 * max(1.0, abs(w)):
            return w_new
        w = w_new
    return w


def lambert_w0(x: float) -> float:
    """Principal branch W0 of the Lambert function (w >= -1, w*exp(w) = x)."""
    x = float(x)
    if not x >= -INV_E or math.isnan(x):
        # allow the rounding slack of computing -1/e in floating point
        if x >= -INV_E - 1e-15:
            return -1.0
        raise DomainError(f"W0 is undefined for x < -1/e, got {x}")
    if x == 0.0:
        return 0.0
    if x == math.e:
        return 1.0
    if x == -INV_E:
        return -1.0
    if x < -0.25:
        p = math.sqrt(max(2.0 * (math.e * x + 1.0), 0.0))
        guess = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    elif x < 3.0:
        guess = math.log1p(x)
    else:
        lx = math.log(x)
        guess = lx - math.log(lx)
    hi = max(1.0, math.log(x)) if x > 0.0 else 0.0
    lo = -1.0 if x < 0.0 else 0.0
    guess = min(max(guess, lo), hi)
    return _lambert_newton(x, guess, lo, hi, increasing=True)


def lambert_wm1(x: float) -> float:
    """Lower branch W_{-1} of the Lambert function (w <= -1), for -1/e <= x < 0."""
    x = float(x)
    if math.isnan(x) or x >= 0.0:
        raise DomainError(f"W_-1 needs -1/e <= x < 0, got {x}")
    if x < -INV_E:
        if x >= -INV_E - 1e-15:
            return -1.0
        raise DomainError(f"W_-1 needs -1/e <= x < 0, got {x}")
    if x == -INV_E:
        return -1.0
    # lower bound -1 - sqrt(2u) - u with u = -1 - ln(-x)
    u = max(-1.0 - math.log(-x), 0.0)
    lo = -1.0 - math.sqrt(2.0 * u) - u - 1.0
    hi = -1.0
    if x < -0.25:
        p = -math.sqrt(max(2.0 * (math.e * x + 1.0), 0.0))
        guess = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    else:
        l1 = math.log(-x)
        guess = l1 - math.log(-l1)
    guess = min(max(guess, lo), hi)
    return _lambert_newton(x, guess, lo, hi, increasing=False)


# ---------------------------------------------------------------------------
# Bound inputs


@dataclass(frozen=True)
class BoundInputs:
    """Parameters shared by the gap calculators.

    ``delta1`` maps a lag ``a >= 1`` to ``||nu_1 P^a - pi||_TV``; it may be a
    callable, a sequence whose element ``a - 1`` is the value at ``a``, or
    ``None`` for a chain started at stationarity.
    """

    n: int
    t_mix: float = 1.0
    alpha: float = 0.1
    N: Optional[int] = None
    r: Optional[int] = None
    K: Optional[int] = None
    rho: Optional[float] = None
    delta1: DeltaSeq = None
    delta_N: float = 0.0
    delta_nN1: float = 0.0
    beta_r: float = 0.0
    beta_K: float = 0.0
    beta_prime_K: Optional[float] = None
    beta_n1: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParameter("n must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidParameter("alpha must lie in (0, 1)")
        if self.t_mix <= 0:
            raise InvalidParameter("t_mix must be positive")
        if self.rho is not None and not 0.0 < self.rho < 1.0:
            raise InvalidParameter("rho must lie in (0, 1)")
        for name in ("delta_N", "delta_nN1", "beta_r", "beta_K", "beta_n1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidParameter(f"{name} must lie in [0, 1], got {v}")

    def d1(self, a: int) -> float:
        if self.delta1 is None:
            return 0.0
        if callable(self.delta1):
            return float(self.delta1(a))
        return float(self.delta1[a - 1])

    def mean_delta1(self, n: Optional[int] = None, stride: int = 1) -> float:
        """(stride/n) * sum_{a=1}^{floor(n/stride)} delta1(stride * a)."""
        n = self.n if n is None else n
        terms = n // stride
        return stride / n * math.fsum(self.d1(stride * a) for a in range(1, terms + 1))

    def with_(self, **changes) -> "BoundInputs":
        fields = {f: getattr(self, f) for f in self.__dataclass_fields__}
        fields.update(changes)
        return BoundInputs(**fields)


class GapBound(NamedTuple):
    value: float
    arg_u: float
    arg_r: Optional[int] = None


class QuantileBound(NamedTuple):
    u_star: float
    deviation: float  # u_star / kappa


def _require_r(b: BoundInputs, r: Optional[int]) -> int:
    r = b.r if r is None else r
    if r is None or not 1 <= r <= b.n:
        raise DomainError(f"separation r must satisfy 1 <= r <= n, got {r}")
    return int(r)


# ---------------------------------------------------------------------------
# Split CP


def gamma_restart(u: float, b: BoundInputs) -> float:
    """Coverage-gap bound for split CP when calibration restarts the chain."""
    mean_d1 = b.mean_delta1()
    if not u > mean_d1:
        raise DomainError(f"u={u} must exceed the mean calibration TV distance {mean_d1}")
    rate = 2.0 * b.n / (9.0 * b.t_mix)
    return u + math.exp(-rate * (u - mean_d1) ** 2) + b.d1(b.n + 1)


def gamma_norestart(u: float, r: Optional[int], b: BoundInputs) -> float:
    """Coverage-gap bound for split CP on one trajectory with an r-step gap."""
    r = _require_r(b, r)
    if not u > b.delta_N:
        raise DomainError(f"u={u} must exceed delta(N)={b.delta_N}")
    rate = 2.0 * (b.n - r) / (9.0 * b.t_mix)
    return (
        u
        + math.exp(-rate * (u - b.delta_N) ** 2)
        + b.delta_nN1
        + 2.0 * b.beta_r
        + (1.0 + b.alpha * r) / (b.n + 1)
    )


def gamma_optimal_r(b: BoundInputs, r: Optional[int] = None) -> GapBound:
    """gamma(u, r) minimised over u at its interior critical point.

    The optimiser is ``u2 = delta(N) + sqrt(-W_{-1}(-n0/(n-r)) * n0/(n-r))``
    with ``n0 = 9 t_mix / 4``. ``b.beta_n1`` carries the beta(n+1) term of
    the optimised expression (set it equal to ``b.beta_r`` to match
    :func:`gamma_norestart` term by term).
    """
    r = _require_r(b, r)
    n0 = 9.0 * b.t_mix / 4.0
    eff = b.n - r
    if eff < math.e * n0:
        raise DomainError(
            f"n - r = {eff} < e*n0 = {math.e * n0:.3f}: no interior optimum in u"
        )
    c = n0 / eff
    w = lambert_wm1(-c)
    shift = math.sqrt(-w * c)
    value = (
        shift
        + math.exp(0.5 * w)
        + (1.0 + r * b.alpha) / (b.n + 1)
        + b.delta_N
        + b.delta_nN1
        + b.beta_n1
        + b.beta_r
    )
    return GapBound(value, b.delta_N + shift, r)


def gamma_optimal_restart(b: BoundInputs) -> GapBound:
    """Restart counterpart of :func:`gamma_optimal_r`."""
    n0 = 9.0 * b.t_mix / 4.0
    if b.n < math.e * n0:
        raise DomainError(f"n = {b.n} < e*n0 = {math.e * n0:.3f}: no interior optimum in u")
    c = n0 / b.n
    w = lambert_wm1(-c)
    shift = math.sqrt(-w * c)
    mean_d1 = b.mean_delta1()
    return GapBound(shift + math.exp(0.5 * w) + mean_d1 + b.d1(b.n + 1), mean_d1 + shift)


# ---------------------------------------------------------------------------
# K-split CP


def k_star_real(n: int, rho: float) -> float:
    """Unrounded optimal thinning step W0(n^2 ln(rho)^2) / ln(1/rho)."""
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho must lie in (0, 1), got {rho}")
    if n < 2:
        raise InvalidParameter("n must be >= 2")
    log_inv = -math.log(rho)
    return lambert_w0(float(n) ** 2 * log_inv**2) / log_inv


def k_star(n: int, rho: float) -> int:
    return max(1, int(round(k_star_real(n, rho))))


def ksplit_gap(
    n: int,
    K: int,
    r: Optional[int],
    b: BoundInputs,
    stationary: bool = True,
    restart: bool = True,
) -> tuple[float, float]:
    """Interval (gamma, gamma + K/n') bounding the coverage excursion of K-split CP.

    Coverage lies in ``[1 - alpha - low, 1 - alpha + high]``. With
    ``stationary=False`` the non-stationary coefficient ``b.beta_prime_K`` is
    used in place of ``b.beta_K``.
    """
    if stationary:
        beta = b.beta_K
    else:
        if b.beta_prime_K is None:
            raise InvalidParameter("beta_prime_K is required for a non-stationary start")
        beta = b.beta_prime_K
    if restart:
        if not 1 <= K <= n:
            raise InvalidParameter(f"K must lie in [1, n], got {K}")
        gamma = 2.0 * (n / K) * beta
        return gamma, gamma + K / n
    r = b.r if r is None else r
    if r is None or not 1 <= r < n:
        raise InvalidParameter(f"r must lie in [1, n), got {r}")
    if not 1 <= K <= n - r:
        raise InvalidParameter(f"K must lie in [1, n - r], got {K}")
    gamma = (1.0 + b.alpha * r) / (n + 1) + 2.0 * ((n - r) / K) * beta + b.beta_r
    return gamma, gamma + K / (n - r)


# ---------------------------------------------------------------------------
# Quantile deviation


def _concentration(t_mix: float, n: float, delta_conf: float) -> float:
    return math.sqrt(9.0 * t_mix * math.log(2.0 / delta_conf) / (2.0 * n))


def quantile_deviation_bound(
    b: BoundInputs,
    kappa: float,
    c_N: float,
    d_N: float,
    delta_conf: float,
    mode: str = "restart",
) -> QuantileBound:
    """High-probability radius u* with |q_hat - q| <= u*/kappa."""
    return _quantile_bound(b.n, b.t_mix, b.rho, b, kappa, c_N, d_N, delta_conf, mode, stride=1)


def ksplit_quantile_bound(
    b: BoundInputs,
    kappa: float,
    c_N: float,
    d_N: float,
    delta_conf: float,
    mode: str = "restart",
    K: Optional[int] = None,
) -> QuantileBound:
    """:func:`quantile_deviation_bound` for the chain thinned by K.

    Substitutes n -> n/K, t_mix -> ceil(t_mix/K), rho -> rho**K and the mean
    calibration TV distance by its thinned counterpart.
    """
    K = b.K if K is None else K
    if K is None or K < 1:
        raise InvalidParameter(f"K must be >= 1, got {K}")
    rho = None if b.rho is None else b.rho**K
    return _quantile_bound(
        b.n / K, math.ceil(b.t_mix / K), rho, b, kappa, c_N, d_N, delta_conf, mode, stride=K
    )


def _quantile_bound(n_eff, t_eff, rho, b, kappa, c_N, d_N, delta_conf, mode, stride):
    if not 0.0 < delta_conf < 1.0:
        raise DomainError(f"delta_conf must lie in (0, 1), got {delta_conf}")
    if kappa <= 0:
        raise InvalidParameter("kappa must be positive")
    base = d_N + 2.0 * kappa * c_N + _concentration(t_eff, n_eff, delta_conf)
    if mode == "restart":
        u = base + b.mean_delta1(b.n, stride)
    elif mode == "norestart":
        if rho is None:
            raise InvalidParameter("rho is required in norestart mode")
        u = base + b.delta_N + b.alpha * math.log(n_eff) / (n_eff * math.log(1.0 / rho))
    else:
        raise InvalidParameter(f"mode must be 'restart' or 'norestart', got {mode!r}")
    return QuantileBound(u, u / kappa)


# ---------------------------------------------------------------------------
# Misc


def iid_coverage_bounds(m: int, alpha: float) -> tuple[float, float]:
    """Finite-sample coverage sandwich of split CP with m exchangeable scores."""
    from .conformal import uncorrected_rank

    if m < 1:
        raise InvalidParameter("m must be >= 1")
    low = min(1.0, uncorrected_rank(m, alpha) / (m + 1))
    return low, 1.0 - alpha + 1.0 / (m + 1)


def rho_from_tmix(t_mix: float, reversible: bool = False, gap: Optional[float] = None) -> float:
    if t_mix < 1:
        raise InvalidParameter("t_mix must be >= 1")
    if reversible:
        if gap is None:
            raise InvalidParameter("reversible mode needs the spectral gap")
        if not 0.0 < gap <= 1.0:
            raise InvalidParameter(f"gap must lie in (0, 1], got {gap}")
        return 1.0 - gap
    return math.sqrt(1.0 - 1.0 / (2.0 * t_mix))


def ksplit_objective(K: np.ndarray, n: int, rho: float) -> np.ndarray:
    """K/n + (n/K) rho**K, the size/coverage trade-off minimised by K*."""
    K = np.asarray(K, dtype=float)
    return K / n + (n / K) * rho**K
