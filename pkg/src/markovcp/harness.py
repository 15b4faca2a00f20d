"""Monte Carlo coverage experiments on synthetic chains and rolling-window backtests.

A coverage experiment repeats, ``trials`` times: simulate one trajectory of
length ``N_train + n_cal + 1``, fit the point model on the first ``N_train``
observations, calibrate each conformal method on the next ``n_cal`` and check
whether the interval built for the final observation covers it.

Each trial draws from its own Philox stream keyed by ``(master_seed, trial)``,
so reports are bitwise reproducible and independent of execution order.
"""

from __future__ import annotations

import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import ndtri

from . import chains, conformal, estimation, theory
from .chains import Ar1Spec, Trajectory
from .errors import InvalidParameter, SingularFit
from .rng import trial_rng

METHODS = ("split", "ksplit", "ksplit_corrected")
DEFAULT_ALPHA = 0.1
DEFAULT_SLOPE = 0.5
REPORT_FIELDS = (
    "coverage_mean",
    "coverage_se",
    "mean_halfwidth",
    "relative_length_error",
    "k_used",
    "trials",
    "infinite_intervals",
)


# ---------------------------------------------------------------------------
# Point models


@dataclass(frozen=True)
class LinearPredictor:
    slope: float
    intercept: float = 0.0

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept


def fit_linear(train: Trajectory) -> LinearPredictor:
    """Ordinary least squares y ~ slope * x + intercept."""
    x = np.asarray(train.covariates, dtype=float)
    y = train.responses
    if x.size < 2:
        raise SingularFit("need at least two observations")
    xc = x - x.mean()
    sxx = float(np.dot(xc, xc))
    if sxx == 0.0:
        raise SingularFit("all covariates are equal")
    slope = float(np.dot(xc, y - y.mean())) / sxx
    return LinearPredictor(slope, float(y.mean() - slope * x.mean()))


def fit_ar_predictor(train) -> LinearPredictor:
    """Least-squares AR(1) coefficient without intercept: predicts x[t+1] by theta * x[t]."""
    x = np.asarray(train, dtype=float)
    if x.size < 3:
        raise SingularFit("need at least three values")
    lagged = x[:-1]
    denom = float(np.dot(lagged, lagged))
    if denom == 0.0:
        raise SingularFit("all lagged values are zero")
    return LinearPredictor(float(np.dot(lagged, x[1:])) / denom, 0.0)


def _ar_fitter(train: Trajectory) -> LinearPredictor:
    # responses are the covariates shifted by one step
    return fit_ar_predictor(np.append(train.covariates, train.responses[-1]))


def optimal_halfwidth_gaussian(alpha: float, sigma: float) -> float:
    """(1 - alpha) quantile of |eps| for eps ~ N(0, sigma**2)."""
    if not 0.0 < alpha < 1.0:
        raise InvalidParameter(f"alpha must lie in (0, 1), got {alpha}")
    return sigma * float(ndtri(1.0 - alpha / 2.0))


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class LazyWalkChain:
    w: int = 20
    slope: float = DEFAULT_SLOPE
    noise_sd: float = 1.0
    kind: str = "lazy_walk"


@dataclass(frozen=True)
class Ar1Chain:
    theta: float = 0.9
    omega: float = 1.0
    kind: str = "ar1"


ChainConfig = Union[LazyWalkChain, Ar1Chain]


def parse_k_policy(policy: Union[str, int]) -> Tuple[str, Optional[int]]:
    """``'fixed:<K>'`` (or a bare int), ``'kstar'`` or ``'adaptive'``."""
    if isinstance(policy, int):
        policy = f"fixed:{policy}"
    if policy in ("kstar", "adaptive"):
        return policy, None
    if isinstance(policy, str) and policy.startswith("fixed:"):
        try:
            K = int(policy.split(":", 1)[1])
        except ValueError:
            raise InvalidParameter(f"bad fixed K policy {policy!r}") from None
        if K < 1:
            raise InvalidParameter("fixed K must be >= 1")
        return "fixed", K
    raise InvalidParameter(f"k_policy must be fixed:<int>, kstar or adaptive, got {policy!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    chain: ChainConfig = field(default_factory=LazyWalkChain)
    N_train: int = 2000
    n_cal: int = 2000
    alpha: float = DEFAULT_ALPHA
    methods: Tuple[str, ...] = METHODS
    k_policy: str = "kstar"
    trials: int = 500
    master_seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidParameter("trials must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidParameter("alpha must lie in (0, 1)")
        if self.N_train < 1 or self.n_cal < 1:
            raise InvalidParameter("N_train and n_cal must be >= 1")
        object.__setattr__(self, "methods", tuple(self.methods))
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise InvalidParameter(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        parse_k_policy(self.k_policy)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Build from a JSON-style mapping; unknown keys are rejected."""
        data = dict(data)
        allowed = {f.name for f in fields(cls)}
        extra = set(data) - allowed
        if extra:
            raise InvalidParameter(f"unknown config keys: {sorted(extra)}")
        chain = data.get("chain", {"kind": "lazy_walk"})
        if isinstance(chain, dict):
            chain = dict(chain)
            kind = chain.pop("kind", "lazy_walk")
            cls_ = {"lazy_walk": LazyWalkChain, "ar1": Ar1Chain}.get(kind)
            if cls_ is None:
                raise InvalidParameter(f"unknown chain kind {kind!r}")
            extra = set(chain) - {f.name for f in fields(cls_)}
            if extra:
                raise InvalidParameter(f"unknown chain keys: {sorted(extra)}")
            data["chain"] = cls_(**chain)
        if "methods" in data:
            data["methods"] = tuple(data["methods"])
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = list(self.methods)
        return out


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class MethodSummary:
    coverage_mean: float
    coverage_se: float
    mean_halfwidth: Optional[float]
    relative_length_error: Optional[float]
    k_used: int
    trials: int
    infinite_intervals: int


@dataclass
class CoverageReport:
    """Per-method summaries plus raw per-trial records (not serialised)."""

    methods: Dict[str, MethodSummary]
    q_hat: Dict[str, np.ndarray] = field(default_factory=dict, compare=False, repr=False)
    covered: Dict[str, np.ndarray] = field(default_factory=dict, compare=False, repr=False)
    q_alpha: Optional[float] = field(default=None, compare=False)

    def __getitem__(self, method: str) -> MethodSummary:
        return self.methods[method]

    def to_dict(self) -> dict:
        return {m: asdict(s) for m, s in self.methods.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "CoverageReport":
        return cls({m: MethodSummary(**v) for m, v in data.items()})

    def abs_quantile_errors(self, method: str) -> np.ndarray:
        """|q_hat - q_alpha| for every trial with a finite quantile."""
        q = self.q_hat[method]
        return np.abs(q[np.isfinite(q)] - self.q_alpha)

    def relative_length_errors(self, method: str) -> np.ndarray:
        return self.abs_quantile_errors(method) / self.q_alpha


@dataclass(frozen=True)
class TrialResult:
    trial: int
    covered: Dict[str, bool]
    q_hat: Dict[str, float]
    K: Dict[str, int]


def summarize(
    covered: Sequence[bool],
    q_hat: Sequence[float],
    ks: Sequence[int],
    q_alpha: Optional[float],
) -> MethodSummary:
    """Aggregate one method's per-trial outcomes.

    Infinite quantiles count as covered but are left out of the length
    statistics. Sums use ``math.fsum`` so the result does not depend on
    trial order.
    """
    n = len(covered)
    p = math.fsum(float(c) for c in covered) / n
    finite = [q for q in q_hat if math.isfinite(q)]
    n_inf = n - len(finite)
    mean_hw = math.fsum(finite) / len(finite) if finite else None
    if q_alpha is not None and q_alpha > 0.0 and finite:
        rel = math.fsum(abs(q - q_alpha) / q_alpha for q in finite) / len(finite)
    else:
        rel = None
    k_used = int(round(statistics.median(ks))) if ks else 1
    return MethodSummary(p, math.sqrt(p * (1.0 - p) / n), mean_hw, rel, k_used, n, n_inf)


# ---------------------------------------------------------------------------
# Coverage experiment


def true_rho(chain: ChainConfig) -> float:
    if isinstance(chain, LazyWalkChain):
        p = chains.lazy_walk_kernel(chain.w)
        return chains.spectral_gap_exact(p, chains.stationary_distribution(p)).rho
    return chain.theta


def oracle_halfwidth(cfg: ExperimentConfig) -> float:
    sigma = cfg.chain.noise_sd if isinstance(cfg.chain, LazyWalkChain) else cfg.chain.omega
    return optimal_halfwidth_gaussian(cfg.alpha, sigma)


def _simulate(cfg: ExperimentConfig, rng: np.random.Generator):
    length = cfg.N_train + cfg.n_cal + 1
    chain = cfg.chain
    if isinstance(chain, LazyWalkChain):
        p = chains.lazy_walk_kernel(chain.w)
        states = chains.simulate_finite(p, np.full(chain.w, 1.0 / chain.w), length, rng)
        x = states.astype(float)
        y = chain.slope * x + chain.noise_sd * rng.standard_normal(length)
        return Trajectory(x, y, origin_time=1 - cfg.N_train), states, fit_linear
    spec = Ar1Spec(chain.theta, chain.omega)
    x0 = math.sqrt(spec.stationary_variance) * rng.standard_normal()
    path = chains.simulate_ar1(spec, x0, length + 1, rng)
    return Trajectory(path[:-1], path[1:], origin_time=1 - cfg.N_train), path, _ar_fitter


def _choose_k(cfg: ExperimentConfig, raw_train, rho_exact: Optional[float]) -> int:
    policy, K = parse_k_policy(cfg.k_policy)
    if policy == "fixed":
        pass
    elif policy == "kstar":
        K = theory.k_star(max(cfg.n_cal, 2), rho_exact)
    elif isinstance(cfg.chain, LazyWalkChain):
        ek = estimation.empirical_kernel(raw_train, cfg.chain.w)
        K = estimation.adaptive_k(max(cfg.n_cal, 2), estimation.estimate_rho(ek))
    else:
        max_lag = max(2, min(20, (len(raw_train) - 1) // 4))
        rho_hat = estimation.estimate_rho_autocorr(raw_train, max_lag)
        K = estimation.adaptive_k(max(cfg.n_cal, 2), rho_hat)
    return min(K, cfg.n_cal)


def run_trial(cfg: ExperimentConfig, trial: int, rho_exact: Optional[float] = None) -> TrialResult:
    rng = trial_rng(cfg.master_seed, trial)
    traj, raw, fitter = _simulate(cfg, rng)
    N, n = cfg.N_train, cfg.n_cal
    train, calib = traj[:N], traj[N:N + n]
    x_test, y_test = traj.covariates[-1], traj.responses[-1]
    K = 1
    if any(m != "split" for m in cfg.methods):
        if rho_exact is None and cfg.k_policy == "kstar":
            rho_exact = true_rho(cfg.chain)
        K = _choose_k(cfg, raw[:N], rho_exact)
    covered, q_hat, ks = {}, {}, {}
    for method in cfg.methods:
        if method == "split":
            pred = conformal.split_cp(train, calib, cfg.alpha, fitter)
        else:
            pred = conformal.ksplit_cp(
                train, calib, cfg.alpha, K, method == "ksplit_corrected", fitter
            )
        covered[method] = bool(y_test in conformal.predict_interval(pred, x_test))
        q_hat[method] = pred.q_hat
        ks[method] = pred.K
    return TrialResult(trial, covered, q_hat, ks)


def aggregate(cfg: ExperimentConfig, results: Iterable[TrialResult]) -> CoverageReport:
    ordered = sorted(results, key=lambda r: r.trial)
    q_alpha = oracle_halfwidth(cfg)
    summaries, q_arrays, cov_arrays = {}, {}, {}
    for m in cfg.methods:
        cov = [r.covered[m] for r in ordered]
        q = [r.q_hat[m] for r in ordered]
        summaries[m] = summarize(cov, q, [r.K[m] for r in ordered], q_alpha)
        q_arrays[m] = np.asarray(q)
        cov_arrays[m] = np.asarray(cov)
    return CoverageReport(summaries, q_arrays, cov_arrays, q_alpha)


def _run_chunk(args):
    cfg, trials, rho = args
    return [run_trial(cfg, t, rho) for t in trials]


def run_coverage_experiment(cfg: ExperimentConfig, workers: int = 1) -> CoverageReport:
    """Run all trials and aggregate; ``workers > 1`` spreads trials over processes."""
    rho = true_rho(cfg.chain) if cfg.k_policy == "kstar" else None
    if workers <= 1:
        results = [run_trial(cfg, t, rho) for t in range(cfg.trials)]
    else:
        chunks = [list(range(i, cfg.trials, workers)) for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for part in pool.map(_run_chunk, [(cfg, c, rho) for c in chunks]) for r in part]
    return aggregate(cfg, results)


def sweep_calibration_sizes(cfg: ExperimentConfig, sizes: Sequence[int], workers: int = 1) -> Dict[int, CoverageReport]:
    """One experiment per calibration size, sharing every other setting."""
    out = {}
    for n in sizes:
        d = cfg.to_dict()
        d["n_cal"] = int(n)
        d["chain"] = cfg.chain
        out[int(n)] = run_coverage_experiment(ExperimentConfig(**d), workers=workers)
    return out


# ---------------------------------------------------------------------------
# Rolling windows


@dataclass
class RollingReport:
    methods: Dict[str, MethodSummary]
    covered: Dict[str, np.ndarray]
    bucket_coverage: Dict[str, np.ndarray]
    rho_hat: Optional[float]
    K: int

    def all_infinite(self, method: str) -> bool:
        s = self.methods[method]
        return s.infinite_intervals == s.trials

    def to_dict(self) -> dict:
        return {m: asdict(s) for m, s in self.methods.items()}


def bucket_means(flags: np.ndarray, bucket: int) -> np.ndarray:
    """Mean of consecutive blocks of ``bucket`` steps (last block may be shorter)."""
    flags = np.asarray(flags, dtype=float)
    starts = np.arange(0, flags.size, bucket)
    return np.add.reduceat(flags, starts) / np.diff(np.append(starts, flags.size))


def run_rolling_experiment(
    series,
    train_len: int,
    calib_len: int,
    alpha: float = DEFAULT_ALPHA,
    k_policy: str = "adaptive",
    methods: Sequence[str] = METHODS,
    bucket: Optional[int] = None,
    max_lag: int = 20,
) -> RollingReport:
    """Rolling-window CP on the one-step returns of a positive price series.

    At each step an AR(1) predictor of the next return is refitted on the
    training window and calibrated on the following window. For the
    ``kstar`` and ``adaptive`` policies the rate is estimated once, from the
    autocorrelation decay of the returns in the first training window.
    """
    r = estimation.returns(series)
    policy, K = parse_k_policy(k_policy)
    rho_hat = None
    if policy != "fixed" and any(m != "split" for m in methods):
        rho_hat = estimation.estimate_rho_autocorr(r[:train_len], max_lag)
        if policy == "kstar":
            K = theory.k_star(max(calib_len, 2), rho_hat)
        else:
            K = estimation.adaptive_k(max(calib_len, 2), rho_hat)
    K = min(K or 1, calib_len)
    summaries, covered, buckets = {}, {}, {}
    for m in methods:
        if m not in METHODS:
            raise InvalidParameter(f"unknown method {m!r}")
        k_m = 1 if m == "split" else K
        res = conformal.rolling_cp(
            r, train_len, calib_len, alpha, k_m, m == "ksplit_corrected", fit_ar_predictor
        )
        covered[m] = res.covered
        summaries[m] = summarize(res.covered.tolist(), res.q_hat.tolist(), [k_m], None)
        buckets[m] = bucket_means(res.covered, bucket or res.covered.size)
    return RollingReport(summaries, covered, buckets, rho_hat, K)
