"""Split and K-split conformal prediction with absolute-residual scores."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .chains import Trajectory
from .errors import InvalidParameter

Predictor = Callable[[np.ndarray], np.ndarray]
Fitter = Callable[[Trajectory], Predictor]

INF = math.inf


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise InvalidParameter(f"alpha must lie in (0, 1), got {alpha}")


def _ceil(x: float) -> int:
    # products like 10 * 0.9 must not round up past an exact integer
    return math.ceil(x - 1e-9 * max(1.0, abs(x)))


def uncorrected_rank(m: int, alpha: float) -> int:
    """Order statistic used by split CP on ``m`` calibration scores."""
    return _ceil((m + 1) * (1.0 - alpha))


class CorrectedRank(NamedTuple):
    rank: int
    alpha_prime: float


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float

    @property
    def infinite(self) -> bool:
        return math.isinf(self.lower) or math.isinf(self.upper)

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def __contains__(self, y: float) -> bool:
        return self.lower <= y <= self.upper


@dataclass(frozen=True)
class ConformalPredictor:
    model: Predictor
    q_hat: float
    alpha: float
    calib_size: int
    rank: int
    K: int = 1

    @property
    def infinite(self) -> bool:
        return math.isinf(self.q_hat)

    def predict(self, x) -> PredictionInterval:
        return predict_interval(self, x)


def residual_scores(model: Predictor, data: Trajectory) -> np.ndarray:
    if len(data) == 0:
        raise InvalidParameter("cannot score an empty trajectory")
    pred = np.asarray(model(data.covariates), dtype=float)
    return np.abs(data.responses - pred)


def order_statistic(scores, k: int) -> float:
    """k-th smallest score (1-based), or +inf when ``k`` exceeds the sample size."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise InvalidParameter("scores must be non-empty")
    if k > s.size:
        return INF
    if k < 1:
        raise InvalidParameter(f"rank must be >= 1, got {k}")
    return float(np.partition(s, k - 1)[k - 1])


def empirical_quantile(scores, alpha: float) -> float:
    """The ceil((n+1)(1-alpha))-th smallest score; +inf if that rank exceeds n."""
    _check_alpha(alpha)
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise InvalidParameter("scores must be non-empty")
    return order_statistic(s, uncorrected_rank(s.size, alpha))


def split_cp(train: Trajectory, calib: Trajectory, alpha: float, fitter: Fitter) -> ConformalPredictor:
    """Fit on ``train`` and calibrate on the (later) ``calib`` segment."""
    _check_alpha(alpha)
    if len(train) == 0 or len(calib) == 0:
        raise InvalidParameter("train and calib must be non-empty")
    model = fitter(train)
    scores = residual_scores(model, calib)
    k = uncorrected_rank(scores.size, alpha)
    return ConformalPredictor(model, order_statistic(scores, k), alpha, scores.size, k)


def predict_interval(p: ConformalPredictor, x) -> PredictionInterval:
    center = float(np.asarray(p.model(np.asarray([x])), dtype=float)[0])
    if math.isinf(p.q_hat):
        return PredictionInterval(-INF, INF)
    return PredictionInterval(center - p.q_hat, center + p.q_hat)


def thin(calib: Trajectory, K: int) -> Trajectory:
    """Keep every K-th observation, starting with the first."""
    if K < 1:
        raise InvalidParameter(f"K must be >= 1, got {K}")
    return calib[::K]


def corrected_rank(m: int, alpha: float) -> CorrectedRank:
    """Rank whose achieved level k/(m+1) is nearest to 1 - alpha.

    Ties go to the larger rank. ``rank == m + 1`` means the quantile is
    infinite.
    """
    _check_alpha(alpha)
    if m < 1:
        raise InvalidParameter("m must be >= 1")
    target = (m + 1) * (1.0 - alpha)
    k = math.floor(target + 0.5 + 1e-9 * max(1.0, target))
    k = min(max(k, 1), m + 1)
    return CorrectedRank(k, 1.0 - k / (m + 1))


def ksplit_cp(
    train: Trajectory,
    calib: Trajectory,
    alpha: float,
    K: int,
    corrected: bool,
    fitter: Fitter,
) -> ConformalPredictor:
    _check_alpha(alpha)
    if len(train) == 0 or len(calib) == 0:
        raise InvalidParameter("train and calib must be non-empty")
    model = fitter(train)
    scores = residual_scores(model, thin(calib, K))
    m = scores.size
    k = corrected_rank(m, alpha).rank if corrected else uncorrected_rank(m, alpha)
    return ConformalPredictor(model, order_statistic(scores, k), alpha, m, k, K)


def _window_rank(m: int, alpha: float, corrected: bool) -> int:
    return corrected_rank(m, alpha).rank if corrected else uncorrected_rank(m, alpha)


class RollingResult(NamedTuple):
    covered: np.ndarray
    q_hat: np.ndarray


def rolling_cp(
    series,
    train_len: int,
    calib_len: int,
    alpha: float,
    K: int = 1,
    corrected: bool = False,
    fitter: Optional[Callable[[np.ndarray], Predictor]] = None,
) -> RollingResult:
    """Rolling-window conformal prediction over a stream.

    Without ``fitter``, ``series`` is a precomputed score stream: at each step
    ``t >= train_len + calib_len`` the quantile comes from the ``calib_len``
    scores preceding ``t`` (thinned by ``K``) and step ``t`` is covered when
    its score does not exceed it. The first ``train_len`` scores of every
    window are the model's training span and are not used for calibration.

    With ``fitter``, ``series`` holds raw values and step ``t`` predicts
    ``series[t + 1]`` from ``series[t]``. The model is refitted at every step on
    the values spanning the training window ``[t - train_len - calib_len,
    t - calib_len)`` of (value, next value) pairs, then scored on the
    calibration pairs.

    Returns the per-step coverage indicator and quantile, in time order.
    """
    _check_alpha(alpha)
    if train_len < 0 or calib_len < 1:
        raise InvalidParameter("train_len must be >= 0 and calib_len >= 1")
    if K < 1:
        raise InvalidParameter(f"K must be >= 1, got {K}")
    x = np.asarray(series, dtype=float)
    steps = x.size - 1 if fitter is not None else x.size
    start = train_len + calib_len
    if steps <= start:
        raise InvalidParameter(
            f"stream of {steps} steps is too short for a window of {start}"
        )
    m = len(range(0, calib_len, K))
    k = _window_rank(m, alpha, corrected)
    n_out = steps - start
    covered = np.empty(n_out, dtype=bool)
    q_hat = np.empty(n_out)
    for i, t in enumerate(range(start, steps)):
        if fitter is None:
            cal = x[t - calib_len:t][::K]
            test = x[t]
        else:
            model = fitter(x[t - start:t - calib_len + 1])
            cx = x[t - calib_len:t][::K]
            cy = x[t - calib_len + 1:t + 1][::K]
            cal = np.abs(cy - model(cx))
            test = abs(x[t + 1] - float(model(x[t:t + 1])[0]))
        q = order_statistic(cal, k)
        q_hat[i] = q
        covered[i] = test <= q
    return RollingResult(covered, q_hat)
