"""Split and K-split conformal prediction for Markovian data."""

from .chains import Ar1Spec, Trajectory
from .conformal import (
    ConformalPredictor,
    PredictionInterval,
    corrected_rank,
    empirical_quantile,
    ksplit_cp,
    predict_interval,
    rolling_cp,
    split_cp,
    thin,
)
from .theory import BoundInputs, k_star, lambert_w0, lambert_wm1

__version__ = "0.1.0"
