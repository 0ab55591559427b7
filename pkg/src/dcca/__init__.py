"""Alignment of long, morphologically distinct sensor signals under clock drift and offsets."""

from .config import RunConfig
from .correlation import LagCurve, LagEstimate, cca_all_lags, cca_score, ncc_all_lags, windowed_lag_estimates
from .modelfit import EnergyConfig, KnotSet, alpha_expansion, pearl_fit
from .pipeline import AlignResult, align
from .segmentation import WindowGrid, plan_segmentation
from .signal import OUTLIER, PiecewiseWarp, Signal, apply_warp, evaluate_warp
from .transform import NoCorrelatedContent, TransformNet, train_alternating

__all__ = [
    "RunConfig", "LagCurve", "LagEstimate", "cca_all_lags", "cca_score", "ncc_all_lags",
    "windowed_lag_estimates", "EnergyConfig", "KnotSet", "alpha_expansion", "pearl_fit",
    "AlignResult", "align", "WindowGrid", "plan_segmentation", "OUTLIER", "PiecewiseWarp",
    "Signal", "apply_warp", "evaluate_warp", "NoCorrelatedContent", "TransformNet", "train_alternating",
]
__version__ = "0.1.0"
