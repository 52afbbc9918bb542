"""Performance prediction from experiment records, with bootstrap reliability analysis."""

__version__ = "0.1.0"

from .data_io import PerformanceRecord, bucketize, build_tensor, featurize, load_records
from .evaluation import cross_validate, kfold_plan, mean_baseline, msr_analysis
from .reliability import (
    PredictionDistribution,
    bootstrap_distributions,
    calibration_error,
    ci_accuracy,
    ece,
    percentile_ci,
    reliability_diagram,
)
from .tensor_core import PerformanceTensor, fold, masked_rmse, sparsity, standardize, unfold, unstandardize
from .tensor_regression import CpConfig, RpcaConfig, complete, cp_fit, cp_reconstruct, rpca_fit
from .trees import BoostConfig, fit_gbdt, predict_gbdt
