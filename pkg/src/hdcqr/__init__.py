"""High-dimensional censored quantile regression with fused multi-split inference."""

from .data import CoefProcess, SurvivalDataset, TauGrid, build_grid, read_csv, write_csv
from .errors import DataError, HDCQRError, IdentifiabilityError, NumericalError, UnboundedError
from .qr_solver import L1Problem, L1Solution, kkt_check, solve_l1
from .cqr import fit_sequential_cqr, martingale_residual, deviance_residual
from .select import SelectionConfig, cross_validate, fit_lhdcqr, select_support
from .fuse import InferenceResult, SplitRecord, ci_and_pvalue, resampling_covariance, run_fused, variance_bc

__version__ = "0.1.0"
