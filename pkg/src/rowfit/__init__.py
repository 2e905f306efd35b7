"""Row-action identification of additive, Kolmogorov-Arnold and ridge models."""

from rowfit import basis, data, kolmogorov_arnold, ridge, urysohn
from rowfit.basis import GaussBasis, PwlBasis, SparseEval
from rowfit.data import Dataset, FitConfig, Record, RunReport, rmse_normalized

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FitConfig",
    "GaussBasis",
    "PwlBasis",
    "Record",
    "RunReport",
    "SparseEval",
    "basis",
    "data",
    "kolmogorov_arnold",
    "ridge",
    "rmse_normalized",
    "urysohn",
]
