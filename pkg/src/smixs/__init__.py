"""Mixtures of Gaussian components whose means are cubic smoothing splines."""
from .band import band_pair_from_times, reinsch_solve, smoother_diagonal
from .errors import SmixsError
from .evaluation import clustering_f_score, head_to_head, mean_rmse, run_benchmark
from .initialization import RestartPlan, bic, multi_restart, select_cluster_count
from .model import Dataset, FitConfig, FitResult, MixtureParams, fit_em
from .synth import GeneratorSpec, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "Dataset", "FitConfig", "FitResult", "GeneratorSpec", "MixtureParams", "RestartPlan",
    "SmixsError", "band_pair_from_times", "bic", "clustering_f_score", "fit_em",
    "generate_dataset", "head_to_head", "mean_rmse", "multi_restart", "reinsch_solve",
    "run_benchmark", "select_cluster_count", "smoother_diagonal",
]
