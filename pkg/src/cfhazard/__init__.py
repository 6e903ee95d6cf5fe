"""Control-function cloglog estimation of discrete-time hazards with endogenous regressors."""
from .cf import ControlFunctionSpec, parse_transform
from .cloglog import cloglog_prob, fit_cloglog
from .data import EstimationFrame, PanelDataset, PanelSchema, build_frame, load_panel, truncate_after_failure
from .errors import CfHazardError, DataError, EstimationError, HarnessError, SingularMatrixError, VceError
from .estimator import EstimationResult, fit_ivcloglog, fit_naive_cloglog, fit_predictor_substitution
from .firststage import FirstStageFit, fit_first_stage
from .numerics import RankReport, pivoted_rank, solve_spd
from .simulate import DgpConfig, EstimatorConfig, McReport, generate_panel, run_monte_carlo
from .vce import build_G, build_G_kronecker, build_Omega, sandwich

__version__ = "0.1.0"

__all__ = [
    "CfHazardError",
    "ControlFunctionSpec",
    "DataError",
    "DgpConfig",
    "EstimationError",
    "EstimationFrame",
    "EstimationResult",
    "EstimatorConfig",
    "FirstStageFit",
    "HarnessError",
    "McReport",
    "PanelDataset",
    "PanelSchema",
    "RankReport",
    "SingularMatrixError",
    "VceError",
    "build_G",
    "build_G_kronecker",
    "build_Omega",
    "build_frame",
    "cloglog_prob",
    "fit_cloglog",
    "fit_first_stage",
    "fit_ivcloglog",
    "fit_naive_cloglog",
    "fit_predictor_substitution",
    "generate_panel",
    "load_panel",
    "parse_transform",
    "pivoted_rank",
    "run_monte_carlo",
    "sandwich",
    "solve_spd",
    "truncate_after_failure",
]
