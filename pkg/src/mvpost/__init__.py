"""Two-step multivariate post-processing of ensemble forecasts."""

from .archive import ForecastArchive, StationData, ingest, write_archive
from .dists import CensoredGevDist, GaussianDist, SquaredDist, TruncGaussianDist, crps_analytic
from .emos import EmosParams, EnsembleForecast, VariableKind, emos_predictive, estimate_params, rolling_calibrate
from .pipeline import METHODS, ExperimentConfig, run_experiment
from .synth import ScenarioConfig, generate_archive

__version__ = "0.1.0"

__all__ = [
    "CensoredGevDist",
    "EmosParams",
    "EnsembleForecast",
    "ExperimentConfig",
    "ForecastArchive",
    "GaussianDist",
    "METHODS",
    "ScenarioConfig",
    "SquaredDist",
    "StationData",
    "TruncGaussianDist",
    "VariableKind",
    "crps_analytic",
    "emos_predictive",
    "estimate_params",
    "generate_archive",
    "ingest",
    "rolling_calibrate",
    "run_experiment",
    "write_archive",
]
