"""Occupancy processes of the infinite urn scheme and their Gaussian limits."""
__version__ = "0.1.0"

from .harness import ConfigError, ExperimentConfig, run_fclt_experiment  # noqa: E402
from .limits import limit_cov, limit_matrix  # noqa: E402
from .moments import discrete_mean, poisson_cov, poisson_cov_identity, poisson_mean, var_M_increment  # noqa: E402
from .occupancy import OccupancyState, missing_mass  # noqa: E402
from .sampler import BallStream, RngStream, UrnSampler, sample_urn, simulate  # noqa: E402
from .series import SeriesResult, ToleranceError  # noqa: E402
from .weights import FiniteVector, LogPowerLaw, PowerLaw, ThetaOneLog, model_from_dict  # noqa: E402

__all__ = [
    "BallStream", "ConfigError", "ExperimentConfig", "FiniteVector", "LogPowerLaw", "OccupancyState",
    "PowerLaw", "RngStream", "SeriesResult", "ThetaOneLog", "ToleranceError", "UrnSampler",
    "discrete_mean", "limit_cov", "limit_matrix", "missing_mass", "model_from_dict", "poisson_cov",
    "poisson_cov_identity", "poisson_mean", "run_fclt_experiment", "sample_urn", "simulate",
    "var_M_increment",
]
