"""Fisher-SGD: maximum likelihood in latent variable models by Fisher-preconditioned
stochastic gradient ascent, with an online estimate of the Fisher information."""

from .core import (
    Diverged,
    Phase,
    PreconditionerFailed,
    RestartLimitExceeded,
    RunAborted,
    RunResult,
    Schedule,
    run_independent,
    run_nonindependent,
)
from .inference import ConfidenceReport, confidence_report, delta_ci, ellipsoid_statistic
from .model import GlobalModel, IndependentModel

__version__ = "0.1.0"

__all__ = [
    "ConfidenceReport",
    "Diverged",
    "GlobalModel",
    "IndependentModel",
    "Phase",
    "PreconditionerFailed",
    "RestartLimitExceeded",
    "RunAborted",
    "RunResult",
    "Schedule",
    "confidence_report",
    "delta_ci",
    "ellipsoid_statistic",
    "run_independent",
    "run_nonindependent",
]
