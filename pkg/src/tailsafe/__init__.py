"""Tail-risk-aware hedging with a CBF-QP safety filter, IQN-CVaR-PPO training and audit telemetry."""

from . import evaluation, execution, governance, learner, market, safety, tailrisk
from .exceptions import ConfigError, EstimationError, InputError, TailSafeError, TrainingError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "EstimationError",
    "InputError",
    "TailSafeError",
    "TrainingError",
    "evaluation",
    "execution",
    "governance",
    "learner",
    "market",
    "safety",
    "tailrisk",
]
