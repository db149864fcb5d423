"""Clipped-surrogate policy optimization on numpy, with oracle-checked toy environments."""

from .agent import ActorCritic, AgentParams
from .envs import ChainEnv, PointMassEnv, make_env
from .errors import ConfigurationError, NumericError, ProximaError, UsageError
from .objectives import ObjectiveConfig
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ActorCritic", "AgentParams", "ChainEnv", "PointMassEnv", "make_env",
    "ConfigurationError", "NumericError", "ProximaError", "UsageError",
    "ObjectiveConfig", "TrainConfig", "train",
]
