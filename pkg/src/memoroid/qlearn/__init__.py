"""Recurrent deep Q-learning on toy memory tasks."""

from .config import ConfigError, ExperimentConfig, load_config
from .envs import CardEnv, ToyEnvSpec, make_env
from .pipeline import PipelineConfig, QPipelineParams, RecurrentPolicy, backward, forward, q_forward
from .sensitivity import SensitivityProfile, sensitivity_profile, write_profile_csv
from .train import evaluate, run_experiment, train
from .updates import QOptimizer, sbb_q_loss, sbb_q_update, tbb_q_loss, tbb_q_update

__all__ = [
    "ConfigError", "ExperimentConfig", "load_config",
    "CardEnv", "ToyEnvSpec", "make_env",
    "PipelineConfig", "QPipelineParams", "RecurrentPolicy", "forward", "q_forward", "backward",
    "SensitivityProfile", "sensitivity_profile", "write_profile_csv",
    "train", "run_experiment", "evaluate",
    "QOptimizer", "tbb_q_loss", "sbb_q_loss", "tbb_q_update", "sbb_q_update",
]
