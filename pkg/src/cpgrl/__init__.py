"""Differentiable coupled-oscillator locomotion controllers trained with PPO."""

from . import autodiff, cpg, feedback, hopper, ppo
from .config import ExperimentConfig, default_config, load_config, parse_config

__all__ = [
    "autodiff", "cpg", "feedback", "hopper", "ppo",
    "ExperimentConfig", "default_config", "load_config", "parse_config",
]

__version__ = "0.1.0"
