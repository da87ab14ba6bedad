"""Adaptive multi-modal diffusion policies for decoupled multi-agent manipulation."""

from .config import ConfigError, RunConfig
from .estimator import AdmDpPolicy
from .policy import PRESETS, AblationFlags, AdmDpNet, NetDims

__version__ = "0.1.0"

__all__ = ["AdmDpPolicy", "RunConfig", "ConfigError", "AblationFlags", "AdmDpNet", "NetDims", "PRESETS"]
