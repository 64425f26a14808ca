"""Gaze-conditioned diffusion for stochastic human motion prediction."""

from .data import MotionSample, Skeleton, Window, make_windows, preset_skeleton, read_gmds, write_gmds
from .diffusion import SamplerConfig, cosine_schedule, sample_completion
from .model import GazeMotionDiffusion, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "GazeMotionDiffusion", "ModelConfig", "MotionSample", "SamplerConfig", "Skeleton", "Window",
    "cosine_schedule", "make_windows", "preset_skeleton", "read_gmds", "sample_completion", "write_gmds",
]
