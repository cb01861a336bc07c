"""Desk-grasp visuomotor stack: recurrent-spiking policy, GMM action
refinement, geometric skill selection, and a synthetic tabletop benchmark."""

from .autodiff import Parameter, Tape, Tensor
from .errors import (
    ConfigurationError,
    DeskGraspError,
    DimensionError,
    InputError,
    InterpreterUnavailable,
    NoFeasibleSkill,
    NumericError,
    ParseError,
    SkillModelMissing,
    TargetNotFound,
)
from .model import PolicyConfig, PolicyNet, mse_loss

__all__ = [
    "Parameter",
    "Tape",
    "Tensor",
    "PolicyConfig",
    "PolicyNet",
    "mse_loss",
    "DeskGraspError",
    "DimensionError",
    "NumericError",
    "ConfigurationError",
    "InputError",
    "ParseError",
    "TargetNotFound",
    "NoFeasibleSkill",
    "InterpreterUnavailable",
    "SkillModelMissing",
]

__version__ = "0.1.0"
