"""StyleBooth-style multimodal instruction editing toolkit."""

__version__ = "0.1.0"

from .backends import BackendProfile, get_backends
from .diffusion import EditingModel, GuidanceConfig, NoiseSchedule, TrainMode
from .instructions import (
    AlignmentConfig,
    AlignmentLayer,
    BoundInstruction,
    ExemplarRef,
    FeatureSequence,
    InstructionTemplate,
    ScaleWeights,
    bind,
    parse_template,
)

__all__ = [
    "AlignmentConfig",
    "AlignmentLayer",
    "BackendProfile",
    "BoundInstruction",
    "EditingModel",
    "ExemplarRef",
    "FeatureSequence",
    "GuidanceConfig",
    "InstructionTemplate",
    "NoiseSchedule",
    "ScaleWeights",
    "TrainMode",
    "bind",
    "get_backends",
    "parse_template",
]
