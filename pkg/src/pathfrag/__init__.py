"""Treatment-pathway inference from event-log health records."""

from .events import (
    MISSING,
    Cohort,
    EventRecord,
    PatientSequence,
    TrainingWindow,
    VariableSchema,
    build_schema,
    one_hot,
    sample_training_window,
)
from .model import AttentionMaskSet, EventEncoderModel, ModelConfig, build_masks
from .objective import LossConfig, adjacent_distances, stlo_components, stlo_loss
from .synth import GeneratorConfig, SyntheticPathway, emit_cohort, generate_pathway

__all__ = [
    "MISSING",
    "Cohort",
    "EventRecord",
    "PatientSequence",
    "TrainingWindow",
    "VariableSchema",
    "build_schema",
    "one_hot",
    "sample_training_window",
    "AttentionMaskSet",
    "EventEncoderModel",
    "ModelConfig",
    "build_masks",
    "LossConfig",
    "adjacent_distances",
    "stlo_components",
    "stlo_loss",
    "GeneratorConfig",
    "SyntheticPathway",
    "emit_cohort",
    "generate_pathway",
]
