# Models module

from mkelab.models.schemas import (
    Activation,
    Baseline,
    DataSpec,
    EvalReport,
    ExpansionEstimate,
    ExperimentConfig,
    LabelMode,
    Lemma1Report,
    LossMode,
    Modality,
    OptimizerHypers,
    OptimizerKind,
    ResultRow,
    RunManifest,
    RunStatus,
    SeedResult,
    SweepSpec,
    TheoryRow,
    TheorySpec,
    TrainingLogEntry,
    Transform,
    TransformKind,
)

__all__ = [
    "Activation",
    "Baseline",
    "DataSpec",
    "EvalReport",
    "ExpansionEstimate",
    "ExperimentConfig",
    "LabelMode",
    "Lemma1Report",
    "LossMode",
    "Modality",
    "OptimizerHypers",
    "OptimizerKind",
    "ResultRow",
    "RunManifest",
    "RunStatus",
    "SeedResult",
    "SweepSpec",
    "TheoryRow",
    "TheorySpec",
    "TrainingLogEntry",
    "Transform",
    "TransformKind",
]
