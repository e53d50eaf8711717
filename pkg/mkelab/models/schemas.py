"""Pydantic schemas for the MKE laboratory."""

import hashlib
import json
import math
from datetime import datetime
from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from mkelab.config import settings


class Activation(str, Enum):
    """Hidden-layer nonlinearity."""
    TANH = "tanh"
    RELU = "relu"


class TransformKind(str, Enum):
    """Kind of perturbation applied by a Transform."""
    NONE = "none"
    INPUT_GAUSSIAN = "input_gaussian"
    HIDDEN_GAUSSIAN = "hidden_gaussian"
    DROPOUT = "dropout"
    COMPOSITE = "composite"


class Modality(str, Enum):
    """Observation channel of a TwoMoon point."""
    ALPHA = "alpha"  # X coordinate
    BETA = "beta"  # Y coordinate


class LabelMode(str, Enum):
    """Pseudo-label form handed to the student."""
    HARD = "hard"
    SOFT = "soft"


class LossMode(str, Enum):
    """Student objective: L_pl + gamma*L_reg, or the single perturbed term."""
    COMBINED = "combined"
    EQUIVALENT = "equivalent"


class Baseline(str, Enum):
    """Rows of the TwoMoon comparison."""
    UM_TEACHER = "um_teacher"
    UM_STUDENT = "um_student"
    NAIVE_PL = "naive_pl"
    NOISY_STUDENT_LITE = "noisy_student_lite"
    MM_STUDENT = "mm_student"
    MM_STUDENT_NOREG = "mm_student_noreg"
    MM_STUDENT_SUP = "mm_student_sup"

    @property
    def is_multimodal(self) -> bool:
        return self.value.startswith("mm_")


class OptimizerKind(str, Enum):
    """Parameter update rule."""
    SGD = "sgd"
    ADAM = "adam"


class RunStatus(str, Enum):
    """Status of one seed (or sweep task)."""
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class Transform(BaseModel):
    """Perturbation specification T used by the consistency regularizer.

    Only the parameters belonging to ``kind`` are read; ``components`` is
    used by composite transforms only.
    """
    kind: TransformKind = TransformKind.NONE
    v0: float = Field(default=0.0, ge=0.0)  # input noise variance
    v1: float = Field(default=0.0, ge=0.0)  # hidden noise variance
    layer_index: int = Field(default=0, ge=0)  # 0 = first hidden layer
    r0: float = Field(default=0.0, ge=0.0, lt=1.0)  # dropout rate
    components: list["Transform"] = Field(default_factory=list)

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _check_components(self) -> "Transform":
        if self.kind == TransformKind.COMPOSITE and not self.components:
            raise ValueError("composite transform needs at least one component")
        if self.kind != TransformKind.COMPOSITE and self.components:
            raise ValueError(f"components are only allowed for composite transforms, got kind={self.kind.value}")
        return self

    @classmethod
    def none(cls) -> "Transform":
        return cls(kind=TransformKind.NONE)

    @classmethod
    def input_gaussian(cls, v0: float) -> "Transform":
        return cls(kind=TransformKind.INPUT_GAUSSIAN, v0=v0)

    @classmethod
    def hidden_gaussian(cls, v1: float, layer_index: int = 0) -> "Transform":
        return cls(kind=TransformKind.HIDDEN_GAUSSIAN, v1=v1, layer_index=layer_index)

    @classmethod
    def dropout(cls, r0: float) -> "Transform":
        return cls(kind=TransformKind.DROPOUT, r0=r0)

    @classmethod
    def composite(cls, components: list["Transform"]) -> "Transform":
        return cls(kind=TransformKind.COMPOSITE, components=components)

    def flatten(self) -> list["Transform"]:
        """Return the leaf transforms (composites expanded, `none` dropped)."""
        if self.kind == TransformKind.COMPOSITE:
            leaves: list[Transform] = []
            for component in self.components:
                leaves.extend(component.flatten())
            return leaves
        if self.kind == TransformKind.NONE:
            return []
        return [self]


class DataSpec(BaseModel):
    """TwoMoon generation and split sizes.

    The geometry knobs are in unit-arc coordinates: the lower arc is
    (shift - cos t, 0.5 - sin t - gap) and every point is multiplied by
    scale afterwards. The defaults give the standard interleaving moons.
    """
    n: int = Field(default_factory=lambda: settings.N_SAMPLES, ge=2)
    noise_std: float = Field(default_factory=lambda: settings.NOISE_STD, ge=0.0)
    scale: float = Field(default_factory=lambda: settings.MOON_SCALE, gt=0.0)
    shift: float = Field(default_factory=lambda: settings.MOON_SHIFT)
    gap: float = Field(default_factory=lambda: settings.MOON_GAP, ge=0.0)
    n_labeled: int = Field(default_factory=lambda: settings.SPLIT_LABELED, ge=2)
    n_unlabeled: int = Field(default_factory=lambda: settings.SPLIT_UNLABELED, ge=0)
    n_test: int = Field(default_factory=lambda: settings.SPLIT_TEST, ge=0)

    @model_validator(mode="after")
    def _check_sizes(self) -> "DataSpec":
        total = self.n_labeled + self.n_unlabeled + self.n_test
        if total != self.n:
            raise ValueError(f"split sizes sum to {total} but n={self.n}")
        return self


class OptimizerHypers(BaseModel):
    """Learning parameters for optimizer_step."""
    kind: OptimizerKind = Field(default_factory=lambda: OptimizerKind(settings.OPTIMIZER))
    learning_rate: float = Field(default_factory=lambda: settings.LEARNING_RATE, gt=0.0)
    beta1: float = Field(default_factory=lambda: settings.BETA1, ge=0.0, lt=1.0)
    beta2: float = Field(default_factory=lambda: settings.BETA2, ge=0.0, lt=1.0)
    eps: float = Field(default_factory=lambda: settings.ADAM_EPS, gt=0.0)


class TheorySpec(BaseModel):
    """Parameters of the expansion-theory checks."""
    radius: float = Field(default_factory=lambda: settings.EXPANSION_RADIUS, gt=0.0)
    budget: int = Field(default_factory=lambda: settings.EXPANSION_BUDGET, ge=0)
    mu_draws: int = Field(default_factory=lambda: settings.MU_DRAWS, ge=1)
    slack: float = Field(default_factory=lambda: settings.LEMMA1_SLACK, gt=0.0, le=1.0)


class SweepSpec(BaseModel):
    """Sweep axes: transform kinds x strengths x baselines."""
    transforms: list[TransformKind] = Field(min_length=1)
    strengths: dict[TransformKind, list[float]]
    baselines: list[Baseline] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_axes(self) -> "SweepSpec":
        for kind in self.transforms:
            if kind in (TransformKind.NONE, TransformKind.COMPOSITE):
                raise ValueError(f"sweep transform must be a single parametrized kind, got {kind.value}")
            if not self.strengths.get(kind):
                raise ValueError(f"no strengths given for transform {kind.value}")
        return self


class ExperimentConfig(BaseModel):
    """Full description of one experiment row (all seeds)."""
    data: DataSpec = Field(default_factory=DataSpec)
    seed: int = Field(default=0, ge=0)
    num_seeds: int = Field(default_factory=lambda: settings.NUM_SEEDS, ge=1)
    activation: Activation = Activation.TANH
    teacher_hidden: list[int] = Field(default_factory=lambda: [32, 32])
    student_hidden: Optional[list[int]] = None  # None: [32, 32] unimodal, [16, 16] multimodal
    modalities: Optional[list[Modality]] = None  # None: derived from the baseline
    transform: Transform = Field(default_factory=Transform.none)
    label_mode: LabelMode = LabelMode.SOFT
    gamma: float = Field(default=1.0, ge=0.0)
    loss_mode: LossMode = LossMode.EQUIVALENT
    confidence_weighting: bool = False
    baseline: Baseline = Baseline.MM_STUDENT
    optimizer: OptimizerHypers = Field(default_factory=OptimizerHypers)
    epochs: int = Field(default_factory=lambda: settings.EPOCHS, ge=0)
    teacher_epochs: Optional[int] = Field(default=None, ge=0)  # None: same as epochs
    teacher_optimizer: Optional[OptimizerHypers] = None  # None: same as optimizer
    theory: TheorySpec = Field(default_factory=TheorySpec)
    sweep: Optional[SweepSpec] = None

    @field_validator("teacher_hidden", "student_hidden")
    @classmethod
    def _check_hidden(cls, value: Optional[list[int]]) -> Optional[list[int]]:
        if value is not None and any(size < 1 for size in value):
            raise ValueError("hidden layer sizes must be >= 1")
        return value

    @model_validator(mode="after")
    def _check_invariants(self) -> "ExperimentConfig":
        if self.confidence_weighting and self.label_mode != LabelMode.SOFT:
            raise ValueError("confidence_weighting requires label_mode=soft")
        if self.modalities is not None:
            required = self.required_modalities(self.baseline)
            if set(self.modalities) != set(required):
                names = ",".join(m.value for m in required)
                raise ValueError(f"baseline {self.baseline.value} requires modalities {{{names}}}")
        return self

    @staticmethod
    def required_modalities(baseline: Baseline) -> list[Modality]:
        if baseline.is_multimodal:
            return [Modality.ALPHA, Modality.BETA]
        return [Modality.ALPHA]

    @property
    def student_modalities(self) -> list[Modality]:
        return self.required_modalities(self.baseline)

    @property
    def teacher_layer_sizes(self) -> list[int]:
        return [1, *self.teacher_hidden, 2]

    @property
    def student_layer_sizes(self) -> list[int]:
        modalities = self.student_modalities
        hidden = self.student_hidden
        if hidden is None:
            hidden = [16, 16] if len(modalities) == 2 else [32, 32]
        return [len(modalities), *hidden, 2]

    @property
    def teacher_training(self) -> tuple[OptimizerHypers, int]:
        """Optimizer and epoch count used for the teacher."""
        optimizer = self.teacher_optimizer if self.teacher_optimizer is not None else self.optimizer
        epochs = self.teacher_epochs if self.teacher_epochs is not None else self.epochs
        return optimizer, epochs

    @property
    def seeds(self) -> list[int]:
        return list(range(self.seed, self.seed + self.num_seeds))

    def config_hash(self) -> str:
        """Hash that is stable across reordering of config keys."""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def teacher_hash(self) -> str:
        """Hash of everything the data and the teacher of a seed depend on."""
        optimizer, epochs = self.teacher_training
        payload = json.dumps(
            {
                "data": self.data.model_dump(mode="json"),
                "activation": self.activation.value,
                "teacher_hidden": self.teacher_hidden,
                "optimizer": optimizer.model_dump(mode="json"),
                "epochs": epochs,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class TrainingLogEntry(BaseModel):
    """Loss terms recorded for one epoch."""
    epoch: int
    loss: float
    pl_loss: float
    reg_loss: float = 0.0


class EvalReport(BaseModel):
    """Classification quality on a labeled test set."""
    accuracy: float = Field(ge=0.0, le=1.0)
    err: float = Field(ge=0.0, le=1.0)
    per_class_accuracy: list[Optional[float]]  # None for classes absent from the test set
    confusion: list[list[int]]  # confusion[true][predicted]
    n: int


class SeedResult(BaseModel):
    """Outcome of one seed's pipeline."""
    seed: int
    status: RunStatus
    teacher_acc: Optional[float] = None
    student_acc: Optional[float] = None
    error: Optional[str] = None


def _mean_std(values: list[float]) -> tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


class ResultRow(BaseModel):
    """One (baseline, transform, strength) row with per-seed accuracies."""
    baseline: Baseline
    transform: TransformKind
    strength: float
    label_mode: LabelMode
    config_hash: str
    seeds: list[SeedResult]

    @property
    def failed(self) -> bool:
        return any(s.status == RunStatus.FAILED for s in self.seeds)

    @property
    def teacher_mean_std(self) -> tuple[Optional[float], Optional[float]]:
        return _mean_std([s.teacher_acc for s in self.seeds if s.teacher_acc is not None])

    @property
    def student_mean_std(self) -> tuple[Optional[float], Optional[float]]:
        return _mean_std([s.student_acc for s in self.seeds if s.student_acc is not None])


class RunManifest(BaseModel):
    """Append-only record of one CLI invocation."""
    config_hash: str
    seeds: list[int]
    output_dir: str
    tool_version: str
    timestamp: datetime


class ExpansionEstimate(BaseModel):
    """Empirical (a_bar, c) expansion of one class."""
    class_index: int
    a_bar: float = Field(gt=0.0, le=1.0)
    c_hat: float = Field(ge=0.0)
    subsets_checked: int
    witness: list[int]  # argmin subset (point indices); empty when capped
    exhaustive: bool
    capped: bool  # no admissible subset had a neighborhood below full measure


class Lemma1Report(BaseModel):
    """Product-expansion check on X^alpha x X^beta."""
    c1_hat: float
    c2_hat: float
    c_prod_hat: float
    c_rect_hat: float  # rectangles V_alpha x V_beta only, capped at 1/a_bar**2
    a_bar: float
    slack: float
    passed: bool


class TheoryRow(BaseModel):
    """One line of the theory report CSV."""
    instance: str
    c1_hat: float
    c2_hat: float
    c_prod_hat: float
    a_bar: float
    err_teacher: Optional[float] = None
    err_student: Optional[float] = None
    mu_hat: Optional[float] = None
    bound_mm: Optional[float] = None  # None when c1*c2 <= 1
    bound_um: Optional[float] = None  # None when c1 <= 1
    lemma1_pass: bool = True
    c_rect_hat: Optional[float] = None
