"""Multimodal knowledge expansion pipeline and its baselines.

A unimodal teacher is trained on the labeled modality-alpha data, labels
the unlabeled multimodal data, and a student (unimodal or multimodal,
depending on the baseline) is trained on those pseudo labels with
consistency regularization.
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional

import numpy as np

from mkelab.config import settings
from mkelab.models.schemas import (
    Baseline,
    EvalReport,
    ExperimentConfig,
    LabelMode,
    LossMode,
    Modality,
    OptimizerHypers,
    RunStatus,
    SeedResult,
    TrainingLogEntry,
    Transform,
    TransformKind,
)
from mkelab.services import netcore, perturb
from mkelab.services.netcore import MLP, NetcoreError
from mkelab.services.synthdata import (
    DatasetSplit,
    LabeledUnimodal,
    PseudoLabeledMultimodal,
    UnlabeledMultimodal,
    UnlabeledOracle,
    split,
    twomoon_generate,
)


logger = logging.getLogger(__name__)

LOG_EVERY = 500


class MKEError(Exception):
    """Base exception for pipeline errors."""
    pass


class TrainingError(MKEError):
    """Raised when training diverges or has nothing to train on."""
    pass


class ConfigError(MKEError):
    """Raised for an inconsistent experiment configuration."""
    pass


class EvalError(MKEError):
    """Raised when evaluation is impossible."""
    pass


class Stream(IntEnum):
    """Independent random streams derived from one run seed."""
    DATA = 1
    SPLIT = 2
    TEACHER_INIT = 3
    TEACHER_TRAIN = 4
    STUDENT_INIT = 5
    STUDENT_TRAIN = 6
    THEORY = 7


def derive_seed(seed: int, stream: Stream) -> int:
    """Seed of one pipeline stage; stages never share random draws."""
    return int(np.random.SeedSequence([seed, int(stream)]).generate_state(1)[0])


def derive_rng(seed: int, stream: Stream) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, stream))


@dataclass
class TrainedModel:
    """A trained network with the modalities it consumes."""
    mlp: MLP
    modalities: tuple[Modality, ...]
    log: list[TrainingLogEntry] = field(default_factory=list)

    def __post_init__(self):
        self.modalities = tuple(Modality(m) for m in self.modalities)
        if self.mlp.input_dim != len(self.modalities):
            raise ConfigError(
                f"network input dim {self.mlp.input_dim} does not match modalities "
                f"{[m.value for m in self.modalities]}"
            )

    @property
    def is_unimodal(self) -> bool:
        return self.modalities == (Modality.ALPHA,)

    def project(self, data) -> np.ndarray:
        """Inputs of `data` as seen through this model's modalities."""
        if isinstance(data, LabeledUnimodal):
            if not self.is_unimodal:
                raise ConfigError("labeled unimodal data only carries modality alpha")
            return data.inputs()
        if hasattr(data, "inputs"):
            return data.inputs(self.modalities)
        return np.asarray(data, dtype=np.float64)

    def logits(self, data) -> np.ndarray:
        logits, _ = netcore.forward(self.mlp, self.project(data), mode="eval")
        return logits

    def predict(self, data) -> np.ndarray:
        return netcore.predict(self.mlp, self.project(data))

    def predict_proba(self, data) -> np.ndarray:
        return netcore.predict_proba(self.mlp, self.project(data))


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), np.asarray(labels, dtype=int)] = 1.0
    return out


def _fit(
    mlp: MLP,
    x: np.ndarray,
    targets: np.ndarray,
    optimizer: OptimizerHypers,
    epochs: int,
    rng: np.random.Generator,
    transform: Transform,
    gamma: float,
    loss_mode: LossMode,
    weights: Optional[np.ndarray],
    label: str,
) -> list[TrainingLogEntry]:
    """Full-batch training loop shared by teacher and students."""
    n = x.shape[0]
    if n == 0:
        raise TrainingError(f"{label}: empty training set")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    perturbed = bool(transform.flatten())
    state = netcore.OptState.for_mlp(mlp)
    log: list[TrainingLogEntry] = []

    for epoch in range(epochs):
        try:
            if loss_mode == LossMode.EQUIVALENT and perturbed:
                logits, tape = perturb.perturbed_forward(mlp, x, transform, rng)
            else:
                logits, tape = netcore.forward(mlp, x, mode="train")
            per_sample = netcore.cls_loss(targets, logits)
            pl_loss = float((w * per_sample).sum() / n)
            upstream = (w / n)[:, None] * netcore.cls_loss_grad(targets, logits)
            grads = netcore.backward(mlp, tape, upstream)

            reg_value = 0.0
            if loss_mode == LossMode.COMBINED and perturbed and gamma > 0.0:
                reg = perturb.reg_loss(mlp, x, transform, rng)
                reg_value = reg.value
                grads = grads + reg.grads.scaled(gamma)

            loss = pl_loss + gamma * reg_value
            if not np.isfinite(loss) or not grads.is_finite():
                raise TrainingError(f"{label}: non-finite loss at epoch {epoch}")
            netcore.optimizer_step(mlp, grads, state, optimizer)
        except NetcoreError as e:
            raise TrainingError(f"{label}: training diverged at epoch {epoch}: {e}") from e

        log.append(TrainingLogEntry(epoch=epoch, loss=loss, pl_loss=pl_loss, reg_loss=reg_value))
        if epoch % LOG_EVERY == 0 or epoch == epochs - 1:
            logger.debug(f"{label}: epoch {epoch} loss={loss:.6f} pl={pl_loss:.6f} reg={reg_value:.6f}")

    return log


def train_teacher(d_l: LabeledUnimodal, cfg: ExperimentConfig, seed: Optional[int] = None) -> TrainedModel:
    """
    Train the unimodal teacher on the labeled modality-alpha data.

    Minimizes the mean classification loss over D_l with the teacher
    optimizer and epoch count (cfg.teacher_training), full batch. A
    final training accuracy below Settings.MIN_TEACHER_TRAIN_ACCURACY is
    logged as a warning: the alpha coordinate alone does not separate
    the moons.

    Args:
        d_l: Labeled unimodal set
        cfg: Experiment configuration
        seed: Run seed (defaults to cfg.seed)

    Returns:
        TrainedModel on modality alpha

    Raises:
        TrainingError: If training diverges
        ConfigError: If d_l misses a class
    """
    seed = cfg.seed if seed is None else seed
    classes = set(np.asarray(d_l.labels).tolist())
    if classes != {0, 1}:
        raise ConfigError(f"teacher needs both classes in the labeled set, got {sorted(classes)}")

    mlp = netcore.mlp_new(cfg.teacher_layer_sizes, cfg.activation, derive_seed(seed, Stream.TEACHER_INIT))
    x = d_l.inputs()
    targets = _one_hot(d_l.labels, mlp.num_classes)
    optimizer, epochs = cfg.teacher_training
    log = _fit(
        mlp, x, targets, optimizer, epochs,
        rng=derive_rng(seed, Stream.TEACHER_TRAIN),
        transform=Transform.none(),
        gamma=0.0,
        loss_mode=LossMode.COMBINED,
        weights=None,
        label="teacher",
    )
    teacher = TrainedModel(mlp, (Modality.ALPHA,), log)

    if epochs > 0:
        train_acc = float(np.mean(teacher.predict(d_l) == d_l.labels))
        if train_acc < settings.MIN_TEACHER_TRAIN_ACCURACY:
            logger.warning(
                f"Teacher training accuracy {train_acc:.3f} is below "
                f"{settings.MIN_TEACHER_TRAIN_ACCURACY:.2f} (seed {seed})"
            )
        else:
            logger.info(f"Teacher trained: training accuracy {train_acc:.3f} (seed {seed})")
    return teacher


def pseudo_label(teacher: TrainedModel, d_u: UnlabeledMultimodal, mode: LabelMode) -> PseudoLabeledMultimodal:
    """
    Label D_u with the teacher's predictions on its alpha coordinates.

    Soft labels are the teacher's softmax outputs; hard labels are the
    one-hot argmax with exact ties going to the lower class index.

    Raises:
        ConfigError: If the teacher is not a modality-alpha model
    """
    if not teacher.is_unimodal:
        raise ConfigError("pseudo labels come from a modality-alpha teacher")
    mode = LabelMode(mode)
    k = teacher.mlp.num_classes
    if len(d_u) == 0:
        targets = np.zeros((0, k))
    else:
        logits, _ = netcore.forward(teacher.mlp, d_u.inputs([Modality.ALPHA]), mode="eval")
        if mode == LabelMode.SOFT:
            targets = netcore.softmax(logits)
        else:
            targets = _one_hot(np.argmax(logits, axis=-1), k)
    logger.info(f"Pseudo labels produced: {len(d_u)} samples, mode={mode.value}")
    return PseudoLabeledMultimodal(d_u.x_alpha, d_u.x_beta, targets, mode)


def confidence_weights(labels) -> np.ndarray:
    """omega = 1 - H(y)/log K per row, in [0, 1]; uniform rows give 0, one-hot rows 1."""
    y = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    k = y.shape[1]
    entropy = -np.where(y > 0.0, y * np.log(np.maximum(y, netcore.LOG_CLIP)), 0.0).sum(axis=1)
    return np.clip(1.0 - entropy / np.log(k), 0.0, 1.0)


@dataclass
class StudentPlan:
    """What a baseline trains on and how it is regularized."""
    modalities: tuple[Modality, ...]
    transform: Transform
    gamma: float
    loss_mode: LossMode
    uses_true_labels: bool = False
    includes_labeled: bool = False


def student_plan(cfg: ExperimentConfig) -> StudentPlan:
    """Resolve the training recipe of cfg.baseline."""
    baseline = cfg.baseline
    modalities = tuple(cfg.student_modalities)
    if baseline == Baseline.UM_TEACHER:
        raise ConfigError("um_teacher has no student")
    if baseline in (Baseline.NAIVE_PL, Baseline.MM_STUDENT_NOREG):
        return StudentPlan(modalities, Transform.none(), 0.0, cfg.loss_mode)
    if baseline == Baseline.NOISY_STUDENT_LITE:
        transform = cfg.transform
        if not transform.flatten():
            transform = Transform.dropout(settings.NOISY_STUDENT_DROPOUT)
        return StudentPlan(modalities, transform, cfg.gamma, LossMode.EQUIVALENT, includes_labeled=True)
    return StudentPlan(
        modalities,
        cfg.transform,
        cfg.gamma,
        cfg.loss_mode,
        uses_true_labels=baseline == Baseline.MM_STUDENT_SUP,
    )


def train_student(
    d_pl: PseudoLabeledMultimodal,
    cfg: ExperimentConfig,
    seed: Optional[int] = None,
    oracle: Optional[UnlabeledOracle] = None,
    d_l: Optional[LabeledUnimodal] = None,
) -> TrainedModel:
    """
    Train the student selected by cfg.baseline on the pseudo-labeled set.

    Combined mode minimizes L_pl + gamma * L_reg; equivalent mode
    minimizes the classification loss on the perturbed forward pass.
    With confidence weighting each sample's L_pl term is scaled by omega.

    Args:
        d_pl: Pseudo-labeled unlabeled set
        cfg: Experiment configuration
        seed: Run seed (defaults to cfg.seed)
        oracle: True labels of D_u, required by mm_student_sup only
        d_l: Labeled set, required by noisy_student_lite only

    Returns:
        TrainedModel over the baseline's modalities

    Raises:
        ConfigError: If the baseline's inputs are missing or the labels do
            not fit the configuration
        TrainingError: If training diverges
    """
    seed = cfg.seed if seed is None else seed
    plan = student_plan(cfg)
    if cfg.confidence_weighting and d_pl.mode != LabelMode.SOFT:
        raise ConfigError("confidence weighting needs soft pseudo labels")

    mlp = netcore.mlp_new(cfg.student_layer_sizes, cfg.activation, derive_seed(seed, Stream.STUDENT_INIT))
    x = d_pl.inputs(plan.modalities)
    targets = d_pl.targets

    if plan.uses_true_labels:
        if oracle is None:
            raise ConfigError(f"{cfg.baseline.value} needs the true labels of the unlabeled set")
        targets = _one_hot(oracle.labels, mlp.num_classes)
    if plan.includes_labeled:
        if d_l is None:
            raise ConfigError(f"{cfg.baseline.value} needs the labeled set")
        x = np.vstack([d_l.inputs(), x])
        targets = np.vstack([_one_hot(d_l.labels, mlp.num_classes), targets])

    weights = confidence_weights(targets) if cfg.confidence_weighting else None
    log = _fit(
        mlp, x, targets, cfg.optimizer, cfg.epochs,
        rng=derive_rng(seed, Stream.STUDENT_TRAIN),
        transform=plan.transform,
        gamma=plan.gamma,
        loss_mode=plan.loss_mode,
        weights=weights,
        label=cfg.baseline.value,
    )
    return TrainedModel(mlp, plan.modalities, log)


def evaluate(model: TrainedModel, test) -> EvalReport:
    """
    Accuracy, per-class accuracy and confusion counts on a labeled set.

    Raises:
        EvalError: If the test set is empty
    """
    labels = np.asarray(test.labels, dtype=int)
    n = len(labels)
    if n == 0:
        raise EvalError("cannot evaluate on an empty test set")

    preds = model.predict(test)
    k = model.mlp.num_classes
    confusion = np.zeros((k, k), dtype=int)
    np.add.at(confusion, (labels, preds), 1)
    correct = int(np.trace(confusion))
    accuracy = correct / n

    per_class: list[Optional[float]] = []
    for c in range(k):
        total = int(confusion[c].sum())
        per_class.append(confusion[c, c] / total if total else None)

    return EvalReport(
        accuracy=accuracy,
        err=(n - correct) / n,
        per_class_accuracy=per_class,
        confusion=confusion.tolist(),
        n=n,
    )


def agreement_rate(model_a: TrainedModel, model_b: TrainedModel, test) -> float:
    """Fraction of samples on which two models predict the same class."""
    if len(test) == 0:
        raise EvalError("cannot compare predictions on an empty set")
    return float(np.mean(model_a.predict(test) == model_b.predict(test)))


@dataclass
class SeedRun:
    """Everything one seed's pipeline produced."""
    seed: int
    data: DatasetSplit
    teacher: TrainedModel
    teacher_report: EvalReport
    student: Optional[TrainedModel]
    student_report: EvalReport


@dataclass
class TeacherStage:
    """Data, teacher and pseudo labels of one seed, shared by every student row.

    The data split and the teacher depend only on cfg.teacher_hash() and
    the seed, so a sweep trains one teacher per seed and reuses it for
    every (transform, strength, baseline) row.
    """
    seed: int
    key: str
    data: DatasetSplit
    teacher: TrainedModel
    teacher_report: EvalReport
    _pseudo: dict[LabelMode, PseudoLabeledMultimodal] = field(default_factory=dict, repr=False)

    def pseudo_labels(self, mode: LabelMode) -> PseudoLabeledMultimodal:
        mode = LabelMode(mode)
        if mode not in self._pseudo:
            self._pseudo[mode] = pseudo_label(self.teacher, self.data.unlabeled, mode)
        return self._pseudo[mode]

    def serves(self, cfg: ExperimentConfig, seed: int) -> bool:
        return self.seed == seed and self.key == cfg.teacher_hash()


def prepare_data(cfg: ExperimentConfig, seed: int) -> DatasetSplit:
    """Generate and split the TwoMoon data of one seed."""
    spec = cfg.data
    samples = twomoon_generate(
        spec.n,
        spec.noise_std,
        derive_seed(seed, Stream.DATA),
        scale=spec.scale,
        shift=spec.shift,
        gap=spec.gap,
    )
    return split(
        samples,
        spec.n_labeled,
        spec.n_unlabeled,
        spec.n_test,
        derive_seed(seed, Stream.SPLIT),
    )


def prepare_teacher(cfg: ExperimentConfig, seed: int) -> TeacherStage:
    """generate -> split -> train_teacher -> evaluate, once per (teacher hash, seed)."""
    data = prepare_data(cfg, seed)
    teacher = train_teacher(data.labeled, cfg, seed=seed)
    report = evaluate(teacher, data.test)
    logger.info(f"Seed {seed}: teacher accuracy {report.accuracy:.4f}")
    return TeacherStage(seed, cfg.teacher_hash(), data, teacher, report)


def run_seed(cfg: ExperimentConfig, seed: int, stage: Optional[TeacherStage] = None) -> SeedRun:
    """
    pseudo_label -> train_student -> evaluate on top of a seed's teacher stage.

    Args:
        cfg: Row configuration
        seed: Run seed
        stage: Shared teacher stage; trained here when None

    Raises:
        ConfigError: If `stage` was built for another seed or teacher configuration
    """
    if stage is None:
        stage = prepare_teacher(cfg, seed)
    elif not stage.serves(cfg, seed):
        raise ConfigError(f"teacher stage of seed {stage.seed} does not match this row (seed {seed})")
    data = stage.data

    if cfg.baseline == Baseline.UM_TEACHER:
        student, student_report = None, stage.teacher_report
    else:
        d_pl = stage.pseudo_labels(cfg.label_mode)
        student = train_student(d_pl, cfg, seed=seed, oracle=data.oracle, d_l=data.labeled)
        student_report = evaluate(student, data.test)

    logger.info(
        f"Seed {seed} [{cfg.baseline.value}]: teacher={stage.teacher_report.accuracy:.4f} "
        f"student={student_report.accuracy:.4f}"
    )
    return SeedRun(seed, data, stage.teacher, stage.teacher_report, student, student_report)


def row_strength(t: Transform) -> float:
    """Strength column of a result row; composite transforms report 0."""
    if t.kind == TransformKind.COMPOSITE:
        return 0.0
    return perturb.strength_of(t)


def run_seed_result(
    cfg: ExperimentConfig,
    seed: int,
    stage: Optional[TeacherStage] = None,
    on_run: Optional[Callable[[SeedRun], None]] = None,
) -> SeedResult:
    """
    run_seed with failures captured as a failed SeedResult.

    `on_run` receives the finished SeedRun (used for checkpoints); an
    exception it raises fails the seed as well.
    """
    try:
        run = run_seed(cfg, seed, stage)
        if on_run is not None:
            on_run(run)
    except Exception as e:
        logger.error(f"Seed {seed} [{cfg.baseline.value}] failed: {e}", exc_info=True)
        return SeedResult(seed=seed, status=RunStatus.FAILED, error=str(e))
    return SeedResult(
        seed=seed,
        status=RunStatus.COMPLETED,
        teacher_acc=run.teacher_report.accuracy,
        student_acc=run.student_report.accuracy,
    )
