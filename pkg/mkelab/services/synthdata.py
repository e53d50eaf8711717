"""TwoMoon data generation, modality projection and dataset splitting.

Modality alpha observes the X coordinate of a point, modality beta the Y
coordinate. The unlabeled multimodal set carries no labels at all: its
ground truth is kept in a separate ``UnlabeledOracle`` that only
evaluation and theory code receive.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator
from sklearn.datasets import make_moons

from mkelab.config import settings
from mkelab.models.schemas import LabelMode, Modality


logger = logging.getLogger(__name__)

NUM_CLASSES = 2
BOTH = "both"


class SynthDataError(Exception):
    """Base exception for synthetic data errors."""
    pass


class InvalidSizeError(SynthDataError):
    """Raised for an invalid sample count."""
    pass


class SplitError(SynthDataError):
    """Raised when split sizes are inconsistent with the data."""
    pass


class DegenerateSplitError(SplitError):
    """Raised when no shuffle puts every class into the labeled set."""
    pass


class Sample2D(BaseModel):
    """One TwoMoon point: x is modality alpha, y is modality beta."""
    x: float
    y: float
    label: int = Field(ge=0, le=NUM_CLASSES - 1)

    @field_validator("x", "y")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("coordinates must be finite")
        return value


def _stack(x_alpha: np.ndarray, x_beta: np.ndarray, modalities: Iterable[Modality]) -> np.ndarray:
    columns = []
    for modality in modalities:
        columns.append(x_alpha if Modality(modality) == Modality.ALPHA else x_beta)
    return np.column_stack(columns).astype(np.float64)


@dataclass
class LabeledUnimodal:
    """D_l: modality-alpha coordinates with true labels."""
    x_alpha: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.x_alpha) == 0:
            raise SynthDataError("labeled set must be non-empty")
        if len(self.x_alpha) != len(self.labels):
            raise SynthDataError("labeled set has mismatched coordinates and labels")

    def __len__(self) -> int:
        return len(self.x_alpha)

    def inputs(self) -> np.ndarray:
        return self.x_alpha.reshape(-1, 1).astype(np.float64)


@dataclass
class UnlabeledMultimodal:
    """D_u: both coordinates, no labels."""
    x_alpha: np.ndarray
    x_beta: np.ndarray

    def __len__(self) -> int:
        return len(self.x_alpha)

    def inputs(self, modalities: Iterable[Modality]) -> np.ndarray:
        return _stack(self.x_alpha, self.x_beta, modalities)


@dataclass
class UnlabeledOracle:
    """Ground truth of D_u, for evaluation and theory checks only."""
    labels: np.ndarray


@dataclass
class LabeledMultimodal:
    """Test set: both coordinates and true labels."""
    x_alpha: np.ndarray
    x_beta: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.x_alpha)

    def inputs(self, modalities: Iterable[Modality]) -> np.ndarray:
        return _stack(self.x_alpha, self.x_beta, modalities)

    @classmethod
    def from_unlabeled(cls, d_u: UnlabeledMultimodal, oracle: UnlabeledOracle) -> "LabeledMultimodal":
        """Oracle view of D_u with its hidden labels attached."""
        return cls(d_u.x_alpha, d_u.x_beta, oracle.labels)


@dataclass
class PseudoLabeledMultimodal:
    """D~_u: both coordinates with teacher-provided targets (one row per sample)."""
    x_alpha: np.ndarray
    x_beta: np.ndarray
    targets: np.ndarray
    mode: LabelMode

    def __len__(self) -> int:
        return len(self.x_alpha)

    def inputs(self, modalities: Iterable[Modality]) -> np.ndarray:
        return _stack(self.x_alpha, self.x_beta, modalities)


@dataclass
class DatasetSplit:
    """Disjoint labeled / unlabeled / test partition of one generated dataset."""
    labeled: LabeledUnimodal
    unlabeled: UnlabeledMultimodal
    test: LabeledMultimodal
    oracle: UnlabeledOracle
    labeled_beta: np.ndarray  # kept for export and plots only; never a training input

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.labeled), len(self.unlabeled), len(self.test)


def twomoon_generate(
    n: int,
    noise_std: float,
    seed: int,
    scale: float = 1.0,
    shift: float = 1.0,
    gap: float = 0.0,
) -> list[Sample2D]:
    """
    Generate two half circles with sklearn's make_moons.

    ceil(n/2) points lie on the upper moon (cos t, sin t) with label 0 and
    floor(n/2) on the lower moon (1 - cos t, 0.5 - sin t) with label 1,
    t evenly spaced in [0, pi], plus isotropic Gaussian noise. The lower
    moon is then moved to (shift - cos t, 0.5 - sin t - gap) and all
    points are multiplied by `scale`; the defaults leave the standard
    interleaving moons untouched. Noise is drawn in unit-arc coordinates,
    so it scales with the moons.

    Args:
        n: Number of samples (>= 2)
        noise_std: Standard deviation of the additive noise (>= 0)
        seed: Generation seed
        scale: Overall size of both moons (> 0)
        shift: Horizontal offset of the lower moon
        gap: Extra downward offset of the lower moon (>= 0)

    Returns:
        List of Sample2D, upper moon first

    Raises:
        InvalidSizeError: If n < 2, noise_std < 0, scale <= 0 or gap < 0
    """
    if n < 2:
        raise InvalidSizeError(f"need at least 2 samples, got n={n}")
    if noise_std < 0:
        raise InvalidSizeError(f"noise_std must be >= 0, got {noise_std}")
    if scale <= 0 or gap < 0:
        raise InvalidSizeError(f"need scale > 0 and gap >= 0, got scale={scale}, gap={gap}")

    points, labels = make_moons(
        n_samples=((n + 1) // 2, n // 2),
        shuffle=False,
        noise=noise_std,
        random_state=seed,
    )
    lower = labels == 1
    points[lower, 0] += shift - 1.0
    points[lower, 1] -= gap
    points *= scale

    return [Sample2D(x=float(x), y=float(y), label=int(c)) for (x, y), c in zip(points, labels)]


def split(
    data: list[Sample2D],
    n_l: int,
    n_u: int,
    n_test: int,
    seed: int,
    max_retries: int | None = None,
) -> DatasetSplit:
    """
    Shuffle and partition samples into D_l, D_u and D_test.

    Reshuffles (up to `max_retries` times) until D_l contains every class.

    Raises:
        SplitError: If the sizes do not add up to len(data) or n_l < 2
        DegenerateSplitError: If class coverage of D_l cannot be reached
    """
    if n_l + n_u + n_test != len(data):
        raise SplitError(f"split sizes {n_l}+{n_u}+{n_test} != {len(data)} samples")
    if n_l < 2 or n_u < 0 or n_test < 0:
        raise SplitError(f"invalid split sizes ({n_l}, {n_u}, {n_test}); need n_l >= 2")

    retries = max_retries if max_retries is not None else settings.SPLIT_MAX_RETRIES
    points = np.array([project(s, BOTH) for s in data]).reshape(len(data), 2)
    xs, ys = points[:, 0], points[:, 1]
    labels = np.array([s.label for s in data], dtype=int)
    classes = set(range(NUM_CLASSES))

    rng = np.random.default_rng(seed)
    for attempt in range(retries):
        order = rng.permutation(len(data))
        lab = order[:n_l]
        if set(labels[lab].tolist()) == classes:
            if attempt > 0:
                logger.info(f"Split needed {attempt + 1} shuffles for class coverage")
            unl = order[n_l:n_l + n_u]
            tst = order[n_l + n_u:]
            return DatasetSplit(
                labeled=LabeledUnimodal(xs[lab], labels[lab]),
                unlabeled=UnlabeledMultimodal(xs[unl], ys[unl]),
                test=LabeledMultimodal(xs[tst], ys[tst], labels[tst]),
                oracle=UnlabeledOracle(labels[unl]),
                labeled_beta=ys[lab],
            )

    raise DegenerateSplitError(f"labeled set missed a class in {retries} shuffles")


def project(sample: Sample2D, modality: Union[Modality, str]) -> np.ndarray:
    """Observation of `sample` through modality alpha ([x]), beta ([y]) or both ([x, y])."""
    if modality == BOTH:
        return np.array([sample.x, sample.y])
    if Modality(modality) == Modality.ALPHA:
        return np.array([sample.x])
    return np.array([sample.y])
