"""Perturbation transforms T and the consistency-regularization loss L_reg."""

import logging
from dataclasses import dataclass

import numpy as np

from mkelab.models.schemas import Transform, TransformKind
from mkelab.services import netcore
from mkelab.services.netcore import MLP, Gradients, Tape


logger = logging.getLogger(__name__)

# Below this distance the L2 norm is treated as flat (its gradient is undefined at 0).
DISTANCE_FLOOR = 1e-12


class PerturbError(Exception):
    """Base exception for perturbation errors."""
    pass


class InvalidTransformError(PerturbError):
    """Raised when a transform does not fit the target network."""
    pass


@dataclass
class RegLoss:
    """Value of L_reg on a batch and its gradients through both branches."""
    value: float  # mean over samples
    per_sample: np.ndarray
    clean_probs: np.ndarray
    perturbed_probs: np.ndarray
    clean_tape: Tape
    perturbed_tape: Tape
    grads: Gradients


def validate_transform(mlp: MLP, t: Transform) -> None:
    """
    Check that a transform can be applied to `mlp`.

    Raises:
        InvalidTransformError: If a hidden layer_index is outside the
            network's hidden layers
    """
    for leaf in t.flatten():
        if leaf.kind == TransformKind.HIDDEN_GAUSSIAN and leaf.layer_index >= mlp.num_hidden_layers:
            raise InvalidTransformError(
                f"hidden_gaussian layer_index={leaf.layer_index} but the network "
                f"has {mlp.num_hidden_layers} hidden layers"
            )
        if leaf.kind == TransformKind.DROPOUT and leaf.r0 > 0.0 and mlp.num_hidden_layers == 0:
            raise InvalidTransformError("dropout needs at least one hidden layer")


def make_transform(kind: TransformKind, strength: float) -> Transform:
    """Build the single-parameter transform a sweep row refers to."""
    kind = TransformKind(kind)
    if kind == TransformKind.INPUT_GAUSSIAN:
        return Transform.input_gaussian(strength)
    if kind == TransformKind.HIDDEN_GAUSSIAN:
        return Transform.hidden_gaussian(strength)
    if kind == TransformKind.DROPOUT:
        return Transform.dropout(strength)
    if kind == TransformKind.NONE:
        return Transform.none()
    raise InvalidTransformError(f"no single strength parameter for transform kind {kind.value}")


def strength_of(t: Transform) -> float:
    """Scalar strength (v0, v1 or r0) of a single-kind transform; 0 for none."""
    if t.kind == TransformKind.INPUT_GAUSSIAN:
        return t.v0
    if t.kind == TransformKind.HIDDEN_GAUSSIAN:
        return t.v1
    if t.kind == TransformKind.DROPOUT:
        return t.r0
    if t.kind == TransformKind.NONE:
        return 0.0
    raise InvalidTransformError("composite transforms have no single strength")


def perturbed_forward(
    mlp: MLP,
    x,
    t: Transform,
    rng: np.random.Generator,
) -> tuple[np.ndarray, Tape]:
    """
    Forward pass in train mode with the perturbations of `t` applied.

    Args:
        mlp: Network
        x: One sample or a batch
        t: Transform; `none` gives the plain forward pass
        rng: Random stream for noise and dropout masks

    Returns:
        Tuple (logits, tape) with noise/masks recorded on the tape

    Raises:
        InvalidTransformError: If `t` does not fit the network
    """
    validate_transform(mlp, t)
    return netcore.forward(mlp, x, mode="train", perturbation=t, rng=rng)


def _softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. softmax outputs back to the logits."""
    inner = (grad_probs * probs).sum(axis=-1, keepdims=True)
    return probs * (grad_probs - inner)


def reg_loss(
    mlp: MLP,
    x,
    t: Transform,
    rng: np.random.Generator,
    weights=None,
) -> RegLoss:
    """
    Consistency loss between the clean and one perturbed softmax output.

    l_reg is the L2 distance between the two probability vectors; the
    gradient flows through both branches (no stop-gradient).

    Args:
        mlp: Network
        x: One sample or a batch
        t: Transform applied to the perturbed branch
        rng: Random stream (one perturbation draw per sample)
        weights: Optional per-sample weights for the mean

    Returns:
        RegLoss with the mean value, per-sample values and parameter gradients
    """
    clean_logits, clean_tape = netcore.forward(mlp, x, mode="train")
    pert_logits, pert_tape = perturbed_forward(mlp, x, t, rng)

    z_clean = netcore.softmax(clean_logits)
    z_pert = netcore.softmax(pert_logits)
    single = z_clean.ndim == 1
    zc = z_clean[None, :] if single else z_clean
    zp = z_pert[None, :] if single else z_pert

    dist = netcore.l2_distance(zc, zp)
    n = zc.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).reshape(n)

    # d||zc - zp|| / dzc = (zc - zp) / ||zc - zp||, and the negative for zp
    safe = np.where(dist > DISTANCE_FLOOR, dist, 1.0)
    unit = np.where((dist > DISTANCE_FLOOR)[:, None], (zc - zp) / safe[:, None], 0.0)
    coeff = (w / n)[:, None]
    up_clean = _softmax_backward(zc, coeff * unit)
    up_pert = _softmax_backward(zp, -coeff * unit)
    if single:
        up_clean, up_pert = up_clean[0], up_pert[0]

    grads = netcore.backward(mlp, clean_tape, up_clean) + netcore.backward(mlp, pert_tape, up_pert)
    value = float((w * dist).sum() / n)
    return RegLoss(
        value=value,
        per_sample=dist,
        clean_probs=z_clean,
        perturbed_probs=z_pert,
        clean_tape=clean_tape,
        perturbed_tape=pert_tape,
        grads=grads,
    )
