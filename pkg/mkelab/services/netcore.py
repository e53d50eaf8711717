"""Minimal dense neural-network engine.

Forward/backward passes with perturbation hooks, classification losses,
distances and an optimizer: everything the teacher and student
classifiers are built from. All arrays are float64; a batch is a matrix
with one sample per row, and a single 1-D sample is accepted wherever a
batch is.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from mkelab.models.schemas import (
    Activation,
    OptimizerHypers,
    OptimizerKind,
    Transform,
    TransformKind,
)


logger = logging.getLogger(__name__)

PROB_TOLERANCE = 1e-9
LOG_CLIP = 1e-12


class NetcoreError(Exception):
    """Base exception for netcore errors."""
    pass


class ArchitectureError(NetcoreError):
    """Raised for an invalid layer list."""
    pass


class ShapeError(NetcoreError):
    """Raised when array dimensions do not match."""
    pass


class NumericError(NetcoreError):
    """Raised for non-finite values or invalid probability vectors."""
    pass


class TapeError(NetcoreError):
    """Raised when a tape does not belong to the current parameters."""
    pass


class MLP:
    """Dense feed-forward classifier emitting raw logits.

    Weight matrix ``weights[l]`` has shape (layer_sizes[l+1], layer_sizes[l]).
    ``version`` is bumped whenever the parameters change so that tapes
    recorded before an update are rejected by ``backward``.
    """

    def __init__(
        self,
        layer_sizes: list[int],
        activation: Activation,
        seed: int,
        weights: list[np.ndarray],
        biases: list[np.ndarray],
    ):
        self.layer_sizes = list(layer_sizes)
        self.activation = Activation(activation)
        self.seed = seed
        self.weights = weights
        self.biases = biases
        self.version = 0

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_hidden_layers(self) -> int:
        return len(self.layer_sizes) - 2

    def copy(self) -> "MLP":
        """Deep copy of the parameters (version restarts at 0)."""
        return MLP(
            self.layer_sizes,
            self.activation,
            self.seed,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def __repr__(self) -> str:
        return f"MLP(layer_sizes={self.layer_sizes}, activation={self.activation.value}, seed={self.seed})"


@dataclass
class Tape:
    """Cached activations of one forward call."""
    mlp_id: int
    version: int
    single: bool
    layer_inputs: list[np.ndarray]  # input to each dense layer (after noise/dropout)
    hidden_clean: list[np.ndarray]  # activation output before noise/dropout
    pre_activations: list[np.ndarray]
    masks: list[Optional[np.ndarray]]  # dropout multiplier per hidden layer
    input_noise: Optional[np.ndarray] = None
    hidden_noise: list[Optional[np.ndarray]] = field(default_factory=list)


@dataclass
class Gradients:
    """Per-layer gradients mirroring the owning MLP's shapes."""
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, mlp: MLP) -> "Gradients":
        return cls(
            weights=[np.zeros_like(w) for w in mlp.weights],
            biases=[np.zeros_like(b) for b in mlp.biases],
        )

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(
            weights=[a + b for a, b in zip(self.weights, other.weights)],
            biases=[a + b for a, b in zip(self.biases, other.biases)],
        )

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(
            weights=[w * factor for w in self.weights],
            biases=[b * factor for b in self.biases],
        )

    def flat(self) -> np.ndarray:
        """Concatenate in the same order as ``flatten_params``."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (*self.weights, *self.biases))


@dataclass
class OptState:
    """Optimizer moments and step counter."""
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def for_mlp(cls, mlp: MLP) -> "OptState":
        params = [*mlp.weights, *mlp.biases]
        return cls(
            step=0,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def mlp_new(layer_sizes: list[int], activation: Activation = Activation.TANH, seed: int = 0) -> MLP:
    """
    Create an MLP with seeded scaled-uniform initialization.

    Weights are drawn uniformly in +-sqrt(6/(fan_in+fan_out)); biases are zero.

    Args:
        layer_sizes: Input dim, hidden dims..., number of classes K
        activation: Hidden-layer nonlinearity
        seed: Initialization seed

    Returns:
        Freshly initialized MLP

    Raises:
        ArchitectureError: If the layer list is empty, has no output layer,
            contains a zero-size layer, or K < 2
    """
    sizes = list(layer_sizes or [])
    if len(sizes) < 2:
        raise ArchitectureError(f"need at least an input and an output layer, got {sizes}")
    if any(int(s) < 1 for s in sizes):
        raise ArchitectureError(f"all layer sizes must be >= 1, got {sizes}")
    if sizes[-1] < 2:
        raise ArchitectureError(f"need at least 2 output logits, got K={sizes[-1]}")

    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))

    return MLP(sizes, activation, seed, weights, biases)


def _activate(activation: Activation, z: np.ndarray) -> np.ndarray:
    if activation == Activation.TANH:
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activation_grad(activation: Activation, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if activation == Activation.TANH:
        return 1.0 - a * a
    return (z > 0.0).astype(np.float64)


def _as_batch(x, width: int, what: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr[None, :] if single else arr
    if batch.ndim != 2 or batch.shape[1] != width:
        raise ShapeError(f"{what} must have trailing dimension {width}, got shape {arr.shape}")
    return batch, single


def forward(
    mlp: MLP,
    x,
    mode: str = "eval",
    perturbation: Optional[Transform] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, Tape]:
    """
    Run the network, optionally injecting the perturbations of a Transform.

    Input noise is added before the first layer; hidden noise is added to
    the post-activation of the named hidden layer; dropout masks every
    hidden layer and rescales survivors by 1/(1-r0). Noise and masks are
    recorded on the tape so ``backward`` differentiates the perturbed
    computation exactly.

    Args:
        mlp: Network
        x: One sample (1-D) or a batch (one sample per row)
        mode: "train" or "eval"; perturbations require "train"
        perturbation: Optional Transform
        rng: Random stream, required when the perturbation draws noise

    Returns:
        Tuple (logits, tape); logits are 1-D for a 1-D input

    Raises:
        ShapeError: If the input width does not match layer_sizes[0]
        NetcoreError: If a perturbation is requested outside train mode
    """
    if mode not in ("train", "eval"):
        raise NetcoreError(f"mode must be 'train' or 'eval', got {mode!r}")
    batch, single = _as_batch(x, mlp.input_dim, "input")

    leaves = perturbation.flatten() if perturbation is not None else []
    if leaves and mode != "train":
        raise NetcoreError("perturbations are only allowed in train mode")
    if leaves and rng is None:
        raise NetcoreError("a random stream is required for perturbed forward passes")

    input_var = sum(t.v0 for t in leaves if t.kind == TransformKind.INPUT_GAUSSIAN)
    hidden_var = [0.0] * mlp.num_hidden_layers
    keep_prob = 1.0
    for t in leaves:
        if t.kind == TransformKind.HIDDEN_GAUSSIAN:
            if t.layer_index >= mlp.num_hidden_layers:
                raise NetcoreError(
                    f"hidden layer_index {t.layer_index} out of range for {mlp.num_hidden_layers} hidden layers"
                )
            hidden_var[t.layer_index] += t.v1
        elif t.kind == TransformKind.DROPOUT:
            keep_prob *= 1.0 - t.r0

    input_noise = None
    h = batch
    if input_var > 0.0:
        input_noise = rng.normal(0.0, np.sqrt(input_var), size=h.shape)
        h = h + input_noise

    layer_inputs: list[np.ndarray] = []
    hidden_clean: list[np.ndarray] = []
    pre_activations: list[np.ndarray] = []
    masks: list[Optional[np.ndarray]] = []
    hidden_noise: list[Optional[np.ndarray]] = []

    last = len(mlp.weights) - 1
    for layer, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        layer_inputs.append(h)
        z = h @ w.T + b
        pre_activations.append(z)
        if layer == last:
            h = z
            break
        a = _activate(mlp.activation, z)
        hidden_clean.append(a)
        noise = None
        if hidden_var[layer] > 0.0:
            noise = rng.normal(0.0, np.sqrt(hidden_var[layer]), size=a.shape)
            a = a + noise
        hidden_noise.append(noise)
        mask = None
        if keep_prob < 1.0:
            mask = (rng.random(a.shape) < keep_prob) / keep_prob
            a = a * mask
        masks.append(mask)
        h = a

    tape = Tape(
        mlp_id=id(mlp),
        version=mlp.version,
        single=single,
        layer_inputs=layer_inputs,
        hidden_clean=hidden_clean,
        pre_activations=pre_activations,
        masks=masks,
        input_noise=input_noise,
        hidden_noise=hidden_noise,
    )
    logits = h[0] if single else h
    return logits, tape


def backward(mlp: MLP, tape: Tape, upstream) -> Gradients:
    """
    Reverse-mode gradients of a scalar loss whose logit gradient is `upstream`.

    For a batch, `upstream` holds one row per sample and the parameter
    gradients are summed over rows (fold any 1/n into `upstream`).

    Raises:
        TapeError: If the tape was recorded for another net or before an update
        ShapeError: If `upstream` does not match the logits of the tape
    """
    if tape.mlp_id != id(mlp) or tape.version != mlp.version:
        raise TapeError("tape does not match the current network parameters")

    g = np.asarray(upstream, dtype=np.float64)
    if tape.single:
        g = g[None, :] if g.ndim == 1 else g
    expected = tape.pre_activations[-1].shape
    if g.shape != expected:
        raise ShapeError(f"upstream shape {g.shape} does not match logits shape {expected}")

    grad_w = [np.zeros_like(w) for w in mlp.weights]
    grad_b = [np.zeros_like(b) for b in mlp.biases]
    for layer in range(len(mlp.weights) - 1, -1, -1):
        grad_w[layer] = g.T @ tape.layer_inputs[layer]
        grad_b[layer] = g.sum(axis=0)
        if layer == 0:
            break
        dh = g @ mlp.weights[layer]
        hidden = layer - 1
        if tape.masks[hidden] is not None:
            dh = dh * tape.masks[hidden]
        g = dh * _activation_grad(mlp.activation, tape.pre_activations[hidden], tape.hidden_clean[hidden])

    return Gradients(weights=grad_w, biases=grad_b)


def softmax(logits) -> np.ndarray:
    """
    Max-shifted softmax over the last axis.

    Raises:
        NumericError: If any logit is not finite
    """
    p = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise NumericError("softmax received non-finite logits")
    shifted = p - p.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    """Numerically stable log of softmax over the last axis."""
    p = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise NumericError("log_softmax received non-finite logits")
    shifted = p - p.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_target(target, logits) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(target, dtype=np.float64)
    p = np.asarray(logits, dtype=np.float64)
    if y.shape != p.shape:
        raise ShapeError(f"target shape {y.shape} does not match logits shape {p.shape}")
    if np.any(y < -PROB_TOLERANCE) or np.any(y > 1.0 + PROB_TOLERANCE):
        raise NumericError("target entries must lie in [0, 1]")
    if np.any(np.abs(y.sum(axis=-1) - 1.0) > PROB_TOLERANCE):
        raise NumericError("target must sum to 1")
    return y, p


def cls_loss(target, logits):
    """
    l_cls(y, p) = -sum y_k log z_k + sum y_k log y_k, with z = softmax(p).

    Cross-entropy for one-hot targets, KL(y || z) for soft ones; 0 log 0 is 0.

    Returns:
        A float for a single sample, an array with one loss per row otherwise
    """
    y, p = _check_target(target, logits)
    entropy_term = np.where(y > 0.0, y * np.log(np.maximum(y, LOG_CLIP)), 0.0).sum(axis=-1)
    loss = -(y * log_softmax(p)).sum(axis=-1) + entropy_term
    loss = np.maximum(loss, 0.0)
    return float(loss) if loss.ndim == 0 else loss


def cls_loss_grad(target, logits) -> np.ndarray:
    """Gradient of cls_loss with respect to the logits: softmax(p) - y."""
    y, p = _check_target(target, logits)
    return softmax(p) - y


def l2_distance(p, q):
    """Euclidean distance over the last axis (float for vectors)."""
    a = np.asarray(p, dtype=np.float64)
    b = np.asarray(q, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare shapes {a.shape} and {b.shape}")
    d = np.sqrt(((a - b) ** 2).sum(axis=-1))
    return float(d) if d.ndim == 0 else d


def optimizer_step(
    mlp: MLP,
    grads: Gradients,
    state: OptState,
    hyper: OptimizerHypers,
) -> tuple[MLP, OptState]:
    """
    Apply one in-place parameter update (plain descent or Adam).

    Args:
        mlp: Network to update
        grads: Gradients matching the network's shapes
        state: Optimizer state from OptState.for_mlp
        hyper: Learning parameters

    Returns:
        Tuple (mlp, state), both updated

    Raises:
        ShapeError: If gradient shapes do not match
        NumericError: If any gradient is not finite
    """
    params = [*mlp.weights, *mlp.biases]
    grad_list = [*grads.weights, *grads.biases]
    if len(params) != len(grad_list) or any(p.shape != g.shape for p, g in zip(params, grad_list)):
        raise ShapeError("gradient shapes do not match the network")
    if not grads.is_finite():
        raise NumericError("non-finite gradients")

    lr = hyper.learning_rate
    if hyper.kind == OptimizerKind.SGD:
        for p, g in zip(params, grad_list):
            p -= lr * g
    else:
        state.step += 1
        bias1 = 1.0 - hyper.beta1 ** state.step
        bias2 = 1.0 - hyper.beta2 ** state.step
        for p, g, m, v in zip(params, grad_list, state.m, state.v):
            m *= hyper.beta1
            m += (1.0 - hyper.beta1) * g
            v *= hyper.beta2
            v += (1.0 - hyper.beta2) * g * g
            p -= lr * (m / bias1) / (np.sqrt(v / bias2) + hyper.eps)

    mlp.version += 1
    return mlp, state


def predict_proba(mlp: MLP, x) -> np.ndarray:
    """Softmax outputs in eval mode."""
    logits, _ = forward(mlp, x, mode="eval")
    return softmax(logits)


def predict(mlp: MLP, x) -> np.ndarray:
    """Argmax class; exact ties go to the lower class index."""
    logits, _ = forward(mlp, x, mode="eval")
    return np.argmax(logits, axis=-1)


def flatten_params(mlp: MLP) -> np.ndarray:
    """All parameters as one vector (per layer: weights row-major, then bias)."""
    parts = []
    for w, b in zip(mlp.weights, mlp.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def assign_params(mlp: MLP, flat: np.ndarray) -> None:
    """Inverse of flatten_params; bumps the parameter version."""
    flat = np.asarray(flat, dtype=np.float64)
    offset = 0
    for w, b in zip(mlp.weights, mlp.biases):
        w[...] = flat[offset:offset + w.size].reshape(w.shape)
        offset += w.size
        b[...] = flat[offset:offset + b.size]
        offset += b.size
    if offset != flat.size:
        raise ShapeError(f"expected {offset} parameters, got {flat.size}")
    mlp.version += 1
