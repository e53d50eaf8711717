"""MKELAB1 model checkpoints.

Text layout::

    MKELAB1
    activation tanh
    layers 2 16 16 2
    modalities alpha beta
    seed 7
    weight 0 16 2
    <one line per matrix row, %.17g values>
    bias 0 16
    <one line>
    ...

``%.17g`` round-trips every float64 exactly.
"""

import logging
from pathlib import Path

import numpy as np

from mkelab.models.schemas import Activation, Modality
from mkelab.services.mke import TrainedModel
from mkelab.services.netcore import MLP


logger = logging.getLogger(__name__)

MAGIC = "MKELAB1"


class CheckpointError(Exception):
    """Raised for unreadable or malformed checkpoints."""
    pass


def _row(values) -> str:
    return " ".join("%.17g" % v for v in values)


def save_checkpoint(model: TrainedModel, path: str | Path) -> Path:
    """
    Write `model` (architecture, modalities and parameters) to `path`.

    Raises:
        CheckpointError: If the file cannot be written
    """
    path = Path(path)
    mlp = model.mlp
    lines = [
        MAGIC,
        f"activation {mlp.activation.value}",
        "layers " + " ".join(str(s) for s in mlp.layer_sizes),
        "modalities " + " ".join(m.value for m in model.modalities),
        f"seed {mlp.seed}",
    ]
    for index, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        lines.append(f"weight {index} {w.shape[0]} {w.shape[1]}")
        lines.extend(_row(r) for r in w)
        lines.append(f"bias {index} {b.shape[0]}")
        lines.append(_row(b))

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise CheckpointError(f"Failed to write checkpoint {path}: {e}")
    logger.info(f"Checkpoint saved: {path}")
    return path


def _expect(lines: list[str], pos: int, keyword: str) -> list[str]:
    if pos >= len(lines):
        raise CheckpointError(f"unexpected end of checkpoint, expected '{keyword}'")
    parts = lines[pos].split()
    if not parts or parts[0] != keyword:
        raise CheckpointError(f"line {pos + 1}: expected '{keyword}', got {lines[pos]!r}")
    return parts[1:]


def load_checkpoint(path: str | Path) -> TrainedModel:
    """
    Read a checkpoint written by ``save_checkpoint``.

    Raises:
        CheckpointError: If the file is missing, has the wrong magic line,
            or its arrays do not match the declared layer sizes
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")

    try:
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines or lines[0].strip() != MAGIC:
            raise CheckpointError(f"{path} is not an {MAGIC} checkpoint")

        activation = Activation(_expect(lines, 1, "activation")[0])
        sizes = [int(s) for s in _expect(lines, 2, "layers")]
        if len(sizes) < 2:
            raise CheckpointError(f"need at least two layer sizes, got {sizes}")
        modalities = tuple(Modality(m) for m in _expect(lines, 3, "modalities"))
        seed = int(_expect(lines, 4, "seed")[0])

        weights: list[np.ndarray] = []
        biases: list[np.ndarray] = []
        pos = 5
        for index, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            header = [int(v) for v in _expect(lines, pos, "weight")]
            if header != [index, fan_out, fan_in]:
                raise CheckpointError(f"layer {index}: weight header {header} does not match sizes {sizes}")
            rows = lines[pos + 1:pos + 1 + fan_out]
            w = np.array([[float(v) for v in r.split()] for r in rows], dtype=np.float64)
            if w.shape != (fan_out, fan_in):
                raise CheckpointError(f"layer {index}: weight matrix has shape {w.shape}")
            pos += 1 + fan_out

            header = [int(v) for v in _expect(lines, pos, "bias")]
            if header != [index, fan_out] or pos + 1 >= len(lines):
                raise CheckpointError(f"layer {index}: bad bias header {header}")
            b = np.array([float(v) for v in lines[pos + 1].split()], dtype=np.float64)
            if b.shape != (fan_out,):
                raise CheckpointError(f"layer {index}: bias has shape {b.shape}")
            pos += 2
            weights.append(w)
            biases.append(b)

        model = TrainedModel(MLP(sizes, activation, seed, weights, biases), modalities)
    except CheckpointError:
        raise
    except Exception as e:
        raise CheckpointError(f"Failed to read checkpoint {path}: {e}")

    logger.info(f"Checkpoint loaded: {path} ({model.mlp!r})")
    return model
