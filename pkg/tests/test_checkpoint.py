"""Tests for model checkpoints."""

import numpy as np
import pytest

from mkelab.models.schemas import Activation, Modality
from mkelab.services.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from mkelab.services.mke import TrainedModel
from mkelab.services.netcore import flatten_params, mlp_new


@pytest.fixture
def student():
    mlp = mlp_new([2, 16, 16, 2], Activation.RELU, seed=42)
    rng = np.random.default_rng(0)
    for b in mlp.biases:
        b[...] = rng.normal(size=b.shape)
    return TrainedModel(mlp, (Modality.ALPHA, Modality.BETA))


class TestCheckpoint:
    """Tests for save_checkpoint and load_checkpoint."""

    def test_parameters_restored_exactly(self, student, tmp_path):
        path = save_checkpoint(student, tmp_path / "student.mkelab")

        loaded = load_checkpoint(path)

        assert np.array_equal(flatten_params(loaded.mlp), flatten_params(student.mlp))
        assert loaded.mlp.layer_sizes == [2, 16, 16, 2]
        assert loaded.mlp.activation == Activation.RELU
        assert loaded.mlp.seed == 42
        assert loaded.modalities == (Modality.ALPHA, Modality.BETA)

    def test_predictions_identical(self, student, tmp_path):
        x = np.random.default_rng(1).normal(size=(50, 2))
        loaded = load_checkpoint(save_checkpoint(student, tmp_path / "s.mkelab"))

        assert np.array_equal(loaded.logits(x), student.logits(x))

    def test_magic_line(self, student, tmp_path):
        path = save_checkpoint(student, tmp_path / "s.mkelab")
        assert path.read_text().splitlines()[0] == MAGIC

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "none.mkelab")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.mkelab"
        path.write_text("NOTAMODEL\nactivation tanh\n")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_file(self, student, tmp_path):
        path = save_checkpoint(student, tmp_path / "s.mkelab")
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-3]) + "\n")

        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_modalities_must_match_input_width(self, student, tmp_path):
        path = save_checkpoint(student, tmp_path / "s.mkelab")
        text = path.read_text().replace("modalities alpha beta", "modalities alpha")
        path.write_text(text)

        with pytest.raises(CheckpointError):
            load_checkpoint(path)
