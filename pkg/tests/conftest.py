"""Shared fixtures and the `slow` marker."""

import numpy as np
import pytest

from mkelab.models.schemas import DataSpec, ExperimentConfig, Modality
from mkelab.services.mke import TrainedModel
from mkelab.services.netcore import MLP


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size acceptance runs (enable with --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_config():
    """Small, fast experiment: 60 points, few epochs, two seeds."""
    return ExperimentConfig(
        data=DataSpec(n=60, noise_std=0.1, n_labeled=10, n_unlabeled=30, n_test=20),
        num_seeds=2,
        epochs=5,
    )


def linear_model(weights, biases, modalities=(Modality.ALPHA,)) -> TrainedModel:
    """TrainedModel around a single dense layer with the given parameters."""
    w = np.asarray(weights, dtype=np.float64)
    b = np.asarray(biases, dtype=np.float64)
    mlp = MLP([w.shape[1], w.shape[0]], "tanh", 0, [w], [b])
    return TrainedModel(mlp, tuple(modalities))


@pytest.fixture
def threshold_teacher():
    """Alpha-only model predicting class 1 exactly when x > 0."""
    return linear_model([[-1.0], [1.0]], [0.0, 0.0])
