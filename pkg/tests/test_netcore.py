"""Tests for the dense network engine."""

import math

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings
from hypothesis import strategies as st

from mkelab.models.schemas import Activation, OptimizerHypers, OptimizerKind, Transform
from mkelab.services.netcore import (
    ArchitectureError,
    Gradients,
    NetcoreError,
    NumericError,
    OptState,
    ShapeError,
    TapeError,
    assign_params,
    backward,
    cls_loss,
    cls_loss_grad,
    flatten_params,
    forward,
    l2_distance,
    mlp_new,
    optimizer_step,
    predict,
    softmax,
)


H = 1e-5
REL_TOL = 1e-4


def batch_loss(mlp, x, y, perturbation=None, draw_seed=0):
    """Summed cls_loss and its analytic gradients; draws are frozen by reseeding."""
    rng = np.random.default_rng(draw_seed)
    mode = "train" if perturbation is not None else "eval"
    logits, tape = forward(mlp, x, mode=mode, perturbation=perturbation, rng=rng)
    value = float(np.sum(cls_loss(y, logits)))
    grads = backward(mlp, tape, cls_loss_grad(y, logits))
    return value, grads


def numeric_gradient(mlp, x, y, perturbation=None, draw_seed=0):
    theta = flatten_params(mlp)
    numeric = np.zeros_like(theta)
    for i in range(theta.size):
        for sign in (1.0, -1.0):
            shifted = theta.copy()
            shifted[i] += sign * H
            assign_params(mlp, shifted)
            value, _ = batch_loss(mlp, x, y, perturbation, draw_seed)
            numeric[i] += sign * value
        numeric[i] /= 2.0 * H
    assign_params(mlp, theta)
    return numeric


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def soft_targets(rng, n, k):
    return rng.dirichlet(np.ones(k), size=n)


class TestMlpNew:
    """Tests for network construction."""

    def test_shapes_and_zero_biases(self):
        """Weights are (out, in); biases start at zero."""
        mlp = mlp_new([2, 16, 16, 2], Activation.TANH, seed=3)

        assert [w.shape for w in mlp.weights] == [(16, 2), (16, 16), (2, 16)]
        assert all(np.all(b == 0.0) for b in mlp.biases)
        assert mlp.num_hidden_layers == 2

    def test_initialization_bounds(self):
        """Weights lie within the scaled-uniform limit."""
        mlp = mlp_new([1, 32, 2], seed=0)
        limit = math.sqrt(6.0 / 33.0)
        assert np.all(np.abs(mlp.weights[0]) <= limit)

    def test_same_seed_same_weights(self):
        """Initialization is a pure function of the seed."""
        a = mlp_new([2, 8, 2], seed=11)
        b = mlp_new([2, 8, 2], seed=11)
        c = mlp_new([2, 8, 2], seed=12)

        assert np.array_equal(flatten_params(a), flatten_params(b))
        assert not np.array_equal(flatten_params(a), flatten_params(c))

    @pytest.mark.parametrize("sizes", [[], [2], [2, 0, 2], [2, 1]])
    def test_invalid_architecture(self, sizes):
        """Empty lists, missing outputs, zero widths and K < 2 are rejected."""
        with pytest.raises(ArchitectureError):
            mlp_new(sizes)


class TestForward:
    """Tests for forward passes."""

    def test_single_sample_matches_batch_row(self):
        """A 1-D input gives 1-D logits equal to the batch row."""
        mlp = mlp_new([2, 4, 3], seed=1)
        x = np.array([[0.3, -0.7], [1.0, 2.0]])

        batch_logits, _ = forward(mlp, x)
        single_logits, _ = forward(mlp, x[1])

        assert single_logits.shape == (3,)
        assert np.allclose(single_logits, batch_logits[1])

    def test_wrong_width(self):
        """Inputs with the wrong trailing dimension raise ShapeError."""
        mlp = mlp_new([2, 4, 2], seed=1)
        with pytest.raises(ShapeError):
            forward(mlp, np.zeros((5, 3)))

    def test_perturbation_requires_train_mode(self):
        """Perturbations are refused in eval mode."""
        mlp = mlp_new([2, 4, 2], seed=1)
        with pytest.raises(NetcoreError):
            forward(mlp, np.zeros(2), mode="eval", perturbation=Transform.dropout(0.5),
                    rng=np.random.default_rng(0))

    def test_perturbation_requires_rng(self):
        mlp = mlp_new([2, 4, 2], seed=1)
        with pytest.raises(NetcoreError):
            forward(mlp, np.zeros(2), mode="train", perturbation=Transform.input_gaussian(1.0))

    def test_zero_strength_is_identity(self):
        """Zero-variance noise and zero dropout leave the logits unchanged."""
        mlp = mlp_new([2, 4, 2], seed=1)
        x = np.array([[0.5, 0.1], [-1.0, 0.4]])
        zero = Transform.composite([
            Transform.input_gaussian(0.0),
            Transform.hidden_gaussian(0.0),
            Transform.dropout(0.0),
        ])

        clean, _ = forward(mlp, x)
        perturbed, _ = forward(mlp, x, mode="train", perturbation=zero, rng=np.random.default_rng(5))

        assert np.array_equal(clean, perturbed)

    def test_hidden_layer_out_of_range(self):
        mlp = mlp_new([2, 4, 2], seed=1)
        with pytest.raises(NetcoreError):
            forward(mlp, np.zeros(2), mode="train", perturbation=Transform.hidden_gaussian(1.0, 3),
                    rng=np.random.default_rng(0))

    def test_predict_tie_goes_to_lower_class(self):
        """Equal logits resolve to class 0."""
        mlp = mlp_new([2, 3, 2], seed=0)
        for w in mlp.weights:
            w[...] = 0.0

        assert predict(mlp, np.array([[1.0, 2.0], [-3.0, 0.5]])).tolist() == [0, 0]


class TestGradientCheck:
    """Central finite differences against backward()."""

    @pytest.mark.parametrize(
        "sizes,activation",
        [
            ([1, 2], Activation.TANH),
            ([2, 3, 2], Activation.TANH),
            ([1, 4, 4, 2], Activation.TANH),
            ([3, 5, 4, 3], Activation.RELU),
            ([2, 6, 6, 6, 4], Activation.TANH),
        ],
    )
    def test_clean_forward(self, sizes, activation):
        """Analytic gradients match central differences."""
        rng = np.random.default_rng(sum(sizes))
        mlp = mlp_new(sizes, activation, seed=7)
        x = rng.normal(size=(4, sizes[0]))
        y = soft_targets(rng, 4, sizes[-1])

        _, grads = batch_loss(mlp, x, y)
        numeric = numeric_gradient(mlp, x, y)

        assert relative_error(grads.flat(), numeric) < REL_TOL

    @pytest.mark.parametrize(
        "perturbation",
        [
            Transform.input_gaussian(0.5),
            Transform.hidden_gaussian(0.3, 1),
            Transform.dropout(0.4),
            Transform.composite([Transform.input_gaussian(0.2), Transform.dropout(0.3)]),
        ],
    )
    def test_perturbed_forward_with_frozen_draws(self, perturbation):
        """Gradients of the perturbed computation match with noise and masks held fixed."""
        rng = np.random.default_rng(99)
        mlp = mlp_new([2, 5, 4, 2], Activation.TANH, seed=4)
        x = rng.normal(size=(5, 2))
        y = soft_targets(rng, 5, 2)

        _, grads = batch_loss(mlp, x, y, perturbation, draw_seed=17)
        numeric = numeric_gradient(mlp, x, y, perturbation, draw_seed=17)

        assert relative_error(grads.flat(), numeric) < REL_TOL


class TestLosses:
    """Tests for the classification loss and its gradient."""

    def test_uniform_logits_one_hot(self):
        """Equal logits against a one-hot target cost ln 2."""
        assert cls_loss([1.0, 0.0], [0.0, 0.0]) == pytest.approx(math.log(2.0))

    def test_matching_soft_target_is_zero(self):
        logits = np.array([0.3, -1.2, 2.0])
        assert cls_loss(softmax(logits), logits) == pytest.approx(0.0, abs=1e-12)

    def test_target_must_sum_to_one(self):
        with pytest.raises(NumericError):
            cls_loss([0.5, 0.4], [0.0, 0.0])

    def test_target_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cls_loss([1.0, 0.0, 0.0], [0.0, 0.0])

    def test_non_finite_logits(self):
        with pytest.raises(NumericError):
            cls_loss([1.0, 0.0], [np.nan, 0.0])

    @pytest.mark.parametrize("k", [2, 5, 10])
    def test_gradient_norm_bound(self, k):
        """||softmax(p) - y|| never exceeds sqrt(K)."""
        rng = np.random.default_rng(k)
        y = soft_targets(rng, 1000, k)
        p = rng.normal(0.0, 5.0, size=(1000, k))

        norms = np.linalg.norm(cls_loss_grad(y, p), axis=-1)

        assert np.all(norms <= math.sqrt(k) + 1e-9)

    @hyp_settings(max_examples=50, deadline=None)
    @given(
        logits=st.lists(st.floats(-50, 50), min_size=2, max_size=6),
        shift=st.floats(-100, 100),
    )
    def test_softmax_shift_invariance(self, logits, shift):
        p = np.array(logits)
        assert np.allclose(softmax(p), softmax(p + shift), atol=1e-9)

    @hyp_settings(max_examples=50, deadline=None)
    @given(
        weights=st.lists(st.floats(0.01, 1.0), min_size=2, max_size=5),
        logits=st.lists(st.floats(-30, 30), min_size=5, max_size=5),
    )
    def test_loss_is_non_negative(self, weights, logits):
        y = np.array(weights) / np.sum(weights)
        assert cls_loss(y, np.array(logits[: len(weights)])) >= 0.0

    @hyp_settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(-10, 10), min_size=9, max_size=9),
    )
    def test_l2_triangle_inequality(self, values):
        p, q, r = (np.array(values[i:i + 3]) for i in (0, 3, 6))
        assert l2_distance(p, r) <= l2_distance(p, q) + l2_distance(q, r) + 1e-12

    def test_l2_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l2_distance([0.0, 1.0], [0.0, 1.0, 2.0])


class TestOptimizer:
    """Tests for optimizer_step and tape invalidation."""

    @pytest.mark.parametrize("kind", [OptimizerKind.SGD, OptimizerKind.ADAM])
    def test_step_reduces_loss(self, kind):
        """A few steps lower the loss on a fixed batch."""
        rng = np.random.default_rng(0)
        mlp = mlp_new([2, 8, 2], seed=2)
        x = rng.normal(size=(16, 2))
        y = np.eye(2)[(x[:, 0] > 0).astype(int)]
        hyper = OptimizerHypers(kind=kind, learning_rate=0.01)
        state = OptState.for_mlp(mlp)

        start, _ = batch_loss(mlp, x, y)
        for _ in range(20):
            _, grads = batch_loss(mlp, x, y)
            optimizer_step(mlp, grads, state, hyper)
        end, _ = batch_loss(mlp, x, y)

        assert end < start

    def test_stale_tape_rejected(self):
        """A tape recorded before an update cannot be used for backward."""
        mlp = mlp_new([2, 4, 2], seed=0)
        x = np.ones((3, 2))
        logits, tape = forward(mlp, x)
        grads = backward(mlp, tape, np.ones_like(logits))

        optimizer_step(mlp, grads, OptState.for_mlp(mlp), OptimizerHypers(kind=OptimizerKind.SGD))

        with pytest.raises(TapeError):
            backward(mlp, tape, np.ones_like(logits))

    def test_tape_from_other_network(self):
        a = mlp_new([2, 4, 2], seed=0)
        b = mlp_new([2, 4, 2], seed=0)
        logits, tape = forward(a, np.ones(2))
        with pytest.raises(TapeError):
            backward(b, tape, np.ones_like(logits))

    def test_non_finite_gradients(self):
        mlp = mlp_new([2, 4, 2], seed=0)
        grads = Gradients.zeros_like(mlp)
        grads.biases[0][0] = np.inf
        with pytest.raises(NumericError):
            optimizer_step(mlp, grads, OptState.for_mlp(mlp), OptimizerHypers())

    def test_gradient_shape_mismatch(self):
        mlp = mlp_new([2, 4, 2], seed=0)
        other = Gradients.zeros_like(mlp_new([2, 5, 2], seed=0))
        with pytest.raises(ShapeError):
            optimizer_step(mlp, other, OptState.for_mlp(mlp), OptimizerHypers())

    def test_zero_upstream_gives_zero_gradients(self):
        mlp = mlp_new([2, 5, 3], seed=4)
        logits, tape = forward(mlp, np.random.default_rng(2).normal(size=(7, 2)))

        grads = backward(mlp, tape, np.zeros_like(logits))

        assert grads.flat().shape == flatten_params(mlp).shape
        assert np.all(grads.flat() == 0.0)

    def test_descent_step_on_square(self):
        """One step on f(w) = w^2 from w = 1 with learning rate 0.1 lands on 0.8."""
        mlp = mlp_new([1, 2], seed=0)
        mlp.weights[0][0, 0] = 1.0
        grads = Gradients.zeros_like(mlp)
        grads.weights[0][0, 0] = 2.0 * mlp.weights[0][0, 0]

        optimizer_step(mlp, grads, OptState.for_mlp(mlp), OptimizerHypers(kind=OptimizerKind.SGD, learning_rate=0.1))

        assert mlp.weights[0][0, 0] == pytest.approx(0.8)
