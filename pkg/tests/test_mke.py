"""Tests for the teacher/student pipeline."""

import numpy as np
import pytest

from mkelab.models.schemas import (
    Baseline,
    ExperimentConfig,
    LabelMode,
    LossMode,
    Modality,
    OptimizerHypers,
    RunStatus,
    Transform,
    TransformKind,
)
from mkelab.services import netcore
from mkelab.services.mke import (
    ConfigError,
    EvalError,
    Stream,
    TrainedModel,
    TrainingError,
    agreement_rate,
    confidence_weights,
    derive_seed,
    evaluate,
    pseudo_label,
    prepare_teacher,
    run_seed,
    run_seed_result,
    student_plan,
    train_student,
    train_teacher,
)
from mkelab.services.synthdata import (
    LabeledMultimodal,
    LabeledUnimodal,
    PseudoLabeledMultimodal,
    UnlabeledMultimodal,
    UnlabeledOracle,
)
from tests.conftest import linear_model


@pytest.fixture
def separable_labeled():
    x = np.concatenate([np.linspace(-2.0, -0.5, 5), np.linspace(0.5, 2.0, 5)])
    return LabeledUnimodal(x, np.array([0] * 5 + [1] * 5))


@pytest.fixture
def unlabeled():
    rng = np.random.default_rng(0)
    return UnlabeledMultimodal(rng.normal(size=12), rng.normal(size=12))


def pseudo_set(n=12, mode=LabelMode.SOFT, seed=0):
    rng = np.random.default_rng(seed)
    targets = rng.dirichlet([1.0, 1.0], size=n)
    if mode == LabelMode.HARD:
        targets = np.eye(2)[targets.argmax(axis=1)]
    return PseudoLabeledMultimodal(rng.normal(size=n), rng.normal(size=n), targets, mode)


class TestConfidenceWeights:
    """Tests for confidence_weights."""

    def test_examples(self):
        weights = confidence_weights([[0.5, 0.5], [1.0, 0.0], [0.9, 0.1]])

        assert weights[0] == pytest.approx(0.0, abs=1e-12)
        assert weights[1] == pytest.approx(1.0)
        assert weights[2] == pytest.approx(0.531, abs=1e-3)

    def test_range(self):
        y = np.random.default_rng(0).dirichlet([1.0, 1.0, 1.0], size=200)
        w = confidence_weights(y)
        assert np.all((w >= 0.0) & (w <= 1.0))


class TestPseudoLabel:
    """Tests for pseudo_label."""

    def test_hard_labels_are_one_hot(self, unlabeled):
        teacher = linear_model([[0.0], [0.0]], [2.0, -1.0])

        d_pl = pseudo_label(teacher, unlabeled, LabelMode.HARD)

        assert d_pl.targets.shape == (12, 2)
        assert np.all(d_pl.targets == [1.0, 0.0])

    def test_tie_goes_to_lower_class(self, unlabeled):
        teacher = linear_model([[0.0], [0.0]], [0.7, 0.7])

        hard = pseudo_label(teacher, unlabeled, LabelMode.HARD)
        soft = pseudo_label(teacher, unlabeled, LabelMode.SOFT)

        assert np.all(hard.targets == [1.0, 0.0])
        assert np.allclose(soft.targets, 0.5)

    def test_soft_labels_are_softmax(self, unlabeled, threshold_teacher):
        d_pl = pseudo_label(threshold_teacher, unlabeled, LabelMode.SOFT)

        assert np.allclose(d_pl.targets.sum(axis=1), 1.0)
        assert np.array_equal(d_pl.targets.argmax(axis=1), (unlabeled.x_alpha > 0).astype(int))
        assert d_pl.mode == LabelMode.SOFT

    def test_multimodal_teacher_rejected(self, unlabeled):
        teacher = linear_model([[0.0, 0.0], [0.0, 0.0]], [0.0, 0.0], (Modality.ALPHA, Modality.BETA))
        with pytest.raises(ConfigError):
            pseudo_label(teacher, unlabeled, LabelMode.SOFT)

    def test_empty_unlabeled_set(self, threshold_teacher):
        d_pl = pseudo_label(threshold_teacher, UnlabeledMultimodal(np.array([]), np.array([])), LabelMode.HARD)
        assert len(d_pl) == 0


class TestTrainTeacher:
    """Tests for train_teacher."""

    def test_zero_epochs_returns_initialization(self, separable_labeled):
        cfg = ExperimentConfig(epochs=0, seed=5)

        teacher = train_teacher(separable_labeled, cfg)
        fresh = netcore.mlp_new(cfg.teacher_layer_sizes, cfg.activation, derive_seed(5, Stream.TEACHER_INIT))

        assert np.array_equal(netcore.flatten_params(teacher.mlp), netcore.flatten_params(fresh))
        assert teacher.log == []

    def test_fits_separable_data(self, separable_labeled):
        cfg = ExperimentConfig(epochs=500, optimizer=OptimizerHypers(learning_rate=0.01))

        teacher = train_teacher(separable_labeled, cfg)

        assert np.array_equal(teacher.predict(separable_labeled), separable_labeled.labels)
        assert len(teacher.log) == 500
        assert teacher.log[-1].loss < teacher.log[0].loss

    def test_teacher_epochs_override_student_epochs(self, separable_labeled):
        cfg = ExperimentConfig(epochs=3, teacher_epochs=7)

        teacher = train_teacher(separable_labeled, cfg)

        assert len(teacher.log) == 7

    def test_teacher_optimizer_override(self, separable_labeled):
        plain = ExperimentConfig(epochs=5, optimizer=OptimizerHypers(learning_rate=0.01))
        slow = plain.model_copy(update={"teacher_optimizer": OptimizerHypers(learning_rate=1e-4)})

        a = train_teacher(separable_labeled, plain)
        b = train_teacher(separable_labeled, slow)

        assert a.log[0].loss == b.log[0].loss
        assert not np.array_equal(netcore.flatten_params(a.mlp), netcore.flatten_params(b.mlp))
        assert slow.teacher_hash() != plain.teacher_hash()

    def test_missing_class(self):
        d_l = LabeledUnimodal(np.array([0.1, 0.2, 0.3]), np.array([1, 1, 1]))
        with pytest.raises(ConfigError):
            train_teacher(d_l, ExperimentConfig(epochs=1))

    def test_deterministic(self, separable_labeled):
        cfg = ExperimentConfig(epochs=20)
        a = train_teacher(separable_labeled, cfg)
        b = train_teacher(separable_labeled, cfg)
        assert np.array_equal(netcore.flatten_params(a.mlp), netcore.flatten_params(b.mlp))


class TestStudentPlan:
    """Tests for the per-baseline training recipe."""

    def test_naive_pl_has_no_regularizer(self):
        plan = student_plan(ExperimentConfig(baseline=Baseline.NAIVE_PL, transform=Transform.input_gaussian(2.0)))

        assert plan.transform.kind == TransformKind.NONE
        assert plan.gamma == 0.0
        assert plan.modalities == (Modality.ALPHA,)

    def test_noisy_student_defaults_to_dropout(self):
        plan = student_plan(ExperimentConfig(baseline=Baseline.NOISY_STUDENT_LITE))

        assert plan.transform.kind == TransformKind.DROPOUT
        assert plan.includes_labeled
        assert plan.loss_mode == LossMode.EQUIVALENT

    def test_supervised_student_uses_true_labels(self):
        plan = student_plan(ExperimentConfig(baseline=Baseline.MM_STUDENT_SUP))
        assert plan.uses_true_labels
        assert plan.modalities == (Modality.ALPHA, Modality.BETA)

    def test_teacher_row_has_no_student(self):
        with pytest.raises(ConfigError):
            student_plan(ExperimentConfig(baseline=Baseline.UM_TEACHER))


class TestTrainStudent:
    """Tests for train_student."""

    def test_multimodal_input_width(self):
        student = train_student(pseudo_set(), ExperimentConfig(epochs=3))

        assert student.mlp.layer_sizes == [2, 16, 16, 2]
        assert student.modalities == (Modality.ALPHA, Modality.BETA)

    def test_unimodal_input_width(self):
        cfg = ExperimentConfig(epochs=3, baseline=Baseline.UM_STUDENT)
        student = train_student(pseudo_set(), cfg)
        assert student.mlp.layer_sizes == [1, 32, 32, 2]

    def test_combined_mode_logs_regularizer(self):
        cfg = ExperimentConfig(
            epochs=3,
            loss_mode=LossMode.COMBINED,
            transform=Transform.input_gaussian(1.0),
        )

        student = train_student(pseudo_set(), cfg)

        assert all(entry.reg_loss > 0.0 for entry in student.log)
        assert student.log[0].loss == pytest.approx(student.log[0].pl_loss + student.log[0].reg_loss)

    def test_supervised_student_needs_oracle(self):
        cfg = ExperimentConfig(epochs=1, baseline=Baseline.MM_STUDENT_SUP)
        with pytest.raises(ConfigError):
            train_student(pseudo_set(), cfg)

        oracle = UnlabeledOracle(np.array([0, 1] * 6))
        assert train_student(pseudo_set(), cfg, oracle=oracle).mlp.input_dim == 2

    def test_noisy_student_needs_labeled_set(self, separable_labeled):
        cfg = ExperimentConfig(epochs=1, baseline=Baseline.NOISY_STUDENT_LITE)
        with pytest.raises(ConfigError):
            train_student(pseudo_set(), cfg)

        student = train_student(pseudo_set(), cfg, d_l=separable_labeled)
        assert student.is_unimodal

    def test_confidence_weighting_needs_soft_labels(self):
        cfg = ExperimentConfig(epochs=1, confidence_weighting=True)
        with pytest.raises(ConfigError):
            train_student(pseudo_set(mode=LabelMode.HARD), cfg)

    def test_non_finite_inputs_raise_training_error(self):
        d_pl = pseudo_set()
        d_pl.x_beta[0] = np.nan
        with pytest.raises(TrainingError):
            train_student(d_pl, ExperimentConfig(epochs=2))

    def test_empty_training_set(self):
        d_pl = PseudoLabeledMultimodal(np.array([]), np.array([]), np.zeros((0, 2)), LabelMode.SOFT)
        with pytest.raises(TrainingError):
            train_student(d_pl, ExperimentConfig(epochs=2))


class TestEvaluate:
    """Tests for evaluate and agreement_rate."""

    def test_threshold_model(self, threshold_teacher):
        test = LabeledMultimodal(np.array([-1.0, -0.5, 0.5, 1.0]), np.zeros(4), np.array([0, 1, 1, 1]))

        report = evaluate(threshold_teacher, test)

        assert report.accuracy == pytest.approx(0.75)
        assert report.err == pytest.approx(0.25)
        assert report.confusion == [[1, 0], [1, 2]]
        assert report.per_class_accuracy == [1.0, pytest.approx(2 / 3)]
        assert report.n == 4

    def test_absent_class(self, threshold_teacher):
        test = LabeledMultimodal(np.array([-1.0, -2.0]), np.zeros(2), np.array([0, 0]))

        report = evaluate(threshold_teacher, test)

        assert report.accuracy == 1.0
        assert report.per_class_accuracy == [1.0, None]

    def test_empty_test_set(self, threshold_teacher):
        empty = LabeledMultimodal(np.array([]), np.array([]), np.array([], dtype=int))
        with pytest.raises(EvalError):
            evaluate(threshold_teacher, empty)

    def test_agreement_with_itself(self, threshold_teacher):
        test = LabeledMultimodal(np.linspace(-1, 1, 9), np.zeros(9), np.zeros(9, dtype=int))
        assert agreement_rate(threshold_teacher, threshold_teacher, test) == 1.0

    def test_unimodal_model_cannot_read_beta_only(self):
        with pytest.raises(ConfigError):
            TrainedModel(netcore.mlp_new([2, 2]), (Modality.ALPHA,))


def seed_results(cfg):
    return [run_seed_result(cfg, seed) for seed in cfg.seeds]


class TestRunSeed:
    """Tests for the per-seed pipeline."""

    def test_every_seed_completes(self, tiny_config):
        results = seed_results(tiny_config)

        assert [s.seed for s in results] == [0, 1]
        assert all(s.status == RunStatus.COMPLETED for s in results)

    def test_teacher_row_reports_teacher(self, tiny_config):
        cfg = tiny_config.model_copy(update={"baseline": Baseline.UM_TEACHER})

        for s in seed_results(cfg):
            assert s.student_acc == s.teacher_acc

    def test_teacher_shared_across_baselines(self, tiny_config):
        """The teacher of a seed does not depend on the student baseline."""
        a = run_seed(tiny_config, 0)
        b = run_seed(tiny_config.model_copy(update={"baseline": Baseline.UM_STUDENT}), 0)

        assert np.array_equal(netcore.flatten_params(a.teacher.mlp), netcore.flatten_params(b.teacher.mlp))
        assert a.teacher_report.accuracy == b.teacher_report.accuracy

    def test_shared_stage_matches_fresh_teacher(self, tiny_config):
        stage = prepare_teacher(tiny_config, 0)
        um = tiny_config.model_copy(update={"baseline": Baseline.UM_STUDENT})

        shared = [run_seed(cfg, 0, stage) for cfg in (tiny_config, um)]
        fresh = [run_seed(cfg, 0) for cfg in (tiny_config, um)]

        for a, b in zip(shared, fresh):
            assert a.student_report == b.student_report
            assert np.array_equal(netcore.flatten_params(a.student.mlp), netcore.flatten_params(b.student.mlp))
        assert stage.pseudo_labels(LabelMode.SOFT) is stage.pseudo_labels("soft")

    def test_stage_of_another_seed_is_rejected(self, tiny_config):
        stage = prepare_teacher(tiny_config, 0)

        with pytest.raises(ConfigError):
            run_seed(tiny_config, 1, stage)
        with pytest.raises(ConfigError):
            run_seed(tiny_config.model_copy(update={"teacher_epochs": 9}), 0, stage)

    def test_zero_strength_matches_plain_pseudo_labels(self, tiny_config):
        """A zero-variance perturbation trains exactly like naive pseudo labelling."""
        noisy = tiny_config.model_copy(
            update={"baseline": Baseline.UM_STUDENT, "transform": Transform.input_gaussian(0.0)}
        )
        naive = tiny_config.model_copy(update={"baseline": Baseline.NAIVE_PL})

        a = seed_results(noisy)
        b = seed_results(naive)

        assert [s.student_acc for s in a] == [s.student_acc for s in b]

    def test_failing_seed_is_captured(self, tiny_config):
        cfg = tiny_config.model_copy(update={"transform": Transform.hidden_gaussian(1.0, layer_index=5)})

        results = seed_results(cfg)

        assert all(s.status == RunStatus.FAILED and s.error for s in results)
        assert all(s.student_acc is None for s in results)

    def test_failing_hook_fails_the_seed(self, tiny_config):
        def hook(run):
            raise OSError("disk full")

        result = run_seed_result(tiny_config, 0, on_run=hook)

        assert result.status == RunStatus.FAILED
        assert "disk full" in result.error

    def test_same_seed_same_result(self, tiny_config):
        assert seed_results(tiny_config) == seed_results(tiny_config)

    def test_combined_mode_end_to_end(self, tiny_config):
        cfg = tiny_config.model_copy(update={
            "loss_mode": LossMode.COMBINED,
            "gamma": 1.0,
            "transform": Transform.input_gaussian(1.0),
        })

        run = run_seed(cfg, 0)

        assert len(run.student.log) == cfg.epochs
        assert all(entry.reg_loss > 0.0 for entry in run.student.log)
        assert 0.0 <= run.student_report.accuracy <= 1.0
