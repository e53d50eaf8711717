# Services module

from mkelab.services.netcore import (
    MLP,
    NetcoreError,
    ArchitectureError,
    ShapeError,
    NumericError,
    TapeError,
    mlp_new,
    forward,
    backward,
    cls_loss,
    cls_loss_grad,
    optimizer_step,
)
from mkelab.services.perturb import (
    PerturbError,
    InvalidTransformError,
    perturbed_forward,
    reg_loss,
)
from mkelab.services.synthdata import (
    SynthDataError,
    InvalidSizeError,
    SplitError,
    DegenerateSplitError,
    DatasetSplit,
    twomoon_generate,
    split,
    project,
)
from mkelab.services.dataset_io import (
    DatasetIOError,
    DatasetReader,
    DatasetWriter,
)
from mkelab.services.mke import (
    MKEError,
    TrainingError,
    ConfigError,
    EvalError,
    TrainedModel,
    train_teacher,
    pseudo_label,
    confidence_weights,
    train_student,
    evaluate,
    agreement_rate,
    prepare_teacher,
    run_seed,
    run_seed_result,
)
from mkelab.services.checkpoint import (
    CheckpointError,
    save_checkpoint,
    load_checkpoint,
)
from mkelab.services.expansion import (
    ExpansionError,
    InvalidSubsetError,
    EstimationError,
    PairingError,
    DomainError,
    FinitePointSet,
    neighborhood,
    misclassified_set,
    estimate_expansion,
    check_lemma1,
    theorem1_bound,
    unimodal_bound,
    measure_mu,
)
from mkelab.services.config_file import load_config
from mkelab.services.results_writer import (
    ResultsWriter,
    ResultsReader,
    ResultsWriterError,
)
from mkelab.services.plotting import (
    PlottingError,
    plot_decision_boundary,
)

__all__ = [
    "MLP",
    "NetcoreError",
    "ArchitectureError",
    "ShapeError",
    "NumericError",
    "TapeError",
    "mlp_new",
    "forward",
    "backward",
    "cls_loss",
    "cls_loss_grad",
    "optimizer_step",
    "PerturbError",
    "InvalidTransformError",
    "perturbed_forward",
    "reg_loss",
    "SynthDataError",
    "InvalidSizeError",
    "SplitError",
    "DegenerateSplitError",
    "DatasetSplit",
    "twomoon_generate",
    "split",
    "project",
    "DatasetIOError",
    "DatasetReader",
    "DatasetWriter",
    "MKEError",
    "TrainingError",
    "ConfigError",
    "EvalError",
    "TrainedModel",
    "train_teacher",
    "pseudo_label",
    "confidence_weights",
    "train_student",
    "evaluate",
    "agreement_rate",
    "prepare_teacher",
    "run_seed",
    "run_seed_result",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "ExpansionError",
    "InvalidSubsetError",
    "EstimationError",
    "PairingError",
    "DomainError",
    "FinitePointSet",
    "neighborhood",
    "misclassified_set",
    "estimate_expansion",
    "check_lemma1",
    "theorem1_bound",
    "unimodal_bound",
    "measure_mu",
    "load_config",
    "ResultsWriter",
    "ResultsReader",
    "ResultsWriterError",
    "PlottingError",
    "plot_decision_boundary",
]
