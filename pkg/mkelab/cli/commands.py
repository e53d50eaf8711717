"""Command-line front end: generate, run, sweep, theory and plot."""

import argparse
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from mkelab import __version__
from mkelab.config import settings
from mkelab.models.schemas import Baseline, DataSpec, ExperimentConfig, TheoryRow
from mkelab.services.checkpoint import CheckpointError, load_checkpoint
from mkelab.services.config_file import load_config
from mkelab.services.dataset_io import DatasetIOError, DatasetReader, DatasetWriter
from mkelab.services.expansion import (
    ExpansionError,
    FinitePointSet,
    grid_point_sets,
    measure_mu,
    misclassified_set,
    theory_row,
)
from mkelab.services.mke import (
    ConfigError,
    MKEError,
    Stream,
    derive_rng,
    evaluate,
    prepare_data,
    pseudo_label,
    train_student,
    train_teacher,
)
from mkelab.services.plotting import plot_decision_boundary
from mkelab.services.results_writer import ResultsWriter
from mkelab.services.synthdata import DatasetSplit, SynthDataError
from mkelab.worker.tasks import execute


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

GRID_A_BAR = 1.0 / 3.0


class UsageError(Exception):
    """Raised for invalid command-line input."""
    pass


def _global_options() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base seed")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory (env MKELAB_OUT)")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker pool size")
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="key=value config file")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="warnings only")
    common.add_argument("--set", dest="overrides", action="append", default=argparse.SUPPRESS,
                        metavar="KEY=VALUE", help="override one config key (repeatable)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_options()
    parser = argparse.ArgumentParser(prog="mkelab", parents=[common],
                                     description="Multimodal knowledge expansion laboratory")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[common], help="write a TwoMoon dataset CSV")
    gen.add_argument("--n", type=int, default=settings.N_SAMPLES)
    gen.add_argument("--noise", type=float, default=settings.NOISE_STD)
    gen.add_argument("--split", default=f"{settings.SPLIT_LABELED},{settings.SPLIT_UNLABELED},{settings.SPLIT_TEST}",
                     help="labeled,unlabeled,test sizes")
    gen.add_argument("--output", type=Path, default=None, help="CSV path (default <out>/dataset.csv)")

    run = sub.add_parser("run", parents=[common], help="run one experiment over its seeds")
    run.add_argument("--save-checkpoints", action="store_true",
                     help="write data, teacher and student checkpoints per seed")

    sub.add_parser("sweep", parents=[common], help="run the transform x strength x baseline grid")

    theory = sub.add_parser("theory", parents=[common], help="expansion estimates and bounds")
    theory.add_argument("--instance", choices=["twomoon", "grid"], default="twomoon")
    theory.add_argument("--data", type=Path, default=None, help="dataset CSV (default: generate)")
    theory.add_argument("--teacher", type=Path, default=None, help="teacher checkpoint")
    theory.add_argument("--student", type=Path, default=None, help="student checkpoint")
    theory.add_argument("--a-bar", type=float, default=None, help="override a_bar")

    plot = sub.add_parser("plot", parents=[common], help="SVG decision boundaries")
    plot.add_argument("--data", type=Path, required=True, help="dataset CSV")
    plot.add_argument("--model", type=Path, action="append", required=True, help="checkpoint (repeatable)")
    plot.add_argument("--no-timestamp", action="store_true", help="omit the SVG date metadata")
    return parser


def _finish_defaults(args: argparse.Namespace) -> argparse.Namespace:
    defaults = {
        "seed": None,
        "out": settings.OUT,
        "jobs": settings.JOBS,
        "config": None,
        "quiet": False,
        "overrides": [],
    }
    for name, value in defaults.items():
        if not hasattr(args, name):
            setattr(args, name, value)
    if args.jobs < 1:
        raise UsageError(f"--jobs must be >= 1, got {args.jobs}")
    if args.seed is not None and args.seed < 0:
        raise UsageError(f"--seed must be >= 0, got {args.seed}")
    return args


def _load(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config, args.overrides)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    return cfg


def cmd_generate(args: argparse.Namespace) -> int:
    """Generate, split and write one TwoMoon dataset."""
    try:
        n_l, n_u, n_test = (int(v) for v in args.split.split(","))
    except ValueError:
        raise UsageError(f"--split must be three comma-separated integers, got {args.split!r}")
    if n_l + n_u + n_test != args.n:
        raise UsageError(f"--split sizes {n_l}+{n_u}+{n_test} must sum to --n {args.n}")

    try:
        data_spec = DataSpec(n=args.n, noise_std=args.noise, n_labeled=n_l, n_unlabeled=n_u, n_test=n_test)
        cfg = ExperimentConfig(data=data_spec, seed=args.seed or 0)
    except ValueError as e:
        raise UsageError(str(e))

    data = prepare_data(cfg, cfg.seed)
    output = args.output or Path(args.out) / "dataset.csv"
    DatasetWriter().write(data, output)
    labeled, unlabeled, test = data.sizes
    print(f"labeled={labeled} unlabeled={unlabeled} test={test} -> {output}")
    return EXIT_OK


def _report_rows(rows) -> int:
    for row in rows:
        mean, std = row.student_mean_std
        t_mean, _ = row.teacher_mean_std
        status = "FAILED" if row.failed else "ok"
        print(
            f"{row.baseline.value:20s} {row.transform.value:16s} {row.strength:<6g} "
            f"teacher={_pct(t_mean)} student={_pct(mean)} +- {_pct(std)} [{status}]"
        )
    return EXIT_FAILURE if any(r.failed for r in rows) else EXIT_OK


def _pct(value: Optional[float]) -> str:
    return "  n/a" if value is None else f"{100 * value:5.2f}"


def cmd_run(args: argparse.Namespace) -> int:
    """Run one config (all seeds); exit 2 if any seed failed."""
    cfg = _load(args)
    if cfg.sweep is not None:
        logger.warning("run ignores the sweep axes; use the sweep command for the grid")
        cfg = cfg.model_copy(update={"sweep": None})
    out = Path(args.out)
    checkpoint_dir = out / "checkpoints" if args.save_checkpoints else None
    rows = execute(cfg, out, jobs=args.jobs, checkpoint_dir=checkpoint_dir)
    return _report_rows(rows)


def cmd_sweep(args: argparse.Namespace) -> int:
    """Run the full sweep grid (resumable); exit 2 if any seed failed."""
    cfg = _load(args)
    if cfg.sweep is None:
        raise UsageError("sweep needs sweep.transforms, sweep.strengths.<kind> and sweep.baselines in the config")
    rows = execute(cfg, Path(args.out), jobs=args.jobs)
    return _report_rows(rows)


def _twomoon_row(cfg: ExperimentConfig, seed: int, args: argparse.Namespace, data: DatasetSplit) -> TheoryRow:
    teacher = load_checkpoint(args.teacher) if args.teacher else train_teacher(data.labeled, cfg, seed=seed)

    student = None
    if args.student:
        student = load_checkpoint(args.student)
    elif cfg.baseline != Baseline.UM_TEACHER:
        d_pl = pseudo_label(teacher, data.unlabeled, cfg.label_mode)
        student = train_student(d_pl, cfg, seed=seed, oracle=data.oracle, d_l=data.labeled)

    missed = misclassified_set(teacher, data.unlabeled, data.oracle)
    a_bar = args.a_bar
    if a_bar is None:
        # every class (after the product subsampling) must admit a one-point subset
        counts = [int(np.sum(data.oracle.labels == c)) for c in np.unique(data.oracle.labels)]
        smallest = min(min(counts), settings.LEMMA1_CLASS_POINTS)
        a_bar = missed.a_bar
        if a_bar < 1.0 / smallest:
            logger.warning(f"Teacher a_bar={a_bar:.4f} admits no subset of a {smallest}-point class; using 1/{smallest}")
            a_bar = 1.0 / smallest

    ps_alpha = FinitePointSet(data.unlabeled.x_alpha, data.oracle.labels, cfg.theory.radius)
    ps_beta = FinitePointSet(data.unlabeled.x_beta, data.oracle.labels, cfg.theory.radius)
    err_student = mu = None
    if student is not None:
        err_student = evaluate(student, data.test).err
        mu = measure_mu(student, data.unlabeled, cfg.transform, cfg.theory.mu_draws,
                        derive_rng(seed, Stream.THEORY))
    return theory_row(
        f"twomoon_seed{seed}",
        ps_alpha,
        ps_beta,
        a_bar,
        cfg.theory,
        err_teacher=evaluate(teacher, data.test).err,
        err_student=err_student,
        mu=mu,
        seed=seed,
    )


def cmd_theory(args: argparse.Namespace) -> int:
    """Write theory.csv: expansion estimates, product check and bounds."""
    cfg = _load(args)
    rows: list[TheoryRow] = []
    if args.instance == "grid":
        ps_alpha, ps_beta = grid_point_sets()
        a_bar = args.a_bar if args.a_bar is not None else GRID_A_BAR
        rows.append(theory_row("grid", ps_alpha, ps_beta, a_bar, cfg.theory, seed=cfg.seed))
    elif args.data is not None:
        data = DatasetReader().read(args.data)
        rows.append(_twomoon_row(cfg, cfg.seed, args, data))
    else:
        for seed in cfg.seeds:
            rows.append(_twomoon_row(cfg, seed, args, prepare_data(cfg, seed)))

    output = Path(args.out) / "theory.csv"
    ResultsWriter().write_theory(rows, output)
    for row in rows:
        print(
            f"{row.instance}: c1={row.c1_hat:.3f} c2={row.c2_hat:.3f} c_rect={row.c_rect_hat:.3f} "
            f"c_prod={row.c_prod_hat:.3f} "
            f"a_bar={row.a_bar:.3f} product check {'passed' if row.lemma1_pass else 'FAILED'}"
        )
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    """One SVG per checkpoint over the dataset."""
    try:
        data = DatasetReader().read(args.data)
        models = [(path, load_checkpoint(path)) for path in args.model]
    except (CheckpointError, DatasetIOError) as e:
        raise UsageError(str(e))

    out = Path(args.out)
    for path, model in models:
        report = evaluate(model, data.test) if len(data.test) else None
        svg = plot_decision_boundary(
            model,
            data,
            out / f"{path.stem}.svg",
            title=path.stem,
            report=report,
            timestamp=not args.no_timestamp,
        )
        print(f"{svg}" + (f" (test accuracy {report.accuracy:.4f})" if report else ""))
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "theory": cmd_theory,
    "plot": cmd_plot,
}


def run_cli(argv: Optional[list[str]] = None) -> int:
    """
    Parse `argv` and dispatch to a command.

    Returns:
        0 on success, 1 for usage/config errors, 2 for runtime failures
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if getattr(args, "quiet", False):
        logging.getLogger().setLevel(logging.WARNING)
        logging.getLogger("mkelab").setLevel(logging.WARNING)

    try:
        args = _finish_defaults(args)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, SynthDataError, DatasetIOError, CheckpointError, ExpansionError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_USAGE
    except MKEError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return EXIT_FAILURE
