"""Bounded worker pool for experiment runs and sweeps.

Every (config row, seed) pair is one task. Tasks that share a seed and a
teacher configuration run as one group in worker threads (at most `jobs`
groups at a time), so each seed's teacher is trained once per sweep.
Finished seeds are appended to results.csv through a single locked
appender, so an interrupted sweep resumes where it stopped as long as
the output directory's manifest carries the same config hash. After all
tasks finish the results file is rewritten in canonical order, which
makes parallel and serial runs byte-identical.
"""

import asyncio
import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from mkelab import __version__
from mkelab.models.schemas import (
    ExperimentConfig,
    ResultRow,
    RunManifest,
    RunStatus,
    SeedResult,
    Transform,
)
from mkelab.services.checkpoint import save_checkpoint
from mkelab.services.dataset_io import DatasetWriter
from mkelab.services.mke import SeedRun, TeacherStage, prepare_teacher, row_strength, run_seed_result
from mkelab.services.perturb import make_transform
from mkelab.services.results_writer import (
    RESULTS_HEADER,
    ResultKey,
    ResultsReader,
    ResultsWriter,
    fmt,
)


logger = logging.getLogger(__name__)

RESULTS_FILE = "results.csv"
TABLE_FILE = "table.csv"
MANIFEST_FILE = "manifest.jsonl"


@dataclass
class SeedTask:
    """One seed of one config row."""
    cfg: ExperimentConfig
    seed: int
    status: RunStatus = RunStatus.PENDING
    result: Optional[SeedResult] = field(default=None, repr=False)

    @property
    def key(self) -> ResultKey:
        return config_key(self.cfg, self.seed)


def config_key(cfg: ExperimentConfig, seed: int) -> ResultKey:
    return ResultKey(
        cfg.baseline.value,
        cfg.transform.kind.value,
        float(fmt(row_strength(cfg.transform))),
        cfg.label_mode.value,
        seed,
    )


def expand_sweep(cfg: ExperimentConfig) -> list[ExperimentConfig]:
    """
    One config per (transform kind, strength, baseline) of cfg.sweep.

    Rows inherit everything else from `cfg`; without sweep axes the
    config itself is the only row.
    """
    if cfg.sweep is None:
        return [cfg]
    rows = []
    for kind in cfg.sweep.transforms:
        for strength in cfg.sweep.strengths[kind]:
            transform: Transform = make_transform(kind, strength)
            for baseline in cfg.sweep.baselines:
                rows.append(cfg.model_copy(update={
                    "transform": transform,
                    "baseline": baseline,
                    "modalities": None,
                    "sweep": None,
                }))
    return rows


def read_last_manifest(manifest_path: Path) -> Optional[RunManifest]:
    if not manifest_path.exists():
        return None
    lines = [line for line in manifest_path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines:
        return None
    try:
        return RunManifest.model_validate_json(lines[-1])
    except ValueError:
        logger.warning(f"Ignoring unreadable manifest line in {manifest_path}")
        return None


def append_manifest(manifest_path: Path, manifest: RunManifest) -> None:
    """Append one manifest record (JSON lines, never rewritten)."""
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    with open(manifest_path, "a", encoding="utf-8") as f:
        f.write(manifest.model_dump_json() + "\n")


class ResultAppender:
    """Serializes result-line appends from concurrent tasks."""

    def __init__(self, path: Path, fresh: bool):
        self.path = path
        self._lock = asyncio.Lock()
        self._writer = ResultsWriter()
        if fresh or not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="", encoding="utf-8") as f:
                csv.writer(f, lineterminator="\n").writerow(RESULTS_HEADER)

    async def append(self, cfg: ExperimentConfig, result: SeedResult) -> None:
        row = _row(cfg, [result])
        async with self._lock:
            with open(self.path, "a", newline="", encoding="utf-8") as f:
                csv.writer(f, lineterminator="\n").writerows(self._writer.result_lines([row]))


def _row(cfg: ExperimentConfig, seeds: list[SeedResult]) -> ResultRow:
    return ResultRow(
        baseline=cfg.baseline,
        transform=cfg.transform.kind,
        strength=row_strength(cfg.transform),
        label_mode=cfg.label_mode,
        config_hash=cfg.config_hash(),
        seeds=seeds,
    )


@dataclass
class SeedGroup:
    """Pending tasks that share one seed's data split and teacher."""
    teacher_hash: str
    seed: int
    tasks: list[SeedTask] = field(default_factory=list)


def group_tasks(tasks: list[SeedTask]) -> list[SeedGroup]:
    """Bucket tasks by (teacher hash, seed), keeping first-seen order."""
    groups: dict[tuple[str, int], SeedGroup] = {}
    for task in tasks:
        key = (task.cfg.teacher_hash(), task.seed)
        if key not in groups:
            groups[key] = SeedGroup(*key)
        groups[key].tasks.append(task)
    return list(groups.values())


def _prepare_stage(group: SeedGroup, checkpoint_dir: Optional[Path]) -> TeacherStage:
    """Blocking: train the group's teacher once and checkpoint data and teacher."""
    stage = prepare_teacher(group.tasks[0].cfg, group.seed)
    if checkpoint_dir is not None:
        DatasetWriter().write(stage.data, checkpoint_dir / f"seed{group.seed}_data.csv")
        save_checkpoint(stage.teacher, checkpoint_dir / f"seed{group.seed}_teacher.mkelab")
    return stage


def _run_task(task: SeedTask, stage: TeacherStage, checkpoint_dir: Optional[Path]) -> SeedResult:
    """Blocking body of one task; failures become a failed SeedResult."""
    on_run = None
    if checkpoint_dir is not None:
        def on_run(run: SeedRun) -> None:
            if run.student is not None:
                save_checkpoint(run.student, checkpoint_dir / f"seed{task.seed}_{task.cfg.baseline.value}.mkelab")
    return run_seed_result(task.cfg, task.seed, stage, on_run)


async def run_tasks(
    tasks: list[SeedTask],
    jobs: int,
    appender: Optional[ResultAppender] = None,
    checkpoint_dir: Optional[Path] = None,
) -> list[SeedTask]:
    """
    Run tasks with at most `jobs` seed groups in flight and record each result.

    Tasks sharing a seed and a teacher configuration form one group: the
    teacher is trained once and the group's student rows then run one
    after another on it.

    Args:
        tasks: Tasks to execute
        jobs: Pool size (>= 1)
        appender: Optional appender receiving each finished seed
        checkpoint_dir: Optional directory for data/teacher/student checkpoints

    Returns:
        The same tasks with status and result filled in
    """
    semaphore = asyncio.Semaphore(max(1, jobs))
    total = len(tasks)
    position = {id(task): index for index, task in enumerate(tasks)}

    async def finish(task: SeedTask, result: SeedResult) -> None:
        task.result = result
        task.status = result.status
        if appender is not None:
            await appender.append(task.cfg, result)
        logger.info(f"Task {position[id(task)] + 1}/{total}: status={task.status.value}")

    async def process(group: SeedGroup) -> None:
        async with semaphore:
            for task in group.tasks:
                task.status = RunStatus.RUNNING
            logger.info(f"Seed {group.seed}: training teacher for {len(group.tasks)} tasks")
            try:
                stage = await asyncio.to_thread(_prepare_stage, group, checkpoint_dir)
            except Exception as e:
                logger.error(f"Seed {group.seed}: teacher stage failed - {e}", exc_info=True)
                for task in group.tasks:
                    await finish(task, SeedResult(seed=group.seed, status=RunStatus.FAILED, error=str(e)))
                return

            for task in group.tasks:
                logger.info(f"Task {position[id(task)] + 1}/{total}: {task.cfg.baseline.value} seed={task.seed} running")
                result = await asyncio.to_thread(_run_task, task, stage, checkpoint_dir)
                await finish(task, result)

    await asyncio.gather(*(process(group) for group in group_tasks(tasks)))
    return tasks


def run_experiment(
    cfg: ExperimentConfig,
    jobs: int = 1,
    done: Optional[dict[ResultKey, SeedResult]] = None,
    appender: Optional[ResultAppender] = None,
    checkpoint_dir: Optional[Path] = None,
) -> list[ResultRow]:
    """
    Run every row and seed of `cfg` and collect one ResultRow per row.

    Seeds already completed in `done` are reused rather than rerun. A
    failed seed marks its row failed; nothing is dropped.

    Returns:
        ResultRows in sweep order
    """
    done = {} if done is None else done
    rows_cfg = expand_sweep(cfg)
    tasks = [
        SeedTask(row_cfg, seed)
        for row_cfg in rows_cfg
        for seed in row_cfg.seeds
        if not (config_key(row_cfg, seed) in done and done[config_key(row_cfg, seed)].status == RunStatus.COMPLETED)
    ]
    skipped = sum(len(r.seeds) for r in rows_cfg) - len(tasks)
    if skipped:
        logger.warning(f"Resuming: {skipped} completed seeds reused")

    if tasks:
        for task in asyncio.run(run_tasks(tasks, jobs, appender, checkpoint_dir)):
            done[task.key] = task.result
    return [_row(row_cfg, [done[config_key(row_cfg, s)] for s in row_cfg.seeds]) for row_cfg in rows_cfg]


def execute(
    cfg: ExperimentConfig,
    out_dir: Path,
    jobs: int = 1,
    checkpoint_dir: Optional[Path] = None,
) -> list[ResultRow]:
    """
    Run every row and seed of `cfg` into `out_dir`, resuming when possible.

    Writes results.csv (one line per seed), table.csv (one line per row)
    and appends a manifest record.

    Returns:
        ResultRows in sweep order
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / RESULTS_FILE
    manifest_path = out_dir / MANIFEST_FILE
    config_hash = cfg.config_hash()

    previous = read_last_manifest(manifest_path)
    resume = previous is not None and previous.config_hash == config_hash and results_path.exists()
    done: dict[ResultKey, SeedResult] = ResultsReader().read(results_path) if resume else {}
    if previous is not None and not resume:
        logger.warning(f"{out_dir}: config changed since the last run, starting fresh")

    append_manifest(manifest_path, RunManifest(
        config_hash=config_hash,
        seeds=cfg.seeds,
        output_dir=str(out_dir),
        tool_version=__version__,
        timestamp=datetime.now(timezone.utc),
    ))

    appender = ResultAppender(results_path, fresh=not resume)
    rows = run_experiment(cfg, jobs, done, appender, checkpoint_dir)
    writer = ResultsWriter()
    writer.write_results(rows, results_path)
    writer.write_table(rows, out_dir / TABLE_FILE)
    failed = sum(1 for r in rows for s in r.seeds if s.status == RunStatus.FAILED)
    if failed:
        logger.warning(f"{failed} seeds failed; rows marked failed in {out_dir / TABLE_FILE}")
    return rows
