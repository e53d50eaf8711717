"""CSV writers for per-seed results, aggregate tables and theory reports."""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from mkelab.models.schemas import (
    Baseline,
    LabelMode,
    ResultRow,
    RunStatus,
    SeedResult,
    TheoryRow,
    TransformKind,
)


logger = logging.getLogger(__name__)

RESULTS_HEADER = ["baseline", "transform", "strength", "label_mode", "seed", "teacher_acc", "student_acc"]
TABLE_HEADER = [
    "baseline", "transform", "strength", "label_mode", "n_seeds",
    "teacher_mean", "teacher_std", "student_mean", "student_std", "failed",
]
THEORY_HEADER = [
    "instance", "c1_hat", "c2_hat", "c_prod_hat", "a_bar",
    "err_teacher", "err_student", "mu_hat", "bound_mm", "bound_um", "lemma1_pass", "c_rect_hat",
]
THEORY_NOTES = [
    "# c1_hat, c2_hat, c_prod_hat (any product subset) and c_rect_hat (rectangles only) are minima over the checked subsets: exact under enumeration, upper estimates under sampling",
    "# neighborhoods are closed balls of radius r; mu_hat is a prediction-instability rate, not a proven constant",
    "# bound_mm and bound_um are diagnostics built from these estimates; N/A where c1*c2 <= 1 or c1 <= 1",
]
NOT_AVAILABLE = "N/A"


class ResultsWriterError(Exception):
    """Raised when a result file cannot be written or read."""
    pass


def fmt(value: Optional[float]) -> str:
    """Stable float formatting; empty for missing values."""
    return "" if value is None else "%.9g" % value


@dataclass(frozen=True, order=True)
class ResultKey:
    """Identity of one per-seed result line."""
    baseline: str
    transform: str
    strength: float
    label_mode: str
    seed: int


def result_key(row: ResultRow, seed: int) -> ResultKey:
    return ResultKey(row.baseline.value, row.transform.value, float(fmt(row.strength)), row.label_mode.value, seed)


def _write(path: Path, header: list[str], lines: Iterable[list[str]], notes: Iterable[str] = ()) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            for note in notes:
                f.write(note + "\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(lines)
    except OSError as e:
        raise ResultsWriterError(f"Failed to write {path}: {e}")
    return path


class ResultsWriter:
    """Writes the CSV artifacts of run, sweep and theory commands."""

    def result_lines(self, rows: list[ResultRow]) -> list[list[str]]:
        """One line per seed, sorted by (baseline, transform, strength, label_mode, seed)."""
        keyed = []
        for row in rows:
            for s in row.seeds:
                line = [
                    row.baseline.value,
                    row.transform.value,
                    fmt(row.strength),
                    row.label_mode.value,
                    str(s.seed),
                    fmt(s.teacher_acc),
                    fmt(s.student_acc),
                ]
                keyed.append((result_key(row, s.seed), line))
        keyed.sort(key=lambda item: item[0])
        return [line for _, line in keyed]

    def write_results(self, rows: list[ResultRow], output_path: str | Path) -> Path:
        """Write per-seed accuracies; failed seeds have empty accuracy cells."""
        path = _write(Path(output_path), RESULTS_HEADER, self.result_lines(rows))
        logger.info(f"ResultsWriter: wrote {sum(len(r.seeds) for r in rows)} result lines to {path}")
        return path

    def write_table(self, rows: list[ResultRow], output_path: str | Path) -> Path:
        """Write one aggregate line (mean and population std over seeds) per row."""
        lines = []
        for row in sorted(rows, key=lambda r: result_key(r, 0)):
            t_mean, t_std = row.teacher_mean_std
            s_mean, s_std = row.student_mean_std
            lines.append([
                row.baseline.value,
                row.transform.value,
                fmt(row.strength),
                row.label_mode.value,
                str(len(row.seeds)),
                fmt(t_mean),
                fmt(t_std),
                fmt(s_mean),
                fmt(s_std),
                "true" if row.failed else "false",
            ])
        path = _write(Path(output_path), TABLE_HEADER, lines)
        logger.info(f"ResultsWriter: wrote {len(lines)} aggregate rows to {path}")
        return path

    def write_theory(self, rows: list[TheoryRow], output_path: str | Path) -> Path:
        """Write the theory report with its estimate caveats as leading comment lines."""
        def cell(value: Optional[float]) -> str:
            return NOT_AVAILABLE if value is None else fmt(value)

        lines = [
            [
                r.instance,
                fmt(r.c1_hat),
                fmt(r.c2_hat),
                fmt(r.c_prod_hat),
                fmt(r.a_bar),
                fmt(r.err_teacher),
                fmt(r.err_student),
                fmt(r.mu_hat),
                cell(r.bound_mm),
                cell(r.bound_um),
                "true" if r.lemma1_pass else "false",
                fmt(r.c_rect_hat),
            ]
            for r in rows
        ]
        path = _write(Path(output_path), THEORY_HEADER, lines, notes=THEORY_NOTES)
        logger.info(f"ResultsWriter: wrote {len(lines)} theory rows to {path}")
        return path


class ResultsReader:
    """Reads a per-seed results CSV back into keyed records."""

    def read(self, file_path: str | Path) -> dict[ResultKey, SeedResult]:
        """
        Load completed and failed seeds by key; a missing file gives {}.

        Raises:
            ResultsWriterError: If the file has a wrong header or bad rows
        """
        file_path = Path(file_path)
        if not file_path.exists():
            return {}
        records: dict[ResultKey, SeedResult] = {}
        try:
            with open(file_path, newline="", encoding="utf-8") as f:
                reader = csv.reader(f)
                header = next(reader, None)
                if header != RESULTS_HEADER:
                    raise ResultsWriterError(f"{file_path}: unexpected header {header}")
                for line in reader:
                    if not line:
                        continue
                    baseline, transform, strength, label_mode, seed, teacher_acc, student_acc = line
                    key = ResultKey(
                        Baseline(baseline).value,
                        TransformKind(transform).value,
                        float(strength),
                        LabelMode(label_mode).value,
                        int(seed),
                    )
                    failed = student_acc == ""
                    records[key] = SeedResult(
                        seed=int(seed),
                        status=RunStatus.FAILED if failed else RunStatus.COMPLETED,
                        teacher_acc=float(teacher_acc) if teacher_acc else None,
                        student_acc=None if failed else float(student_acc),
                    )
        except ResultsWriterError:
            raise
        except Exception as e:
            raise ResultsWriterError(f"Failed to read results {file_path}: {e}")
        return records
