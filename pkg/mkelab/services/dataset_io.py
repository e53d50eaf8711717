"""CSV export/import of generated TwoMoon splits.

One row per sample with header ``x,y,label,split``; ``split`` is one of
``labeled``, ``unlabeled`` or ``test``. Floats carry 9 significant digits.
"""

import csv
import logging
from pathlib import Path

import numpy as np

from mkelab.services.synthdata import (
    DatasetSplit,
    LabeledMultimodal,
    LabeledUnimodal,
    UnlabeledMultimodal,
    UnlabeledOracle,
)


logger = logging.getLogger(__name__)

HEADER = ["x", "y", "label", "split"]
SPLIT_NAMES = ("labeled", "unlabeled", "test")


class DatasetIOError(Exception):
    """Raised when a dataset file cannot be written or parsed."""
    pass


def _fmt(value: float) -> str:
    return "%.9g" % value


class DatasetWriter:
    """Writes a DatasetSplit to CSV in labeled, unlabeled, test order."""

    def write(self, data: DatasetSplit, output_path: str | Path) -> Path:
        """
        Write `data` to `output_path`, creating parent directories.

        Raises:
            DatasetIOError: If the file cannot be written
        """
        output_path = Path(output_path)
        try:
            output_path.parent.mkdir(parents=True, exist_ok=True)
            with open(output_path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(HEADER)
                for x, y, c in zip(data.labeled.x_alpha, data.labeled_beta, data.labeled.labels):
                    writer.writerow([_fmt(x), _fmt(y), int(c), "labeled"])
                for x, y, c in zip(data.unlabeled.x_alpha, data.unlabeled.x_beta, data.oracle.labels):
                    writer.writerow([_fmt(x), _fmt(y), int(c), "unlabeled"])
                for x, y, c in zip(data.test.x_alpha, data.test.x_beta, data.test.labels):
                    writer.writerow([_fmt(x), _fmt(y), int(c), "test"])
        except OSError as e:
            raise DatasetIOError(f"Failed to write dataset {output_path}: {e}")

        logger.info(f"DatasetWriter: wrote {sum(data.sizes)} rows to {output_path}")
        return output_path


class DatasetReader:
    """Reads a dataset CSV back into a DatasetSplit."""

    def read(self, file_path: str | Path) -> DatasetSplit:
        """
        Parse a dataset CSV.

        Raises:
            DatasetIOError: If the file is missing, has a wrong header,
                or contains an unparsable row
        """
        file_path = Path(file_path)
        if not file_path.exists():
            raise DatasetIOError(f"Dataset file not found: {file_path}")

        parts: dict[str, list[tuple[float, float, int]]] = {name: [] for name in SPLIT_NAMES}
        try:
            with open(file_path, newline="", encoding="utf-8") as f:
                reader = csv.reader(f)
                header = next(reader, None)
                if header != HEADER:
                    raise DatasetIOError(f"Expected header {','.join(HEADER)}, got {header}")
                for line_no, row in enumerate(reader, start=2):
                    if not row:
                        continue
                    if len(row) != 4 or row[3] not in parts:
                        raise DatasetIOError(f"Malformed row at line {line_no}: {row}")
                    parts[row[3]].append((float(row[0]), float(row[1]), int(row[2])))
        except DatasetIOError:
            raise
        except Exception as e:
            raise DatasetIOError(f"Failed to read dataset {file_path}: {e}")

        def columns(name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
            rows = parts[name]
            xs = np.array([r[0] for r in rows], dtype=np.float64)
            ys = np.array([r[1] for r in rows], dtype=np.float64)
            cs = np.array([r[2] for r in rows], dtype=int)
            return xs, ys, cs

        lx, ly, lc = columns("labeled")
        ux, uy, uc = columns("unlabeled")
        tx, ty, tc = columns("test")
        if len(lx) == 0:
            raise DatasetIOError(f"Dataset {file_path} has no labeled rows")

        logger.info(f"DatasetReader: read {len(lx)}/{len(ux)}/{len(tx)} rows from {file_path}")
        return DatasetSplit(
            labeled=LabeledUnimodal(lx, lc),
            unlabeled=UnlabeledMultimodal(ux, uy),
            test=LabeledMultimodal(tx, ty, tc),
            oracle=UnlabeledOracle(uc),
            labeled_beta=ly,
        )
