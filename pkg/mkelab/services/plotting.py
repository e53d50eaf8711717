"""Static SVG plots of TwoMoon splits and model decision boundaries."""

import logging
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from mkelab.config import settings  # noqa: E402
from mkelab.models.schemas import EvalReport, Modality  # noqa: E402
from mkelab.services.mke import TrainedModel  # noqa: E402
from mkelab.services.synthdata import DatasetSplit  # noqa: E402


logger = logging.getLogger(__name__)

CLASS_COLORS = ["#d62728", "#1f77b4"]  # class 0 red (upper moon), class 1 blue
REGION_COLORS = ["#f4c7c3", "#c6dbef"]
MARGIN = 0.5
SVG_HASH_SALT = "mkelab"


class PlottingError(Exception):
    """Raised when a plot cannot be rendered or saved."""
    pass


def grid_logit_difference(model: TrainedModel, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """logit_1 - logit_0 of `model` on every (x, y) grid node."""
    xx, yy = np.meshgrid(xs, ys)
    coords = {Modality.ALPHA: xx.ravel(), Modality.BETA: yy.ravel()}
    inputs = np.column_stack([coords[m] for m in model.modalities])
    logits = model.logits(inputs)
    return (logits[:, 1] - logits[:, 0]).reshape(xx.shape)


def has_boundary(diff: np.ndarray) -> bool:
    """True when the logit difference changes sign somewhere on the grid."""
    return bool(diff.min() < 0.0 < diff.max())


def plot_decision_boundary(
    model: TrainedModel,
    data: DatasetSplit,
    output_path: str | Path,
    title: str = "",
    report: Optional[EvalReport] = None,
    timestamp: bool = True,
    resolution: Optional[int] = None,
) -> Path:
    """
    Render the model's decision regions and boundary over the dataset.

    The boundary is the zero level of logit_1 - logit_0 on a
    resolution x resolution grid; it is omitted when the difference never
    changes sign. Labeled, unlabeled and test points are drawn with their
    class colors.

    Args:
        model: Trained model (unimodal models ignore the y axis)
        data: Dataset split to scatter
        output_path: SVG destination
        title: Figure title
        report: Optional test report; its accuracy goes into the annotation box
        timestamp: Keep the SVG date metadata
        resolution: Grid nodes per axis (Settings.PLOT_GRID_RESOLUTION by default)

    Returns:
        Path of the written SVG

    Raises:
        PlottingError: If rendering or saving fails
    """
    output_path = Path(output_path)
    resolution = resolution or settings.PLOT_GRID_RESOLUTION

    all_x = np.concatenate([data.labeled.x_alpha, data.unlabeled.x_alpha, data.test.x_alpha])
    all_y = np.concatenate([data.labeled_beta, data.unlabeled.x_beta, data.test.x_beta])
    xs = np.linspace(all_x.min() - MARGIN, all_x.max() + MARGIN, resolution)
    ys = np.linspace(all_y.min() - MARGIN, all_y.max() + MARGIN, resolution)

    plt.rcParams["svg.hashsalt"] = SVG_HASH_SALT
    fig, ax = plt.subplots(figsize=(6, 5))
    try:
        diff = grid_logit_difference(model, xs, ys)
        ax.contourf(xs, ys, (diff > 0.0).astype(float), levels=[-0.5, 0.5, 1.5], colors=REGION_COLORS)
        if has_boundary(diff):
            ax.contour(xs, ys, diff, levels=[0.0], colors="k", linewidths=1.5)
        else:
            logger.info(f"{output_path.name}: logit difference has one sign, no boundary drawn")

        def colors(labels: np.ndarray) -> list[str]:
            return [CLASS_COLORS[int(c)] for c in labels]

        ax.scatter(data.unlabeled.x_alpha, data.unlabeled.x_beta, c=colors(data.oracle.labels),
                   s=10, alpha=0.35, label="unlabeled")
        ax.scatter(data.test.x_alpha, data.test.x_beta, c=colors(data.test.labels),
                   s=10, marker="^", alpha=0.35, label="test")
        ax.scatter(data.labeled.x_alpha, data.labeled_beta, c=colors(data.labeled.labels),
                   s=60, edgecolors="k", label="labeled")

        if report is not None:
            ax.text(
                0.02, 0.02, f"test accuracy: {report.accuracy:.4f}",
                transform=ax.transAxes,
                bbox={"boxstyle": "round", "facecolor": "white", "alpha": 0.85},
            )
        modalities = "+".join(m.value for m in model.modalities)
        ax.set_title(title or f"decision boundary ({modalities})")
        ax.set_xlabel("x (modality alpha)")
        ax.set_ylabel("y (modality beta)")
        ax.legend(loc="upper right", fontsize="small")

        output_path.parent.mkdir(parents=True, exist_ok=True)
        metadata = None if timestamp else {"Date": None}
        fig.savefig(output_path, format="svg", metadata=metadata)
    except Exception as e:
        raise PlottingError(f"Failed to render {output_path}: {e}")
    finally:
        plt.close(fig)

    logger.info(f"Plot saved: {output_path}")
    return output_path
