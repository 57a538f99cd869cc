"""Metrics files, curve tables, attention-map grids and optional plots."""

import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from ..errors import DatasetIOError
from ..utils.formatting import format_curve_table, format_grid, format_report, parse_report
from .metrics import RelationReport

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        logger.error(f"Failed to write {path}: {e}", exc_info=e)
        raise DatasetIOError(f"cannot write {path}: {e}")
    return path


def write_metrics(path: Path, values: Mapping[str, object], header: Optional[str] = None) -> Path:
    return _write(Path(path), format_report(values, header))


def relation_values(report: RelationReport, prefix: str = "relation") -> Dict[str, object]:
    return {f"{prefix}.{key}": value for key, value in report.as_dict().items()}


def curve_values(curve: np.ndarray, prefix: str = "mse") -> Dict[str, float]:
    return {f"{prefix}.t{t + 1}": float(v) for t, v in enumerate(curve)}


def write_curve_table(path: Path, columns: Mapping[str, Sequence[float]]) -> Path:
    return _write(Path(path), format_curve_table(columns))


def write_attention_map(directory: Path, case: int, hard_mask: np.ndarray, soft_weights: np.ndarray,
                        truth_graph: np.ndarray) -> Path:
    """One text file with the hard mask, head-averaged soft weights and the true graph.

    ``soft_weights`` is [T_f, H, N, N]; the first and last predicted steps are kept.
    """
    mean_weights = soft_weights.mean(axis=1)
    sections = [
        ("hard_mask", hard_mask),
        ("soft_first_step", mean_weights[0]),
        ("soft_last_step", mean_weights[-1]),
        ("hybrid_first_step", mean_weights[0] * hard_mask),
        ("truth", truth_graph),
    ]
    text = "\n\n".join(f"# {name}\n{format_grid(matrix)}" for name, matrix in sections) + "\n"
    return _write(Path(directory) / f"case_{case:03d}.txt", text)


def plot_curves(path: Path, columns: Mapping[str, Sequence[float]], ylabel: str = "MSE") -> Optional[Path]:
    """PNG of the curves when matplotlib is installed; otherwise nothing."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.debug("matplotlib not available, skipping plot")
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in columns.items():
        ax.plot(np.arange(1, len(values) + 1), values, label=name)
    ax.set_xlabel("prediction step")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_attention(path: Path, hard_mask: np.ndarray, soft_weights: np.ndarray,
                   truth_graph: np.ndarray) -> Optional[Path]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return None
    panels = [("truth", truth_graph), ("hard", hard_mask), ("hybrid", soft_weights.mean(axis=(0, 1)) * hard_mask)]
    fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 3))
    for ax, (title, matrix) in zip(axes, panels):
        ax.imshow(matrix, vmin=0.0, vmax=1.0, cmap="viridis")
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def parse_metrics(path: Path) -> Dict[str, str]:
    try:
        return parse_report(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise DatasetIOError(f"cannot read {path}: {e}")
