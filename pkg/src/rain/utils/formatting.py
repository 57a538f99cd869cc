"""Text formatting for reports, tables and the per-epoch log."""

from typing import Any, Dict, Iterable, Mapping, Optional, Sequence

import numpy as np

from ..config import render_value


def format_report(values: Mapping[str, Any], header: Optional[str] = None) -> str:
    """Render ``values`` as UTF-8 key=value lines."""
    lines = [f"# {header}"] if header else []
    for key, value in values.items():
        if isinstance(value, (np.floating, np.integer)):
            value = value.item()
        lines.append(f"{key}={render_value(value)}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> Dict[str, str]:
    values = {}
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#") and "=" in line:
            key, value = line.split("=", 1)
            values[key] = value
    return values


def format_curve_table(columns: Mapping[str, Sequence[float]], index_name: str = "step") -> str:
    """Whitespace-separated table, one row per horizon step (1-based)."""
    names = list(columns)
    length = len(next(iter(columns.values()))) if columns else 0
    lines = [" ".join([index_name] + names)]
    for t in range(length):
        lines.append(" ".join([str(t + 1)] + [f"{float(columns[name][t]):.6e}" for name in names]))
    return "\n".join(lines) + "\n"


def format_grid(matrix: np.ndarray, precision: int = 4) -> str:
    """Square matrix as rows of space-separated numbers."""
    matrix = np.asarray(matrix)
    if matrix.dtype.kind in "iub":
        return "\n".join(" ".join(str(int(v)) for v in row) for row in matrix)
    return "\n".join(" ".join(f"{float(v):.{precision}f}" for v in row) for row in matrix)


def format_epoch_line(epoch: int, fields: Mapping[str, Any]) -> str:
    parts = [f"epoch={epoch}"]
    for key, value in fields.items():
        if value is None:
            parts.append(f"{key}=-")
        elif isinstance(value, float):
            parts.append(f"{key}={value:.6f}")
        else:
            parts.append(f"{key}={value}")
    return " ".join(parts)


def format_mean_std(values: Iterable[float], percent: bool = False) -> str:
    """``mean±std`` with population std; percentages when ``percent``."""
    values = np.asarray(list(values), dtype=np.float64)
    scale = 100.0 if percent else 1.0
    return f"{values.mean() * scale:.2f}±{values.std() * scale:.2f}"
