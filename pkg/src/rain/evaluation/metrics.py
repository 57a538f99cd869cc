"""Trajectory and relation-recognition metrics."""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from ..errors import ContractViolation
from ..utils.constants import POSITION_DIM
from ..utils.formatting import format_mean_std

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)


@dataclass
class RelationReport:
    """Binary edge classification over directed off-diagonal pairs, pooled across cases."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    precision_defined: bool = True

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def mse_curve(preds: np.ndarray, truths: np.ndarray) -> np.ndarray:
    """Per-horizon-step squared position error, averaged over cases and agents.

    Args:
        preds: [cases, N, T_f, >=2] unstandardized states
        truths: same shape as ``preds``

    Returns:
        np.ndarray: [T_f]
    """
    preds, truths = np.asarray(preds, dtype=np.float64), np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape:
        raise ContractViolation(f"prediction shape {preds.shape} != truth shape {truths.shape}")
    if preds.ndim != 4:
        raise ContractViolation(f"expected [cases, N, T_f, state], got {preds.shape}")
    error = ((preds[..., :POSITION_DIM] - truths[..., :POSITION_DIM]) ** 2).sum(axis=-1)
    return error.mean(axis=(0, 1))


def relation_metrics(inferred: np.ndarray, truth: np.ndarray) -> RelationReport:
    """Accuracy, precision, recall and F1 with "edge exists" as the positive class.

    Undefined precision (no predicted edges) is reported as 0 with
    ``precision_defined`` False; undefined recall likewise reads 0.
    """
    inferred, truth = np.asarray(inferred), np.asarray(truth)
    if inferred.shape != truth.shape:
        raise ContractViolation(f"inferred graphs {inferred.shape} != truth graphs {truth.shape}")
    if inferred.ndim == 2:
        inferred, truth = inferred[None], truth[None]
    n = inferred.shape[-1]
    off_diagonal = ~np.eye(n, dtype=bool)
    predicted = inferred[:, off_diagonal].astype(bool)
    actual = truth[:, off_diagonal].astype(bool)

    tp = int((predicted & actual).sum())
    fp = int((predicted & ~actual).sum())
    tn = int((~predicted & ~actual).sum())
    fn = int((~predicted & actual).sum())
    total = tp + fp + tn + fn

    precision_defined = tp + fp > 0
    if not precision_defined:
        logger.warning("No edges predicted; precision is undefined and reported as 0")
    precision = tp / (tp + fp) if precision_defined else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return RelationReport(
        accuracy=(tp + tn) / total if total else 0.0,
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp, fp=fp, tn=tn, fn=fn,
        precision_defined=precision_defined,
    )


def all_edges_graphs(truth: np.ndarray) -> np.ndarray:
    """Reference predictor selecting every off-diagonal edge."""
    n = truth.shape[-1]
    return np.broadcast_to(~np.eye(n, dtype=bool), truth.shape).astype(np.int8)


def no_edges_graphs(truth: np.ndarray) -> np.ndarray:
    return np.zeros_like(truth, dtype=np.int8)


def _displacements(samples: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Euclidean position errors [..., K, N, T_f] for samples [..., K, N, T_f, >=2]."""
    samples, truth = np.asarray(samples, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if samples.ndim == truth.ndim:
        raise ContractViolation("samples need a leading K axis in front of the truth shape")
    if samples.shape[-3:-1] != truth.shape[-3:-1]:
        raise ContractViolation(f"sample shape {samples.shape} does not match truth {truth.shape}")
    diff = samples[..., :POSITION_DIM] - np.expand_dims(truth[..., :POSITION_DIM], axis=-4)
    return np.linalg.norm(diff, axis=-1)


def min_ade_fde(samples: np.ndarray, truth: np.ndarray) -> Tuple[float, float]:
    """minADE_K and minFDE_K, taking the min over samples per agent, then averaging.

    Args:
        samples: [K, N, T_f, >=2] or [cases, K, N, T_f, >=2]
        truth: [N, T_f, >=2] or [cases, N, T_f, >=2]
    """
    distances = _displacements(samples, truth)
    if distances.shape[-3] < 1:
        raise ContractViolation("need at least one sample")
    ade = distances.mean(axis=-1).min(axis=-2)
    fde = distances[..., -1].min(axis=-2)
    return float(ade.mean()), float(fde.mean())


def miss_rate(samples: np.ndarray, truth: np.ndarray, d: float) -> float:
    """Fraction of agents whose best endpoint error over samples exceeds ``d``."""
    if not d > 0:
        raise ContractViolation(f"miss threshold must be > 0, got {d}")
    best_endpoint = _displacements(samples, truth)[..., -1].min(axis=-2)
    return float((best_endpoint > d).mean())


def summarize_runs(reports: Sequence[Mapping[str, float]], percent_keys: Sequence[str] = ()) -> Dict[str, str]:
    """``mean±std`` per shared key over per-seed reports."""
    if not reports:
        raise ContractViolation("summarize_runs needs at least one report")
    keys = [k for k in reports[0] if all(k in r for r in reports)]
    summary = {}
    for key in keys:
        try:
            values = [float(r[key]) for r in reports]
        except (TypeError, ValueError):
            continue
        summary[key] = format_mean_std(values, percent=key in percent_keys)
    summary["seeds"] = str(len(reports))
    return summary
