"""Forecast metrics and scoring of recovered structures against ground truth."""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

from gca.errors import MissingFieldError, NoPositivesError


def rmse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def mae(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    return float(np.mean(np.abs(pred - target)))


def _mask_diagonal(k: int, D: int) -> np.ndarray:
    keep = np.ones((k, D, D), dtype=bool)
    keep[:, np.arange(D), np.arange(D)] = False
    return keep


def average_precision(scores, labels) -> float:
    """Step-wise area under the precision-recall curve.

    Scores are visited in decreasing order; tied scores form a single
    threshold, so precision is only evaluated at the end of each tie group.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositivesError("ground truth has no positive edges")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    # last index of each tie group
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp_at = tp[ends]
    precision = tp_at / (ends + 1)
    recall_gain = np.diff(np.r_[0, tp_at]) / n_pos
    return float(np.sum(precision * recall_gain))


def auprc(edge_probs, truth, include_diagonal: bool = True) -> float:
    """AUPRC of edge probabilities ``(k, D, D)`` against a binary adjacency, pooled over lags."""
    adjacency = getattr(truth, "adjacency", truth)
    edge_probs, adjacency = np.asarray(edge_probs, dtype=float), np.asarray(adjacency)
    if edge_probs.shape != adjacency.shape:
        raise ValueError(f"shape mismatch {edge_probs.shape} vs {adjacency.shape}")
    if include_diagonal:
        return average_precision(edge_probs, adjacency)
    keep = _mask_diagonal(*adjacency.shape[:2])
    return average_precision(edge_probs[keep], adjacency[keep])


def structure_l1(A_src, A_tgt) -> float:
    """Mean absolute difference over all ``k * D * D`` entries."""
    A_src, A_tgt = np.asarray(A_src, dtype=float), np.asarray(A_tgt, dtype=float)
    if A_src.shape != A_tgt.shape:
        raise ValueError(f"shape mismatch {A_src.shape} vs {A_tgt.shape}")
    return float(np.mean(np.abs(A_src - A_tgt)))


def auprc_vs_rmse_trace(
    log: Iterable[Mapping], auprc_key: str = "auprc_src", rmse_key: str = "test_rmse"
) -> dict[str, list]:
    """Per-epoch paired (AUPRC, RMSE) series from epoch records, untouched."""
    epochs, a, r = [], [], []
    for i, rec in enumerate(log):
        for key in (auprc_key, rmse_key):
            if key not in rec:
                raise MissingFieldError(f"epoch record {i} lacks {key!r}")
        epochs.append(rec.get("epoch", i))
        a.append(rec[auprc_key])
        r.append(rec[rmse_key])
    return {"epoch": epochs, "auprc": a, "rmse": r}


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=0))
