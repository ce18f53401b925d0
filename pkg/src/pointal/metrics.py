"""Segmentation metrics: confusion matrix, mIoU, strategy comparison tables."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    """C x C counts, rows = ground truth, columns = prediction."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"counts must be square, got shape {c.shape}")
        if (c < 0).any():
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", c)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(pred, gt, n_classes: int) -> ConfusionMatrix:
    pred = np.asarray(pred, dtype=np.int64).ravel()
    gt = np.asarray(gt, dtype=np.int64).ravel()
    if pred.shape[0] != gt.shape[0]:
        raise ValueError(
            f"length mismatch: {pred.shape[0]} predictions for {gt.shape[0]} labels"
        )
    if pred.size:
        if pred.min() < 0 or pred.max() >= n_classes:
            raise ValueError(f"prediction id out of range [0, {n_classes})")
        if gt.min() < 0 or gt.max() >= n_classes:
            raise ValueError(f"ground-truth id out of range [0, {n_classes})")
    counts = np.bincount(
        gt * n_classes + pred, minlength=n_classes * n_classes
    ).reshape(n_classes, n_classes)
    return ConfusionMatrix(counts)


def miou(cm: ConfusionMatrix):
    """Mean intersection-over-union and the per-class values.

    Classes absent from both ground truth and prediction (zero denominator)
    are NaN in the per-class array and excluded from the mean.
    """
    counts = cm.counts
    if counts.sum() == 0:
        raise ValueError("empty confusion matrix: no evaluated points")
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    denom = tp + fp + fn
    per_class = np.full(cm.n_classes, np.nan)
    ok = denom > 0
    per_class[ok] = tp[ok] / denom[ok]
    return float(per_class[ok].mean()), per_class


def compare_strategies(reports: Mapping[str, Sequence]) -> dict:
    """Per-iteration mIoU table with final-iteration deltas vs the random baseline.

    ``reports`` maps strategy name to its list of iteration reports (each with
    ``miou`` and ``iteration`` attributes); all lists must share one length.
    """
    if not reports:
        raise ValueError("no strategies to compare")
    lengths = {name: len(rs) for name, rs in reports.items()}
    if len(set(lengths.values())) != 1:
        raise ValueError(f"report lists differ in length: {lengths}")
    n_iter = next(iter(lengths.values()))
    table = {
        "iterations": list(range(1, n_iter + 1)),
        "strategies": {},
    }
    baseline = None
    if "random" in reports and n_iter > 0:
        baseline = float(reports["random"][-1].miou)
    for name in sorted(reports):
        mious = [float(r.miou) for r in reports[name]]
        entry = {"miou": mious, "final_miou": mious[-1] if mious else None}
        if baseline is not None and name != "random" and mious:
            entry["delta_vs_random"] = mious[-1] - baseline
        table["strategies"][name] = entry
    return table
