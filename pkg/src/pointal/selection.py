"""Ranking, Top-K, and feature-distance-suppressed (FDS) batch selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cloud import FeatureField, PointCloud
from .voxel_grid import VoxelGrid

VALID_STRATEGIES = ("random", "entropy", "lc", "mmu", "hmmu", "hmmu_fds")

# Margin-style scores pick the smallest value first; the rest pick the largest.
SCORE_DIRECTION = {
    "random": "descending",
    "entropy": "descending",
    "lc": "descending",
    "mmu": "ascending",
    "hmmu": "ascending",
    "hmmu_fds": "ascending",
}


@dataclass(frozen=True)
class SelectionConfig:
    budget_k: int = 0
    r: float = 0.2
    tau: float = 0.8
    strategy: str = "hmmu_fds"

    def __post_init__(self):
        if self.budget_k < 0:
            raise ValueError("budget_k must be non-negative")
        if not self.r > 0:
            raise ValueError("r must be positive")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau out of range [0,1]: {self.tau}")
        if self.strategy not in VALID_STRATEGIES:
            raise ValueError(
                f"unknown strategy '{self.strategy}'; valid: {', '.join(VALID_STRATEGIES)}"
            )


@dataclass(frozen=True)
class SuppressionRecord:
    """A candidate excluded by an already-selected neighbor.

    ``blocker`` is the in-radius selected point with the highest feature
    similarity; ``distance`` and ``similarity`` describe that pair.
    """

    index: int
    blocker: int
    distance: float
    similarity: float


@dataclass(frozen=True)
class SelectionResult:
    selected: tuple
    suppressed: tuple
    exhausted: bool


def rank_candidates(scores, unlabeled, direction: str) -> np.ndarray:
    """Unlabeled indices ordered by score; ties break by ascending index."""
    if direction not in ("ascending", "descending"):
        raise ValueError(f"direction must be ascending or descending, got '{direction}'")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if isinstance(unlabeled, np.ndarray):
        cand = np.unique(unlabeled.astype(np.int64))
    else:
        cand = np.unique(np.fromiter((int(i) for i in unlabeled), dtype=np.int64))
    if cand.size == 0:
        return cand
    if cand[0] < 0 or cand[-1] >= scores.shape[0]:
        raise ValueError("unlabeled index out of range for the score array")
    key = scores[cand]
    if direction == "descending":
        key = -key
    order = np.argsort(key, kind="stable")
    return cand[order]


def cosine_similarity(f_i, f_j) -> float:
    """f.f' / (|f||f'|), defined as 0 when either vector has zero norm."""
    f_i = np.asarray(f_i, dtype=np.float64).ravel()
    f_j = np.asarray(f_j, dtype=np.float64).ravel()
    if f_i.shape[0] != f_j.shape[0]:
        raise ValueError(f"dimension mismatch: {f_i.shape[0]} vs {f_j.shape[0]}")
    denom = np.linalg.norm(f_i) * np.linalg.norm(f_j)
    if denom == 0.0:
        return 0.0
    return float(np.dot(f_i, f_j) / denom)


def top_k_select(ranked, budget_k: int) -> SelectionResult:
    """First budget_k entries of the ranked list."""
    if budget_k < 0:
        raise ValueError("budget_k must be non-negative")
    ranked = np.asarray(ranked, dtype=np.int64)
    selected = tuple(int(i) for i in ranked[:budget_k])
    return SelectionResult(selected, (), len(selected) < budget_k)


def fds_select(
    ranked,
    cloud: PointCloud,
    feats: FeatureField,
    cfg: SelectionConfig,
    grid: VoxelGrid,
    preselected=(),
) -> SelectionResult:
    """Greedy walk down the ranked list with feature-distance suppression.

    A candidate is taken unless some already-selected point closer than
    cfg.r has feature cosine similarity above cfg.tau (strict on both).
    Suppressed candidates are recorded with their triggering blocker and
    never revisited. Selected pairs closer than r therefore always satisfy
    similarity <= tau.

    ``preselected`` points (typically labels from earlier rounds) join the
    suppression set up front but never count against the budget or appear
    in the output.
    """
    if feats.n_points != cloud.n_points:
        raise ValueError(
            f"feats row-count mismatch: {feats.n_points} rows for {cloud.n_points} points"
        )
    if grid.n_points != cloud.n_points:
        raise ValueError("grid was not built over this cloud")
    F = feats.feats
    norms = np.sqrt((F * F).sum(axis=1))
    pos = cloud.positions
    sel_mask = np.zeros(cloud.n_points, dtype=bool)
    for i in preselected:
        sel_mask[int(i)] = True
    selected = []
    suppressed = []
    for i in ranked:
        if len(selected) >= cfg.budget_k:
            break
        i = int(i)
        ids, d2 = grid.query_ball(pos[i], cfg.r)
        m = sel_mask[ids]
        if m.any():
            nb = ids[m]
            dots = F[nb] @ F[i]
            denom = norms[nb] * norms[i]
            sims = np.zeros(nb.shape[0])
            np.divide(dots, denom, out=sims, where=denom > 0)
            j = int(np.argmax(sims))
            if sims[j] > cfg.tau:
                suppressed.append(
                    SuppressionRecord(
                        i, int(nb[j]), float(np.sqrt(d2[m][j])), float(sims[j])
                    )
                )
                continue
        selected.append(i)
        sel_mask[i] = True
    return SelectionResult(
        tuple(selected), tuple(suppressed), len(selected) < cfg.budget_k
    )
