"""Acquisition scores: hierarchical minimum-margin uncertainty and baselines.

Margins are confidence gaps (top-1 minus top-2 probability), so selection
ranks them ascending: the smallest fused margin is the most uncertain point.
Entropy, least confidence, and random scores rank descending.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cloud import PointCloud, ProbabilityField
from .voxel_grid import VoxelGrid, build_grid, radius_neighbors


@dataclass(frozen=True)
class LevelSpec:
    """One contextual level: neighborhood radius v_r (meters) and fusion weight."""

    v_r: float
    omega: float

    def __post_init__(self):
        if not self.v_r > 0:
            raise ValueError("v_r must be positive")
        if not self.omega >= 0:
            raise ValueError("omega must be non-negative")


DEFAULT_LEVELS = (
    LevelSpec(0.10, 0.1),
    LevelSpec(0.50, 0.01),
    LevelSpec(1.00, 0.001),
)


@dataclass(frozen=True)
class UncertaintyScores:
    """Per-point margin U_x, per-level contextual margins, and the fused score."""

    u_point: np.ndarray
    u_level: tuple
    fused: np.ndarray


def _margins(p: np.ndarray) -> np.ndarray:
    """Top-1 minus top-2 per row; a single-class row has margin 1."""
    n, c = p.shape
    if c == 0:
        raise ValueError("empty probability rows")
    if c == 1:
        return np.ones(n)
    top2 = np.partition(p, c - 2, axis=1)[:, -2:]
    return np.abs(top2[:, 1] - top2[:, 0])


def point_margin(row) -> float:
    """Highest minus second-highest entry of one probability row."""
    row = np.asarray(row, dtype=np.float64).ravel()
    if row.size == 0:
        raise ValueError("empty probability row")
    return float(_margins(row[None, :])[0])


def level_margin(s_r) -> float:
    """Margin of a contextual (neighborhood-averaged) distribution."""
    s_r = np.asarray(s_r, dtype=np.float64).ravel()
    if s_r.size == 0:
        raise ValueError("empty contextual distribution")
    return float(_margins(s_r[None, :])[0])


def contextual_distribution(
    cloud: PointCloud,
    probs: ProbabilityField,
    grid: VoxelGrid,
    center_index: int,
    v_r: float,
) -> np.ndarray:
    """Mean probability row over the ball of radius v_r around one point.

    The center point is always inside its own ball, so the mean is over
    K >= 1 rows and stays on the simplex.
    """
    if not v_r > 0:
        raise ValueError("v_r must be positive")
    center = cloud.positions[int(center_index)]
    ids = radius_neighbors(grid, cloud, center, v_r)
    return probs.probs[ids].mean(axis=0)


def fuse_scores(u_point, u_levels: Sequence, specs: Sequence[LevelSpec]):
    """v = U_x + sum_i omega_i * U_R_i (works elementwise on arrays)."""
    if len(u_levels) != len(specs):
        raise ValueError(
            f"{len(u_levels)} level scores for {len(specs)} level specs"
        )
    v = np.asarray(u_point, dtype=np.float64).copy()
    for u, spec in zip(u_levels, specs):
        v = v + spec.omega * np.asarray(u, dtype=np.float64)
    if v.ndim == 0:
        return float(v)
    return v


def score_hmmu(
    cloud: PointCloud,
    probs: ProbabilityField,
    specs: Sequence[LevelSpec] = DEFAULT_LEVELS,
    approx: bool = False,
) -> UncertaintyScores:
    """Point margin plus weighted contextual margins at each level.

    One grid is built per level with edge v_r. Exact mode averages rows over
    the true ball around every point. ``approx=True`` instead averages per
    voxel and assigns each point its voxel's distribution (cheaper, coarser);
    exact mode is the default and the normative semantics.

    An empty spec list degrades to the plain per-point margin.
    """
    if probs.n_points != cloud.n_points:
        raise ValueError(
            f"probs row-count mismatch: {probs.n_points} rows for {cloud.n_points} points"
        )
    p = probs.probs
    u_point = _margins(p)
    u_levels = []
    for spec in specs:
        grid = build_grid(cloud, spec.v_r)
        if approx:
            order = grid._order
            starts = grid._starts
            p_sorted = p[order]
            sums = np.add.reduceat(p_sorted, starts[:-1], axis=0)
            cnts = np.diff(starts)
            vox_mean = sums / cnts[:, None]
            means = np.empty_like(p)
            means[order] = np.repeat(vox_mean, cnts, axis=0)
        else:
            means, _ = grid.ball_average(p, spec.v_r)
        u_levels.append(_margins(means))
    if specs:
        fused = fuse_scores(u_point, u_levels, list(specs))
    else:
        fused = u_point.copy()
    return UncertaintyScores(u_point, tuple(u_levels), fused)


def score_mmu(probs: ProbabilityField) -> np.ndarray:
    """Plain top-2 margin per point (ascending rank order)."""
    return _margins(probs.probs)


def score_entropy(probs: ProbabilityField) -> np.ndarray:
    """Shannon entropy per row, with 0*log(0) = 0 (descending rank order)."""
    p = probs.probs
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz])
    return -out.sum(axis=1)


def score_least_confidence(probs: ProbabilityField) -> np.ndarray:
    """1 minus the top probability per row (descending rank order)."""
    return 1.0 - probs.probs.max(axis=1)


def score_random(n: int, seed) -> np.ndarray:
    """Seeded uniform draws in [0, 1) (descending rank order)."""
    if n <= 0:
        raise ValueError("n must be positive")
    return np.random.default_rng(seed).random(n)
