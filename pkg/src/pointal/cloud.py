"""Core domain types: point clouds, probability/feature fields, selection state."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np


def _as_float_matrix(a, name: str, cols: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != cols:
        raise ValueError(f"{name} must be an N x {cols} array, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class PointCloud:
    """N points with positions (meters), colors in [0, 1], optional class labels.

    Construction checks shapes only; value-level invariants (finiteness,
    color range, label range) are reported by :func:`validate_cloud`.
    """

    positions: np.ndarray
    colors: np.ndarray
    gt_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = _as_float_matrix(self.positions, "positions", 3)
        col = _as_float_matrix(self.colors, "colors", 3)
        if col.shape[0] != pos.shape[0]:
            raise ValueError(
                f"colors has {col.shape[0]} rows for {pos.shape[0]} points"
            )
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        if self.gt_labels is not None:
            lab = np.asarray(self.gt_labels, dtype=np.int64)
            if lab.ndim != 1 or lab.shape[0] != pos.shape[0]:
                raise ValueError(
                    f"gt_labels has shape {lab.shape} for {pos.shape[0]} points"
                )
            object.__setattr__(self, "gt_labels", lab)

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    def with_labels(self, labels) -> "PointCloud":
        return PointCloud(self.positions, self.colors, labels)


@dataclass(frozen=True)
class ProbabilityField:
    """Per-point class probabilities, one simplex row per point."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError(f"probs must be 2-D, got shape {p.shape}")
        object.__setattr__(self, "probs", p)

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]

    @property
    def n_points(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class FeatureField:
    """Per-point feature vectors."""

    feats: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.feats, dtype=np.float64)
        if f.ndim != 2:
            raise ValueError(f"feats must be 2-D, got shape {f.shape}")
        object.__setattr__(self, "feats", f)

    @property
    def dim(self) -> int:
        return self.feats.shape[1]

    @property
    def n_points(self) -> int:
        return self.feats.shape[0]


def _describe_rows(rows: np.ndarray, limit: int = 5) -> str:
    rows = np.asarray(rows)
    head = ", ".join(str(int(r)) for r in rows[:limit])
    if rows.size > limit:
        return f"rows [{head}, ...] ({rows.size} total)"
    return f"rows [{head}]"


def validate_cloud(
    cloud: PointCloud,
    probs: Optional[ProbabilityField] = None,
    feats: Optional[FeatureField] = None,
) -> list:
    """Check value-level invariants; return a list of violations (empty = ok).

    Never raises: the report names each violated invariant together with the
    offending row indices. Pure: identical inputs give identical reports.
    """
    out = []
    n = cloud.n_points

    bad = np.flatnonzero(~np.isfinite(cloud.positions).all(axis=1))
    if bad.size:
        out.append(f"positions non-finite at {_describe_rows(bad)}")
    finite_col = np.isfinite(cloud.colors).all(axis=1)
    bad = np.flatnonzero(~finite_col)
    if bad.size:
        out.append(f"colors non-finite at {_describe_rows(bad)}")
    in_range = (cloud.colors >= 0.0) & (cloud.colors <= 1.0)
    bad = np.flatnonzero(finite_col & ~in_range.all(axis=1))
    if bad.size:
        out.append(f"colors outside [0, 1] at {_describe_rows(bad)}")
    if cloud.gt_labels is not None:
        bad = np.flatnonzero(cloud.gt_labels < 0)
        if bad.size:
            out.append(f"gt_labels negative at {_describe_rows(bad)}")
        if probs is not None:
            bad = np.flatnonzero(cloud.gt_labels >= probs.n_classes)
            if bad.size:
                out.append(
                    f"gt_labels >= {probs.n_classes} classes at {_describe_rows(bad)}"
                )

    if probs is not None:
        if probs.n_points != n:
            out.append(
                f"probs row-count mismatch: {probs.n_points} rows for {n} points"
            )
        else:
            p = probs.probs
            finite = np.isfinite(p).all(axis=1)
            bad = np.flatnonzero(~finite)
            if bad.size:
                out.append(f"probs non-finite at {_describe_rows(bad)}")
            neg = np.flatnonzero(finite & (p < 0.0).any(axis=1))
            if neg.size:
                out.append(f"probs negative entries at {_describe_rows(neg)}")
            sums = p.sum(axis=1)
            off = finite & (np.abs(sums - 1.0) > 1e-5)
            for r in np.flatnonzero(off)[:5]:
                out.append(f"probs row {int(r)} sums to {sums[r]:.6g}")
            extra = int(np.count_nonzero(off)) - 5
            if extra > 0:
                out.append(f"probs: {extra} further rows off the simplex")

    if feats is not None:
        if feats.n_points != n:
            out.append(
                f"feats row-count mismatch: {feats.n_points} rows for {n} points"
            )
        else:
            bad = np.flatnonzero(~np.isfinite(feats.feats).all(axis=1))
            if bad.size:
                out.append(f"feats non-finite at {_describe_rows(bad)}")

    return out


@dataclass(frozen=True)
class SelectionState:
    """Labeled/unlabeled partition plus the per-iteration selection ledger.

    Immutable value: ``promote_to_labeled`` returns a new state. ``iteration``
    counts recorded selection batches; ``budget_spent`` excludes the initial
    seed labels.
    """

    n_points: int
    labeled: frozenset = frozenset()
    initial_count: int = 0
    selections_per_iteration: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "labeled", frozenset(int(i) for i in self.labeled))

    @staticmethod
    def fresh(n_points: int, initial_labeled: Iterable[int] = ()) -> "SelectionState":
        labeled = frozenset(int(i) for i in initial_labeled)
        for i in labeled:
            if not 0 <= i < n_points:
                raise ValueError(f"initial index {i} out of range for {n_points} points")
        return SelectionState(n_points, labeled, len(labeled), ())

    @property
    def unlabeled(self) -> frozenset:
        return frozenset(range(self.n_points)) - self.labeled

    @property
    def iteration(self) -> int:
        return len(self.selections_per_iteration)

    @property
    def budget_spent(self) -> int:
        return len(self.labeled) - self.initial_count

    def unlabeled_array(self) -> np.ndarray:
        """Ascending unlabeled indices as an array (cheap mask complement)."""
        mask = np.ones(self.n_points, dtype=bool)
        if self.labeled:
            mask[np.fromiter(self.labeled, dtype=np.int64)] = False
        return np.flatnonzero(mask)


def promote_to_labeled(state: SelectionState, indices: Sequence[int]) -> SelectionState:
    """Move ``indices`` from unlabeled to labeled, recording them as one batch.

    Rejects out-of-range or already-labeled indices, naming the offender.
    Promoting an empty list is the identity.
    """
    batch = [int(i) for i in indices]
    if not batch:
        return state
    seen = set()
    for i in batch:
        if not 0 <= i < state.n_points:
            raise ValueError(f"index {i} out of range for {state.n_points} points")
        if i in state.labeled or i in seen:
            raise ValueError(f"index {i} already labeled")
        seen.add(i)
    return replace(
        state,
        labeled=state.labeled | seen,
        selections_per_iteration=state.selections_per_iteration + (tuple(batch),),
    )
