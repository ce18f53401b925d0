"""Teacher-student semi-supervised training and the active-learning loop.

The built-in segmenter is a multinomial logistic regression over the 8-D
geometric features: small enough to gradient-check, big enough to rank
strategies. Each training step augments the cloud, recomputes features,
takes one full-batch cross-entropy step on true plus pseudo targets, then
moves the teacher toward the student by EMA.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .cloud import PointCloud, FeatureField, ProbabilityField, SelectionState, promote_to_labeled
from .metrics import confusion, miou
from .selection import (
    SCORE_DIRECTION,
    SelectionConfig,
    fds_select,
    rank_candidates,
    top_k_select,
)
from .uncertainty import (
    LevelSpec,
    score_entropy,
    score_hmmu,
    score_least_confidence,
    score_mmu,
    score_random,
)
from .voxel_grid import DEFAULT_FEATURE_RADIUS, build_grid, local_geometric_features


@dataclass(frozen=True)
class SegmenterParams:
    """Linear classifier parameters: weights (C x F) and per-class bias."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match {w.shape[0]} classes")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


class TeacherStudent(NamedTuple):
    student: SegmenterParams
    teacher: SegmenterParams


def zeros_params(n_classes: int, n_features: int) -> SegmenterParams:
    return SegmenterParams(np.zeros((n_classes, n_features)), np.zeros(n_classes))


@dataclass(frozen=True)
class TrainerConfig:
    alpha: float = 0.955
    pseudo_threshold: float = 0.75
    learning_rate: float = 1.0
    steps: int = 60
    seed: int = 0
    jitter_sigma: float = 0.01
    color_sigma: float = 0.02
    iterations: int = 5
    per_iter_fraction: float = 0.0002
    initial_fraction: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha out of range [0,1]: {self.alpha}")
        if not 0.0 <= self.pseudo_threshold <= 1.0:
            raise ValueError(f"pseudo_threshold out of range [0,1]: {self.pseudo_threshold}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.jitter_sigma < 0 or self.color_sigma < 0:
            raise ValueError("augmentation sigmas must be non-negative")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not 0.0 <= self.per_iter_fraction <= 1.0:
            raise ValueError(f"per_iter_fraction out of range [0,1]: {self.per_iter_fraction}")
        if not 0.0 <= self.initial_fraction <= 1.0:
            raise ValueError(f"initial_fraction out of range [0,1]: {self.initial_fraction}")


@dataclass(frozen=True)
class IterationReport:
    iteration: int
    labeled_count: int
    labeled_fraction: float
    per_class_iou: tuple
    miou: float
    selected: tuple
    wall_time: float


def report_to_dict(report: IterationReport, include_wall_time: bool = False) -> dict:
    d = {
        "iteration": report.iteration,
        "labeled_count": report.labeled_count,
        "labeled_fraction": report.labeled_fraction,
        "per_class_iou": [
            None if np.isnan(v) else float(v) for v in report.per_class_iou
        ],
        "miou": report.miou,
        "selected": list(report.selected),
    }
    if include_wall_time:
        d["wall_time"] = report.wall_time
    return d


def predict(params: SegmenterParams, feats: FeatureField) -> ProbabilityField:
    """Row-wise softmax of the linear logits."""
    F = feats.feats
    if F.shape[1] != params.n_features:
        raise ValueError(
            f"feature dim {F.shape[1]} does not match params dim {params.n_features}"
        )
    z = F @ params.weights.T + params.bias
    z -= z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return ProbabilityField(z)


def augment(
    cloud: PointCloud, jitter_sigma: float, color_sigma: float, rng: np.random.Generator
) -> PointCloud:
    """Gaussian position jitter and clamped Gaussian color noise."""
    if jitter_sigma < 0 or color_sigma < 0:
        raise ValueError("sigmas must be non-negative")
    n = cloud.n_points
    pos = cloud.positions + rng.normal(0.0, jitter_sigma, (n, 3))
    col = np.clip(cloud.colors + rng.normal(0.0, color_sigma, (n, 3)), 0.0, 1.0)
    return PointCloud(pos, col, cloud.gt_labels)


def _pseudo_mask(probs: np.ndarray, labeled_mask: np.ndarray, threshold: float):
    conf = probs.max(axis=1)
    mask = (conf > threshold) & ~labeled_mask
    idx = np.flatnonzero(mask)
    return idx, probs[idx].argmax(axis=1)


def pseudo_labels(
    teacher_probs: ProbabilityField, labeled, threshold: float
) -> dict:
    """Argmax class for each unlabeled point whose confidence exceeds threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold out of range [0,1]: {threshold}")
    labeled_mask = np.zeros(teacher_probs.n_points, dtype=bool)
    lab = list(labeled)
    if lab:
        labeled_mask[np.asarray(lab, dtype=np.int64)] = True
    idx, cls = _pseudo_mask(teacher_probs.probs, labeled_mask, threshold)
    return {int(i): int(c) for i, c in zip(idx, cls)}


def _targets_arrays(targets: Mapping[int, int]):
    idx = np.fromiter(targets.keys(), dtype=np.int64)
    y = np.fromiter(targets.values(), dtype=np.int64)
    order = np.argsort(idx, kind="stable")
    return idx[order], y[order]


def _log_softmax(params: SegmenterParams, F: np.ndarray) -> np.ndarray:
    z = F @ params.weights.T + params.bias
    z -= z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy_loss(params: SegmenterParams, feats: FeatureField, targets) -> float:
    """Mean negative log-likelihood over the target points."""
    idx, y = _targets_arrays(targets) if isinstance(targets, Mapping) else targets
    if idx.shape[0] == 0:
        raise ValueError("no training targets")
    logp = _log_softmax(params, feats.feats[idx])
    return float(-logp[np.arange(idx.shape[0]), y].mean())


def _gd_step(
    params: SegmenterParams, F: np.ndarray, idx: np.ndarray, y: np.ndarray, lr: float
) -> SegmenterParams:
    Fm = F[idx]
    m = idx.shape[0]
    z = Fm @ params.weights.T + params.bias
    z -= z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    z[np.arange(m), y] -= 1.0
    grad_w = z.T @ Fm / m
    grad_b = z.mean(axis=0)
    return SegmenterParams(
        params.weights - lr * grad_w, params.bias - lr * grad_b
    )


def student_step(
    params: SegmenterParams, feats: FeatureField, targets: Mapping[int, int], learning_rate: float
) -> SegmenterParams:
    """One full-batch gradient-descent step on mean cross-entropy.

    True and pseudo targets are passed in one map and weighted equally.
    """
    if not targets:
        raise ValueError("no training targets")
    idx, y = _targets_arrays(targets)
    if y.min() < 0 or y.max() >= params.n_classes:
        raise ValueError(f"target class out of range [0, {params.n_classes})")
    return _gd_step(params, feats.feats, idx, y, learning_rate)


def ema_update(
    theta_t: SegmenterParams, theta_s: SegmenterParams, alpha: float
) -> SegmenterParams:
    """Elementwise alpha * teacher + (1 - alpha) * student."""
    if theta_t.weights.shape != theta_s.weights.shape:
        raise ValueError(
            f"shape mismatch: {theta_t.weights.shape} vs {theta_s.weights.shape}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha out of range [0,1]: {alpha}")
    return SegmenterParams(
        alpha * theta_t.weights + (1.0 - alpha) * theta_s.weights,
        alpha * theta_t.bias + (1.0 - alpha) * theta_s.bias,
    )


def train_iteration(
    cloud: PointCloud,
    feats: FeatureField,
    state: SelectionState,
    params,
    cfg: TrainerConfig,
    rng: Optional[np.random.Generator] = None,
    feature_radius: float = DEFAULT_FEATURE_RADIUS,
):
    """One active-learning round of teacher-student training.

    Per step: the teacher predicts on the clean features and pseudo-labels
    confident unlabeled points; the student takes a gradient step on freshly
    augmented features over true + pseudo targets; the teacher tracks the
    student by EMA. Returns (TeacherStudent, student predictions on the
    final training view), so downstream scoring sees the per-point jitter
    the student itself trains under. With steps=0 the params pass through
    untouched (clean-feature predictions).
    """
    if cloud.gt_labels is None:
        raise ValueError("cloud has no ground-truth labels to train from")
    student, teacher = params
    labeled_idx = np.fromiter(sorted(state.labeled), dtype=np.int64, count=len(state.labeled))
    if labeled_idx.shape[0] == 0:
        raise ValueError("no labeled points")
    if cfg.steps == 0:
        return TeacherStudent(student, teacher), predict(student, feats)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    teacher = student
    labeled_mask = np.zeros(cloud.n_points, dtype=bool)
    labeled_mask[labeled_idx] = True
    y_lab = cloud.gt_labels[labeled_idx]
    for _ in range(cfg.steps):
        teacher_probs = predict(teacher, feats)
        p_idx, p_cls = _pseudo_mask(
            teacher_probs.probs, labeled_mask, cfg.pseudo_threshold
        )
        aug = augment(cloud, cfg.jitter_sigma, cfg.color_sigma, rng)
        aug_feats = local_geometric_features(aug, feature_radius)
        idx = np.concatenate([labeled_idx, p_idx])
        y = np.concatenate([y_lab, p_cls])
        student = _gd_step(student, aug_feats.feats, idx, y, cfg.learning_rate)
        teacher = ema_update(teacher, student, cfg.alpha)
    return TeacherStudent(student, teacher), predict(student, aug_feats)


def _strategy_scores(
    strategy: str,
    cloud: PointCloud,
    probs: ProbabilityField,
    level_specs: Sequence[LevelSpec],
    seed,
):
    if strategy == "random":
        return score_random(cloud.n_points, seed)
    if strategy == "entropy":
        return score_entropy(probs)
    if strategy == "lc":
        return score_least_confidence(probs)
    if strategy == "mmu":
        return score_mmu(probs)
    if strategy in ("hmmu", "hmmu_fds"):
        return score_hmmu(cloud, probs, level_specs).fused
    raise ValueError(f"unknown strategy '{strategy}'")


def active_loop(
    cloud: PointCloud,
    cfg: TrainerConfig,
    sel_cfg: SelectionConfig,
    level_specs: Sequence[LevelSpec],
    feature_radius: float = DEFAULT_FEATURE_RADIUS,
    retrain_from_scratch: bool = False,
) -> list:
    """Full multi-iteration loop: train, score, select, annotate, report.

    Ground-truth labels play the annotator. The labeled count after
    iteration i is floor(initial_fraction*N) + floor(i*per_iter_fraction*N).
    Acquisition scores come from the student's predictions on its final
    training view; the reported mIoU comes from the teacher (the student's
    EMA) on the clean features. The hmmu_fds strategy seeds suppression
    with all previously labeled points, so a new pick never duplicates an
    existing annotation's neighborhood. By default training fine-tunes
    across iterations; retrain_from_scratch resets the params each
    iteration instead.
    """
    if cloud.gt_labels is None:
        raise ValueError("cloud has no ground-truth labels to act as the annotator")
    n = cloud.n_points
    gt = cloud.gt_labels
    n_classes = int(gt.max()) + 1
    feats = local_geometric_features(cloud, feature_radius)
    init_count = int(np.floor(cfg.initial_fraction * n))
    init_rng = np.random.default_rng((cfg.seed, 0))
    initial = init_rng.choice(n, size=init_count, replace=False) if init_count else ()
    state = SelectionState.fresh(n, initial)
    student = teacher = zeros_params(n_classes, feats.dim)
    fds_grid = build_grid(cloud, sel_cfg.r) if sel_cfg.strategy == "hmmu_fds" else None
    reports = []
    for it in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        if retrain_from_scratch:
            student = teacher = zeros_params(n_classes, feats.dim)
        if state.labeled:
            (student, teacher), probs = train_iteration(
                cloud,
                feats,
                state,
                TeacherStudent(student, teacher),
                cfg,
                rng=np.random.default_rng((cfg.seed, it)),
                feature_radius=feature_radius,
            )
        else:
            probs = predict(student, feats)
        scores = _strategy_scores(
            sel_cfg.strategy, cloud, probs, level_specs, (cfg.seed, it, 1)
        )
        ranked = rank_candidates(
            scores, state.unlabeled_array(), SCORE_DIRECTION[sel_cfg.strategy]
        )
        target = init_count + int(np.floor(it * cfg.per_iter_fraction * n))
        budget = max(0, target - len(state.labeled))
        if sel_cfg.strategy == "hmmu_fds":
            result = fds_select(
                ranked,
                cloud,
                feats,
                replace(sel_cfg, budget_k=budget),
                fds_grid,
                preselected=sorted(state.labeled),
            )
        else:
            result = top_k_select(ranked, budget)
        state = promote_to_labeled(state, result.selected)
        pred = predict(teacher, feats).probs.argmax(axis=1)
        cm = confusion(pred, gt, n_classes)
        miou_val, per_class = miou(cm)
        reports.append(
            IterationReport(
                iteration=it,
                labeled_count=len(state.labeled),
                labeled_fraction=len(state.labeled) / n,
                per_class_iou=tuple(float(v) for v in per_class),
                miou=miou_val,
                selected=result.selected,
                wall_time=time.perf_counter() - t0,
            )
        )
    return reports
