"""Hierarchical point-based active learning for point-cloud segmentation."""

from .cloud import (
    FeatureField,
    PointCloud,
    ProbabilityField,
    SelectionState,
    promote_to_labeled,
    validate_cloud,
)
from .data_io import (
    ConfigError,
    DataFormatError,
    SceneSpec,
    config_from_dict,
    effective_config,
    gen_synthetic,
    load_config,
    load_matrix,
    load_ply,
    load_selection,
    load_state,
    save_matrix,
    save_ply,
    save_selection,
    save_state,
    state_from_dict,
    state_to_dict,
)
from .metrics import ConfusionMatrix, compare_strategies, confusion, miou
from .selection import (
    SCORE_DIRECTION,
    VALID_STRATEGIES,
    SelectionConfig,
    SelectionResult,
    SuppressionRecord,
    cosine_similarity,
    fds_select,
    rank_candidates,
    top_k_select,
)
from .trainer import (
    IterationReport,
    SegmenterParams,
    TeacherStudent,
    TrainerConfig,
    active_loop,
    augment,
    cross_entropy_loss,
    ema_update,
    predict,
    pseudo_labels,
    report_to_dict,
    student_step,
    train_iteration,
    zeros_params,
)
from .uncertainty import (
    DEFAULT_LEVELS,
    LevelSpec,
    UncertaintyScores,
    contextual_distribution,
    fuse_scores,
    level_margin,
    point_margin,
    score_entropy,
    score_hmmu,
    score_least_confidence,
    score_mmu,
    score_random,
)
from .voxel_grid import (
    DEFAULT_FEATURE_RADIUS,
    VoxelGrid,
    build_grid,
    local_geometric_features,
    radius_neighbors,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConfusionMatrix",
    "DataFormatError",
    "DEFAULT_FEATURE_RADIUS",
    "DEFAULT_LEVELS",
    "FeatureField",
    "IterationReport",
    "LevelSpec",
    "PointCloud",
    "ProbabilityField",
    "SCORE_DIRECTION",
    "SceneSpec",
    "SegmenterParams",
    "SelectionConfig",
    "SelectionResult",
    "SelectionState",
    "SuppressionRecord",
    "TeacherStudent",
    "TrainerConfig",
    "UncertaintyScores",
    "VALID_STRATEGIES",
    "VoxelGrid",
    "active_loop",
    "augment",
    "build_grid",
    "compare_strategies",
    "config_from_dict",
    "confusion",
    "contextual_distribution",
    "cosine_similarity",
    "cross_entropy_loss",
    "effective_config",
    "ema_update",
    "fds_select",
    "fuse_scores",
    "gen_synthetic",
    "level_margin",
    "load_config",
    "load_matrix",
    "load_ply",
    "load_selection",
    "load_state",
    "local_geometric_features",
    "miou",
    "point_margin",
    "predict",
    "promote_to_labeled",
    "pseudo_labels",
    "radius_neighbors",
    "rank_candidates",
    "report_to_dict",
    "save_matrix",
    "save_ply",
    "save_selection",
    "save_state",
    "score_entropy",
    "score_hmmu",
    "score_least_confidence",
    "score_mmu",
    "score_random",
    "state_from_dict",
    "state_to_dict",
    "student_step",
    "top_k_select",
    "train_iteration",
    "validate_cloud",
    "zeros_params",
]
