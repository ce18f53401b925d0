"""Command-line interface: gen, score, select, simulate, eval.

Every subcommand with identical inputs and seed writes byte-identical
outputs; errors go to stderr with the prefix "error: " and a nonzero exit.
The effective merged configuration is echoed to stderr for commands that
take one.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data_io
from .cloud import PointCloud, ProbabilityField, FeatureField
from .metrics import compare_strategies, confusion, miou
from .selection import (
    SCORE_DIRECTION,
    VALID_STRATEGIES,
    SelectionConfig,
    fds_select,
    rank_candidates,
    top_k_select,
)
from .trainer import active_loop, report_to_dict
from .uncertainty import (
    score_entropy,
    score_hmmu,
    score_least_confidence,
    score_mmu,
    score_random,
)
from .voxel_grid import build_grid


def _set_threads(n: int) -> None:
    # 0 = leave numba's automatic thread count in place
    if n < 0:
        raise ValueError("--threads must be >= 0")
    if n > 0:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _echo_config(trainer_cfg, sel_cfg, levels) -> None:
    eff = data_io.effective_config(trainer_cfg, sel_cfg, levels)
    print("config: " + json.dumps(eff, sort_keys=True), file=sys.stderr)


def _load_config_arg(path):
    if path is None:
        return data_io.config_from_dict({})
    return data_io.load_config(path)


def _write_json(obj, path) -> None:
    Path(path).write_text(
        json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def cmd_gen(args) -> int:
    extent = tuple(float(v) for v in args.extent.split(","))
    spec = data_io.SceneSpec(
        n_points=args.points,
        n_classes=args.classes,
        extent=extent,
        surface_noise=args.surface_noise,
        color_noise=args.color_noise,
        outlier_fraction=args.outlier_fraction,
        seed=args.seed,
    )
    cloud = data_io.gen_synthetic(spec)
    data_io.save_ply(cloud, args.out)
    counts = np.bincount(cloud.gt_labels, minlength=args.classes)
    for c in range(args.classes):
        print(f"class {c}: {int(counts[c])}")
    print(f"total: {cloud.n_points}")
    return 0


def _load_probs(path, cloud: PointCloud) -> ProbabilityField:
    mat = data_io.load_matrix(path)
    if mat.dtype != np.float32:
        raise ValueError("probability matrix must hold floats")
    if mat.shape[0] != cloud.n_points:
        raise ValueError(
            f"probs row-count mismatch: {mat.shape[0]} rows for {cloud.n_points} points"
        )
    return ProbabilityField(mat.astype(np.float64))


def cmd_score(args) -> int:
    trainer_cfg, sel_cfg, levels = _load_config_arg(args.config)
    if args.strategy is not None:
        sel_cfg = replace(sel_cfg, strategy=args.strategy)
    _echo_config(trainer_cfg, sel_cfg, levels)
    cloud = data_io.load_ply(args.cloud)
    probs = _load_probs(args.probs, cloud)
    strategy = sel_cfg.strategy
    if strategy == "random":
        seed = args.seed if args.seed is not None else trainer_cfg.seed
        scores = score_random(cloud.n_points, seed)
    elif strategy == "entropy":
        scores = score_entropy(probs)
    elif strategy == "lc":
        scores = score_least_confidence(probs)
    elif strategy == "mmu":
        scores = score_mmu(probs)
    else:
        scores = score_hmmu(cloud, probs, levels).fused
    data_io.save_matrix(scores.reshape(-1, 1).astype(np.float32), args.out)
    return 0


def cmd_select(args) -> int:
    trainer_cfg, sel_cfg, levels = _load_config_arg(args.config)
    if args.k < 0:
        raise ValueError("K must be non-negative")
    _echo_config(trainer_cfg, sel_cfg, levels)
    cloud = data_io.load_ply(args.cloud)
    n = cloud.n_points
    scores_mat = data_io.load_matrix(args.scores)
    if scores_mat.shape != (n, 1):
        raise ValueError(
            f"scores must be {n}x1, got {scores_mat.shape[0]}x{scores_mat.shape[1]}"
        )
    scores = scores_mat[:, 0].astype(np.float64)
    feats_mat = data_io.load_matrix(args.features)
    if feats_mat.shape[0] != n:
        raise ValueError(
            f"feats row-count mismatch: {feats_mat.shape[0]} rows for {n} points"
        )
    feats = FeatureField(feats_mat.astype(np.float64))
    labeled = []
    if args.labeled is not None:
        labeled = data_io.load_selection(args.labeled)
        for i in labeled:
            if i >= n:
                raise ValueError(f"labeled index {i} out of range for {n} points")
    mask = np.ones(n, dtype=bool)
    if labeled:
        mask[np.asarray(labeled, dtype=np.int64)] = False
    unlabeled = np.flatnonzero(mask)
    strategy = sel_cfg.strategy
    ranked = rank_candidates(scores, unlabeled, SCORE_DIRECTION[strategy])
    cfg = replace(sel_cfg, budget_k=args.k)
    if strategy == "hmmu_fds":
        grid = build_grid(cloud, cfg.r)
        result = fds_select(ranked, cloud, feats, cfg, grid, preselected=labeled)
    else:
        result = top_k_select(ranked, cfg.budget_k)
    data_io.save_selection(result.selected, args.out)
    if args.report is not None:
        report = {
            "strategy": strategy,
            "k": args.k,
            "exhausted": result.exhausted,
            "selected": [
                {"index": int(i), "score": float(scores[i])} for i in result.selected
            ],
            "suppressed": [
                {
                    "index": s.index,
                    "blocker": s.blocker,
                    "distance": s.distance,
                    "similarity": s.similarity,
                }
                for s in result.suppressed
            ],
        }
        _write_json(report, args.report)
    return 0


def cmd_simulate(args) -> int:
    trainer_cfg, sel_cfg, levels = _load_config_arg(args.config)
    _echo_config(trainer_cfg, sel_cfg, levels)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if not strategies:
        raise ValueError("no strategies given")
    for s in strategies:
        if s not in VALID_STRATEGIES:
            raise ValueError(
                f"unknown strategy '{s}'; valid: {', '.join(VALID_STRATEGIES)}"
            )
    if args.seeds < 1:
        raise ValueError("--seeds must be >= 1")
    cloud = data_io.load_ply(args.cloud)
    if cloud.gt_labels is None:
        raise ValueError("cloud has no labels; simulate needs a labeled scene")
    seeds = list(range(1, args.seeds + 1))
    all_reports = {}
    for strat in strategies:
        per_seed = {}
        for seed in seeds:
            cfg = replace(trainer_cfg, seed=seed)
            scfg = replace(sel_cfg, strategy=strat)
            per_seed[seed] = active_loop(
                cloud, cfg, scfg, levels, retrain_from_scratch=args.retrain
            )
        all_reports[strat] = per_seed
    results = {
        "n_points": cloud.n_points,
        "iterations": trainer_cfg.iterations,
        "retrain": bool(args.retrain),
        "seeds": seeds,
        "strategies": {},
        "comparison": {"per_seed": {}},
    }
    for strat, per_seed in all_reports.items():
        finals = [per_seed[s][-1].miou for s in seeds if per_seed[s]]
        curves = np.array([[r.miou for r in per_seed[s]] for s in seeds])
        results["strategies"][strat] = {
            "per_seed": {
                str(s): [report_to_dict(r) for r in per_seed[s]] for s in seeds
            },
            "mean_miou_per_iteration": [float(v) for v in curves.mean(axis=0)]
            if curves.size
            else [],
            "mean_final_miou": float(np.mean(finals)) if finals else None,
        }
    for seed in seeds:
        results["comparison"]["per_seed"][str(seed)] = compare_strategies(
            {strat: all_reports[strat][seed] for strat in strategies}
        )
    mean_final = {
        strat: results["strategies"][strat]["mean_final_miou"] for strat in strategies
    }
    if "random" in mean_final:
        results["comparison"]["mean_final_delta_vs_random"] = {
            strat: mean_final[strat] - mean_final["random"]
            for strat in strategies
            if strat != "random"
        }
    results["comparison"]["mean_final_miou"] = mean_final
    _write_json(results, args.out)
    for strat in sorted(strategies):
        print(f"{strat}: mean final mIoU = {mean_final[strat]:.4f}")
    return 0


def cmd_eval(args) -> int:
    cloud = data_io.load_ply(args.cloud)
    if cloud.gt_labels is None:
        raise ValueError("cloud has no ground-truth labels to evaluate against")
    n = cloud.n_points
    mat = data_io.load_matrix(args.pred)
    if mat.shape[0] != n:
        raise ValueError(
            f"prediction row-count mismatch: {mat.shape[0]} rows for {n} points"
        )
    if mat.shape[1] == 1:
        if mat.dtype == np.float32 and (mat != np.rint(mat)).any():
            raise ValueError("single-column float predictions must be integral class ids")
        pred = mat[:, 0].astype(np.int64)
    else:
        pred = mat.argmax(axis=1).astype(np.int64)
    gt = cloud.gt_labels
    n_classes = int(max(gt.max(), pred.max())) + 1
    cm = confusion(pred, gt, n_classes)
    miou_val, per_class = miou(cm)
    out = {
        "n_points": n,
        "miou": miou_val,
        "per_class_iou": [None if np.isnan(v) else float(v) for v in per_class],
    }
    _write_json(out, args.out)
    print(f"mIoU = {miou_val:.4f}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pointal",
        description="Hierarchical point-based active learning on point clouds",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic labeled scene")
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extent", type=str, default="10,10,3")
    p.add_argument("--surface-noise", type=float, default=0.005)
    p.add_argument("--color-noise", type=float, default=0.05)
    p.add_argument("--outlier-fraction", type=float, default=0.005)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("score", help="score a cloud's points for acquisition")
    p.add_argument("--cloud", type=str, required=True)
    p.add_argument("--probs", type=str, required=True)
    p.add_argument("--strategy", type=str, default=None, choices=VALID_STRATEGIES)
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("select", help="pick an annotation batch from scores")
    p.add_argument("--cloud", type=str, required=True)
    p.add_argument("--scores", type=str, required=True)
    p.add_argument("--features", type=str, required=True)
    p.add_argument("--labeled", type=str, default=None)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--report", type=str, default=None)
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="run the full active-learning loop")
    p.add_argument("--cloud", type=str, required=True)
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--strategies", type=str, default="hmmu_fds")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--retrain", action="store_true",
                   help="reset model params at each iteration instead of fine-tuning")
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="mIoU of predictions against a labeled cloud")
    p.add_argument("--pred", type=str, required=True)
    p.add_argument("--cloud", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
        _set_threads(args.threads)
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main_entry() -> None:
    sys.exit(main())
