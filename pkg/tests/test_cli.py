"""End-to-end runs of the command line through main(argv)."""

import contextlib
import io
import json

import numpy as np
import pytest

from pointal.cli import main
from pointal.cloud import FeatureField, PointCloud, ProbabilityField
from pointal.data_io import (
    SceneSpec,
    gen_synthetic,
    load_matrix,
    load_ply,
    load_selection,
    save_matrix,
    save_ply,
    save_selection,
)
from pointal.selection import SelectionConfig, fds_select, rank_candidates
from pointal.uncertainty import LevelSpec, score_hmmu, score_mmu
from pointal.voxel_grid import build_grid


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """A dense labeled cloud plus matching score/feature/label files."""
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(11)
    n = 500
    positions = rng.random((n, 3))
    colors = rng.random((n, 3))
    labels = rng.integers(0, 4, n)
    save_ply(PointCloud(positions, colors, labels), root / "dense.ply")

    raw = rng.gamma(1.0, 1.0, (n, 4))
    probs = (raw / raw.sum(axis=1, keepdims=True)).astype(np.float32)
    save_matrix(probs, root / "probs.bin")

    protos = rng.normal(size=(3, 5))
    feats = protos[rng.integers(0, 3, n)] + rng.normal(0.0, 0.01, (n, 5))
    save_matrix(feats.astype(np.float32), root / "feats.bin")

    scores = rng.random((n, 1)).astype(np.float32)
    save_matrix(scores, root / "scores.bin")

    save_selection([3, 50, 200], root / "labeled.txt")
    return root


def quiet(argv):
    """main() with stdout/stderr captured; returns (rc, out, err)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        rc = main(argv)
    return rc, out.getvalue(), err.getvalue()


class TestGen:
    def test_writes_scene_and_prints_counts(self, tmp_path, capsys):
        out = tmp_path / "scene.ply"
        rc = main(
            ["gen", "--points", "400", "--classes", "3", "--seed", "2",
             "--out", str(out)]
        )
        assert rc == 0
        printed = capsys.readouterr().out.strip().split("\n")
        assert printed[-1] == "total: 400"
        counts = [int(line.split(": ")[1]) for line in printed[:-1]]
        assert len(counts) == 3 and sum(counts) == 400
        cloud = load_ply(out)
        assert cloud.n_points == 400
        assert np.array_equal(np.bincount(cloud.gt_labels, minlength=3), counts)

    def test_same_seed_same_bytes(self, tmp_path):
        args = ["gen", "--points", "300", "--seed", "5"]
        assert quiet(args + ["--out", str(tmp_path / "a.ply")])[0] == 0
        assert quiet(args + ["--out", str(tmp_path / "b.ply")])[0] == 0
        assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()

    def test_bad_spec_is_reported(self, tmp_path):
        rc, _, err = quiet(["gen", "--points", "0", "--out", str(tmp_path / "x.ply")])
        assert rc == 1
        assert err.startswith("error:")

    def test_custom_extent(self, tmp_path):
        rc, _, _ = quiet(
            ["gen", "--points", "200", "--extent", "4,5,2",
             "--out", str(tmp_path / "s.ply")]
        )
        assert rc == 0
        assert load_ply(tmp_path / "s.ply").positions[:, 0].max() <= 4.6


class TestScore:
    def test_mmu_matches_library(self, ws, tmp_path, capsys):
        out = tmp_path / "mmu.bin"
        rc = main(
            ["score", "--cloud", str(ws / "dense.ply"), "--probs",
             str(ws / "probs.bin"), "--strategy", "mmu", "--out", str(out)]
        )
        assert rc == 0
        err = capsys.readouterr().err
        assert err.startswith("config: ")
        assert '"strategy": "mmu"' in err
        got = load_matrix(out)
        assert got.shape == (500, 1) and got.dtype == np.float32
        probs = ProbabilityField(load_matrix(ws / "probs.bin").astype(np.float64))
        want = score_mmu(probs).astype(np.float32)
        assert np.array_equal(got[:, 0], want)

    def test_hmmu_uses_config_levels(self, ws, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(
            {"levels": [{"radius_m": 0.5, "weight": 0.1}], "strategy": "hmmu"}
        ))
        out = tmp_path / "h.bin"
        rc, _, err = quiet(
            ["score", "--cloud", str(ws / "dense.ply"), "--probs",
             str(ws / "probs.bin"), "--config", str(cfg), "--out", str(out)]
        )
        assert rc == 0
        assert '"radius_m": 0.5' in err
        cloud = load_ply(ws / "dense.ply")
        probs = ProbabilityField(load_matrix(ws / "probs.bin").astype(np.float64))
        want = score_hmmu(cloud, probs, [LevelSpec(0.5, 0.1)]).fused
        assert np.array_equal(load_matrix(out)[:, 0], want.astype(np.float32))

    def test_random_is_seeded(self, ws, tmp_path):
        base = ["score", "--cloud", str(ws / "dense.ply"), "--probs",
                str(ws / "probs.bin"), "--strategy", "random"]
        quiet(base + ["--seed", "7", "--out", str(tmp_path / "a.bin")])
        quiet(base + ["--seed", "7", "--out", str(tmp_path / "b.bin")])
        quiet(base + ["--seed", "8", "--out", str(tmp_path / "c.bin")])
        a = (tmp_path / "a.bin").read_bytes()
        assert a == (tmp_path / "b.bin").read_bytes()
        assert a != (tmp_path / "c.bin").read_bytes()

    def test_row_mismatch_is_reported(self, ws, tmp_path):
        bad = tmp_path / "short.bin"
        save_matrix(np.ones((10, 4), dtype=np.float32), bad)
        rc, _, err = quiet(
            ["score", "--cloud", str(ws / "dense.ply"), "--probs", str(bad),
             "--strategy", "mmu", "--out", str(tmp_path / "o.bin")]
        )
        assert rc == 1 and "mismatch" in err


class TestSelect:
    def test_top_k_via_mmu_strategy(self, ws, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"strategy": "mmu"}))
        out = tmp_path / "sel.txt"
        report = tmp_path / "report.json"
        rc, _, _ = quiet(
            ["select", "--cloud", str(ws / "dense.ply"), "--scores",
             str(ws / "scores.bin"), "--features", str(ws / "feats.bin"),
             "--k", "5", "--config", str(cfg), "--out", str(out),
             "--report", str(report)]
        )
        assert rc == 0
        scores = load_matrix(ws / "scores.bin")[:, 0].astype(np.float64)
        want = rank_candidates(scores, np.arange(500), "ascending")[:5].tolist()
        assert load_selection(out) == want
        rep = json.loads(report.read_text())
        assert rep["strategy"] == "mmu" and rep["k"] == 5
        assert rep["exhausted"] is False and rep["suppressed"] == []
        assert [e["index"] for e in rep["selected"]] == want
        assert [e["score"] for e in rep["selected"]] == [scores[i] for i in want]

    def test_fds_matches_library_and_skips_labeled(self, ws, tmp_path):
        out = tmp_path / "sel.txt"
        report = tmp_path / "report.json"
        rc, _, _ = quiet(
            ["select", "--cloud", str(ws / "dense.ply"), "--scores",
             str(ws / "scores.bin"), "--features", str(ws / "feats.bin"),
             "--labeled", str(ws / "labeled.txt"), "--k", "12",
             "--out", str(out), "--report", str(report)]
        )
        assert rc == 0
        got = load_selection(out)

        cloud = load_ply(ws / "dense.ply")
        scores = load_matrix(ws / "scores.bin")[:, 0].astype(np.float64)
        feats = FeatureField(load_matrix(ws / "feats.bin").astype(np.float64))
        labeled = [3, 50, 200]
        mask = np.ones(500, dtype=bool)
        mask[labeled] = False
        ranked = rank_candidates(scores, np.flatnonzero(mask), "ascending")
        cfg = SelectionConfig(budget_k=12, r=0.2, tau=0.8, strategy="hmmu_fds")
        want = fds_select(
            ranked, cloud, feats, cfg, build_grid(cloud, 0.2), preselected=labeled
        )
        assert got == list(want.selected)
        assert not set(got) & set(labeled)

        rep = json.loads(report.read_text())
        assert [s["index"] for s in rep["suppressed"]] == [
            s.index for s in want.suppressed
        ]
        for s_json, s_lib in zip(rep["suppressed"], want.suppressed):
            assert s_json["blocker"] == s_lib.blocker
            assert s_json["similarity"] == s_lib.similarity
        # the dense unit cube with prototype features must actually suppress
        assert rep["suppressed"]

    def test_k_zero_selects_nothing(self, ws, tmp_path):
        out = tmp_path / "sel.txt"
        rc, _, _ = quiet(
            ["select", "--cloud", str(ws / "dense.ply"), "--scores",
             str(ws / "scores.bin"), "--features", str(ws / "feats.bin"),
             "--k", "0", "--out", str(out)]
        )
        assert rc == 0 and load_selection(out) == []

    def test_negative_k_rejected(self, ws, tmp_path):
        rc, _, err = quiet(
            ["select", "--cloud", str(ws / "dense.ply"), "--scores",
             str(ws / "scores.bin"), "--features", str(ws / "feats.bin"),
             "--k", "-1", "--out", str(tmp_path / "s.txt")]
        )
        assert rc == 1 and "non-negative" in err

    def test_wrong_scores_shape_rejected(self, ws, tmp_path):
        bad = tmp_path / "bad.bin"
        save_matrix(np.ones((500, 2), dtype=np.float32), bad)
        rc, _, err = quiet(
            ["select", "--cloud", str(ws / "dense.ply"), "--scores", str(bad),
             "--features", str(ws / "feats.bin"), "--k", "3",
             "--out", str(tmp_path / "s.txt")]
        )
        assert rc == 1 and "scores must be 500x1" in err

    def test_labeled_out_of_range_rejected(self, ws, tmp_path):
        lab = tmp_path / "lab.txt"
        save_selection([500], lab)
        rc, _, err = quiet(
            ["select", "--cloud", str(ws / "dense.ply"), "--scores",
             str(ws / "scores.bin"), "--features", str(ws / "feats.bin"),
             "--labeled", str(lab), "--k", "3", "--out", str(tmp_path / "s.txt")]
        )
        assert rc == 1 and "out of range" in err


SIM_CONFIG = {
    "trainer": {"steps": 3, "learning_rate": 2.0},
    "budget": {"iterations": 2, "per_iter_fraction": 0.004},
    "levels": [{"radius_m": 0.2, "weight": 0.1}],
}


@pytest.fixture(scope="module")
def sim_scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    path = root / "scene.ply"
    save_ply(gen_synthetic(SceneSpec(n_points=1200, n_classes=4, seed=3)), path)
    return path


class TestSimulate:
    def test_small_run_report_shape(self, sim_scene, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(SIM_CONFIG))
        out = tmp_path / "results.json"
        rc, stdout, _ = quiet(
            ["simulate", "--cloud", str(sim_scene), "--config", str(cfg),
             "--strategies", "random,mmu", "--seeds", "2", "--out", str(out)]
        )
        assert rc == 0
        data = json.loads(out.read_text())
        assert data["n_points"] == 1200
        assert data["iterations"] == 2
        assert data["retrain"] is False
        assert data["seeds"] == [1, 2]
        assert set(data["strategies"]) == {"random", "mmu"}

        for strat in ("random", "mmu"):
            block = data["strategies"][strat]
            assert set(block["per_seed"]) == {"1", "2"}
            reports = block["per_seed"]["1"]
            assert [r["iteration"] for r in reports] == [1, 2]
            # floor(i * 0.004 * 1200) labels after iteration i
            assert [r["labeled_count"] for r in reports] == [4, 9]
            assert len(block["mean_miou_per_iteration"]) == 2
            assert 0.0 <= block["mean_final_miou"] <= 1.0

        comp = data["comparison"]
        assert set(comp["per_seed"]) == {"1", "2"}
        table = comp["per_seed"]["1"]
        assert table["iterations"] == [1, 2]
        assert "delta_vs_random" in table["strategies"]["mmu"]
        assert "mmu" in comp["mean_final_delta_vs_random"]
        for strat in ("random", "mmu"):
            assert f"{strat}: mean final mIoU = " in stdout

    def test_unknown_strategy_rejected(self, sim_scene, tmp_path):
        rc, _, err = quiet(
            ["simulate", "--cloud", str(sim_scene), "--strategies", "best",
             "--out", str(tmp_path / "r.json")]
        )
        assert rc == 1 and "unknown strategy" in err

    def test_zero_seeds_rejected(self, sim_scene, tmp_path):
        rc, _, err = quiet(
            ["simulate", "--cloud", str(sim_scene), "--seeds", "0",
             "--out", str(tmp_path / "r.json")]
        )
        assert rc == 1 and "--seeds" in err

    def test_unlabeled_cloud_rejected(self, tmp_path):
        rng = np.random.default_rng(0)
        bare = tmp_path / "bare.ply"
        save_ply(PointCloud(rng.random((50, 3)), rng.random((50, 3))), bare)
        rc, _, err = quiet(
            ["simulate", "--cloud", str(bare), "--out", str(tmp_path / "r.json")]
        )
        assert rc == 1 and "no labels" in err


class TestEval:
    def test_integral_single_column(self, ws, tmp_path, capsys):
        cloud = load_ply(ws / "dense.ply")
        pred = tmp_path / "pred.bin"
        save_matrix(cloud.gt_labels.astype(np.float32).reshape(-1, 1), pred)
        out = tmp_path / "eval.json"
        rc = main(
            ["eval", "--pred", str(pred), "--cloud", str(ws / "dense.ply"),
             "--out", str(out)]
        )
        assert rc == 0
        assert "mIoU = 1.0000" in capsys.readouterr().out
        data = json.loads(out.read_text())
        assert data["miou"] == 1.0
        assert data["per_class_iou"] == [1.0, 1.0, 1.0, 1.0]

    def test_argmax_of_prob_columns(self, ws, tmp_path):
        cloud = load_ply(ws / "dense.ply")
        onehot = np.eye(4, dtype=np.float32)[cloud.gt_labels]
        pred = tmp_path / "pred.bin"
        save_matrix(onehot, pred)
        rc, stdout, _ = quiet(
            ["eval", "--pred", str(pred), "--cloud", str(ws / "dense.ply"),
             "--out", str(tmp_path / "e.json")]
        )
        assert rc == 0 and "mIoU = 1.0000" in stdout

    def test_fractional_class_ids_rejected(self, ws, tmp_path):
        pred = tmp_path / "pred.bin"
        save_matrix(np.full((500, 1), 0.5, dtype=np.float32), pred)
        rc, _, err = quiet(
            ["eval", "--pred", str(pred), "--cloud", str(ws / "dense.ply"),
             "--out", str(tmp_path / "e.json")]
        )
        assert rc == 1 and "integral" in err

    def test_row_mismatch_rejected(self, ws, tmp_path):
        pred = tmp_path / "pred.bin"
        save_matrix(np.zeros((3, 1), dtype=np.uint32), pred)
        rc, _, err = quiet(
            ["eval", "--pred", str(pred), "--cloud", str(ws / "dense.ply"),
             "--out", str(tmp_path / "e.json")]
        )
        assert rc == 1 and "mismatch" in err


class TestErrorSurface:
    def test_missing_file(self, tmp_path):
        rc, _, err = quiet(
            ["score", "--cloud", str(tmp_path / "nope.ply"), "--probs",
             str(tmp_path / "nope.bin"), "--out", str(tmp_path / "o.bin")]
        )
        assert rc == 1
        assert err.strip().split("\n")[-1].startswith("error:")

    def test_bad_config_key(self, ws, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"oops": 1}))
        rc, _, err = quiet(
            ["score", "--cloud", str(ws / "dense.ply"), "--probs",
             str(ws / "probs.bin"), "--config", str(cfg),
             "--out", str(tmp_path / "o.bin")]
        )
        assert rc == 1 and "unknown key 'oops'" in err

    def test_negative_threads(self, tmp_path):
        rc, _, err = quiet(
            ["gen", "--points", "10", "--threads", "-1",
             "--out", str(tmp_path / "s.ply")]
        )
        assert rc == 1 and "--threads" in err

    def test_threads_flag_accepted(self, tmp_path):
        rc, _, _ = quiet(
            ["gen", "--points", "10", "--classes", "2", "--threads", "1",
             "--out", str(tmp_path / "s.ply")]
        )
        assert rc == 0
