import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pointal.cloud import (
    FeatureField,
    PointCloud,
    ProbabilityField,
    SelectionState,
    promote_to_labeled,
    validate_cloud,
)

from oracles import simplex_rows


def make_cloud(n=10, seed=0, labels=True):
    rng = np.random.default_rng(seed)
    lab = rng.integers(0, 4, n) if labels else None
    return PointCloud(rng.random((n, 3)), rng.random((n, 3)), lab)


class TestPointCloud:
    def test_shapes_coerced_to_float64(self):
        c = PointCloud([[1, 2, 3]], [[0, 0, 0]])
        assert c.positions.dtype == np.float64
        assert c.colors.dtype == np.float64
        assert c.n_points == 1
        assert c.gt_labels is None

    def test_bad_position_shape(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((4, 2)), np.zeros((4, 3)))

    def test_color_row_mismatch(self):
        with pytest.raises(ValueError, match="colors"):
            PointCloud(np.zeros((4, 3)), np.zeros((3, 3)))

    def test_label_length_mismatch(self):
        with pytest.raises(ValueError, match="gt_labels"):
            PointCloud(np.zeros((4, 3)), np.zeros((4, 3)), [0, 1])

    def test_with_labels(self):
        c = make_cloud(labels=False)
        c2 = c.with_labels(np.zeros(10, dtype=np.int64))
        assert c2.gt_labels is not None
        assert c.gt_labels is None
        assert c2.positions is c.positions


class TestFields:
    def test_probability_field_props(self):
        p = ProbabilityField(np.full((5, 3), 1 / 3))
        assert p.n_points == 5
        assert p.n_classes == 3

    def test_probability_field_rejects_1d(self):
        with pytest.raises(ValueError):
            ProbabilityField(np.ones(4))

    def test_feature_field_props(self):
        f = FeatureField(np.zeros((7, 8)))
        assert f.n_points == 7
        assert f.dim == 8

    def test_feature_field_rejects_3d(self):
        with pytest.raises(ValueError):
            FeatureField(np.zeros((2, 2, 2)))


class TestValidateCloud:
    def test_clean_inputs_pass(self):
        rng = np.random.default_rng(1)
        cloud = make_cloud(50, seed=1)
        probs = ProbabilityField(simplex_rows(rng, 50, 4))
        feats = FeatureField(rng.random((50, 8)))
        assert validate_cloud(cloud, probs, feats) == []

    def test_report_is_pure(self):
        cloud = make_cloud(20, seed=2)
        pos = cloud.positions.copy()
        pos[3] = np.nan
        bad = PointCloud(pos, cloud.colors, cloud.gt_labels)
        assert validate_cloud(bad) == validate_cloud(bad)

    def test_nonfinite_positions(self):
        cloud = make_cloud(5)
        pos = cloud.positions.copy()
        pos[2, 1] = np.inf
        out = validate_cloud(PointCloud(pos, cloud.colors))
        assert len(out) == 1 and "positions" in out[0] and "2" in out[0]

    def test_color_range(self):
        cloud = make_cloud(5)
        col = cloud.colors.copy()
        col[0, 0] = 1.5
        out = validate_cloud(PointCloud(cloud.positions, col))
        assert any("colors outside" in v for v in out)

    def test_nonfinite_color_not_double_reported(self):
        cloud = make_cloud(5)
        col = cloud.colors.copy()
        col[1] = np.nan
        out = validate_cloud(PointCloud(cloud.positions, col))
        assert len(out) == 1 and "non-finite" in out[0]

    def test_negative_label(self):
        cloud = make_cloud(5, labels=False).with_labels([-1, 0, 0, 1, 2])
        out = validate_cloud(cloud)
        assert any("negative" in v for v in out)

    def test_label_beyond_classes(self):
        rng = np.random.default_rng(0)
        cloud = make_cloud(5, labels=False).with_labels([0, 1, 2, 3, 9])
        probs = ProbabilityField(simplex_rows(rng, 5, 4))
        out = validate_cloud(cloud, probs)
        assert any(">= 4 classes" in v for v in out)

    def test_probs_row_mismatch(self):
        rng = np.random.default_rng(0)
        out = validate_cloud(make_cloud(5), ProbabilityField(simplex_rows(rng, 6, 3)))
        assert any("row-count mismatch" in v for v in out)

    def test_probs_off_simplex_summarized(self):
        # 8 bad rows: five get named, the rest are one summary line
        p = np.full((10, 2), 0.5)
        p[:8, 0] = 0.9
        out = validate_cloud(make_cloud(10), ProbabilityField(p))
        assert sum("sums to" in v for v in out) == 5
        assert any("3 further rows" in v for v in out)

    def test_negative_prob_entry(self):
        p = np.array([[1.2, -0.2], [0.5, 0.5]])
        out = validate_cloud(make_cloud(2), ProbabilityField(p))
        assert any("negative" in v for v in out)

    def test_nonfinite_feats(self):
        f = np.zeros((5, 4))
        f[4, 0] = np.nan
        out = validate_cloud(make_cloud(5), feats=FeatureField(f))
        assert any("feats non-finite" in v for v in out)

    def test_feats_row_mismatch(self):
        out = validate_cloud(make_cloud(5), feats=FeatureField(np.zeros((4, 2))))
        assert any("feats row-count mismatch" in v for v in out)

    def test_many_rows_clipped_in_description(self):
        pos = np.full((30, 3), np.nan)
        out = validate_cloud(PointCloud(pos, np.zeros((30, 3))))
        assert "..." in out[0] and "30 total" in out[0]


class TestSelectionState:
    def test_fresh_empty(self):
        s = SelectionState.fresh(10)
        assert s.labeled == frozenset()
        assert s.unlabeled == frozenset(range(10))
        assert s.iteration == 0
        assert s.budget_spent == 0

    def test_fresh_with_initial(self):
        s = SelectionState.fresh(10, [3, 7])
        assert s.labeled == {3, 7}
        assert s.initial_count == 2
        assert s.budget_spent == 0

    def test_fresh_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            SelectionState.fresh(5, [5])

    def test_promote_records_batches(self):
        s = SelectionState.fresh(10, [0])
        s = promote_to_labeled(s, [4, 2])
        s = promote_to_labeled(s, [9])
        assert s.labeled == {0, 2, 4, 9}
        assert s.selections_per_iteration == ((4, 2), (9,))
        assert s.iteration == 2
        assert s.budget_spent == 3

    def test_promote_empty_is_identity(self):
        s = SelectionState.fresh(4)
        assert promote_to_labeled(s, []) is s

    def test_promote_rejects_already_labeled(self):
        s = SelectionState.fresh(5, [1])
        with pytest.raises(ValueError, match="already labeled"):
            promote_to_labeled(s, [1])

    def test_promote_rejects_duplicate_in_batch(self):
        s = SelectionState.fresh(5)
        with pytest.raises(ValueError, match="already labeled"):
            promote_to_labeled(s, [2, 2])

    def test_promote_rejects_out_of_range(self):
        s = SelectionState.fresh(5)
        with pytest.raises(ValueError, match="out of range"):
            promote_to_labeled(s, [-1])

    @given(st.sets(st.integers(0, 29), max_size=20))
    def test_unlabeled_array_is_sorted_complement(self, labeled):
        s = SelectionState(30, frozenset(labeled), len(labeled), ())
        arr = s.unlabeled_array()
        assert list(arr) == sorted(set(range(30)) - labeled)
