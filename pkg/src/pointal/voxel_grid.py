"""Voxel-grid spatial index: exact radius queries plus local geometric features.

The grid is an accelerator only; neighborhood semantics are defined by the
exact Euclidean test distance < r (strict), so a linear scan is always an
equivalent oracle. The self point is its own neighbor (distance 0).
"""

from __future__ import annotations

import numpy as np

from . import _accel
from .cloud import FeatureField, PointCloud

KEY_OFFSET = _accel.KEY_OFFSET
_COORD_LIMIT = 1 << 19

DEFAULT_FEATURE_RADIUS = 0.15


def _encode(keys: np.ndarray) -> np.ndarray:
    return (
        ((keys[:, 0] + KEY_OFFSET) << 42)
        | ((keys[:, 1] + KEY_OFFSET) << 21)
        | (keys[:, 2] + KEY_OFFSET)
    )


def _encode_one(kx: int, ky: int, kz: int) -> int:
    return ((kx + KEY_OFFSET) << 42) | ((ky + KEY_OFFSET) << 21) | (kz + KEY_OFFSET)


class VoxelGrid:
    """Immutable bucketing of a cloud into cubic cells of the given edge."""

    def __init__(self, edge, point_to_voxel, order, starts, ukeys, pos_sorted):
        self.edge = float(edge)
        self.point_to_voxel = point_to_voxel
        self._order = order
        self._starts = starts
        self._ukeys = ukeys
        self._pos_sorted = pos_sorted
        self._kmin = point_to_voxel.min(axis=0)
        self._kmax = point_to_voxel.max(axis=0)
        self._buckets = None

    @property
    def n_points(self) -> int:
        return self._order.shape[0]

    @property
    def n_buckets(self) -> int:
        return self._ukeys.shape[0]

    @property
    def buckets(self) -> dict:
        """Voxel key tuple -> member point indices (ascending), built lazily."""
        if self._buckets is None:
            d = {}
            for b in range(self.n_buckets):
                ids = self._order[self._starts[b] : self._starts[b + 1]]
                code = int(self._ukeys[b])
                key = (
                    (code >> 42) - KEY_OFFSET,
                    ((code >> 21) & 0x1FFFFF) - KEY_OFFSET,
                    (code & 0x1FFFFF) - KEY_OFFSET,
                )
                d[key] = ids.copy()
            self._buckets = d
        return self._buckets

    def _candidate_rows(self, center: np.ndarray, r: float) -> list:
        """Row ranges (into the sorted layout) covering the ball around center.

        Query columns are clamped to the key range actually present, so
        far-away or huge-radius queries stay cheap and keys never leave
        their packed bit fields.
        """
        reach = max(1.0, float(np.ceil(r / self.edge - 1e-12)))
        k = np.floor(center / self.edge)
        lo_f = np.maximum(k - reach, self._kmin.astype(np.float64))
        hi_f = np.minimum(k + reach, self._kmax.astype(np.float64))
        if (lo_f > hi_f).any():
            return []
        lo = lo_f.astype(np.int64)
        hi = hi_f.astype(np.int64)
        spans = []
        zspan = int(hi[2] - lo[2])
        for kx in range(int(lo[0]), int(hi[0]) + 1):
            for ky in range(int(lo[1]), int(hi[1]) + 1):
                base = _encode_one(kx, ky, int(lo[2]))
                a = int(np.searchsorted(self._ukeys, base, side="left"))
                b = int(np.searchsorted(self._ukeys, base + zspan, side="right"))
                if b > a:
                    spans.append((int(self._starts[a]), int(self._starts[b])))
        return spans

    def query_ball(self, center, r: float):
        """Indices (unsorted) and squared distances of points with d < r."""
        if not r > 0:
            raise ValueError("radius must be positive")
        center = np.asarray(center, dtype=np.float64).reshape(3)
        if not np.isfinite(center).all():
            raise ValueError("center must be finite")
        ids, d2s = [], []
        for a, b in self._candidate_rows(center, r):
            block = self._pos_sorted[a:b]
            d2 = ((block - center) ** 2).sum(axis=1)
            m = d2 < r * r
            if m.any():
                ids.append(self._order[a:b][m])
                d2s.append(d2[m])
        if not ids:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
        return np.concatenate(ids), np.concatenate(d2s)

    def ball_average(self, values: np.ndarray, r: float):
        """Mean of `values` rows over each point's ball. Needs r <= edge.

        Returns (means, counts) in original point order. Exact semantics
        (strict Euclidean test); the kernel only accelerates the scan.
        """
        if not r > 0:
            raise ValueError("radius must be positive")
        if r > self.edge:
            raise ValueError(f"radius {r} exceeds grid edge {self.edge}")
        values = np.ascontiguousarray(values, dtype=np.float64)
        vals_sorted = np.ascontiguousarray(values[self._order])
        n = self.n_points
        out_sum = np.zeros((n, values.shape[1]))
        out_cnt = np.zeros(n, dtype=np.int64)
        _accel.ball_value_sums(
            self._pos_sorted, self._starts, self._ukeys, vals_sorted, r * r, out_sum, out_cnt
        )
        means = np.empty_like(out_sum)
        counts = np.empty(n, dtype=np.int64)
        means[self._order] = out_sum / out_cnt[:, None]
        counts[self._order] = out_cnt
        return means, counts

    def ball_eigen(self, r: float):
        """Neighbor counts and (verticality, planarity, scattering) per point."""
        if not r > 0:
            raise ValueError("radius must be positive")
        if r > self.edge:
            raise ValueError(f"radius {r} exceeds grid edge {self.edge}")
        n = self.n_points
        out_cnt = np.zeros(n, dtype=np.int64)
        out_feat = np.zeros((n, 3))
        _accel.ball_eigen_features(
            self._pos_sorted, self._starts, self._ukeys, r * r, out_cnt, out_feat
        )
        counts = np.empty(n, dtype=np.int64)
        feats = np.empty_like(out_feat)
        counts[self._order] = out_cnt
        feats[self._order] = out_feat
        return counts, feats


def build_grid(cloud: PointCloud, edge: float) -> VoxelGrid:
    """Bucket every point into the voxel floor(position/edge) per axis."""
    edge = float(edge)
    if not edge > 0:
        raise ValueError("edge must be positive")
    n = cloud.n_points
    if n == 0:
        raise ValueError("cannot build a grid over an empty cloud")
    pos = cloud.positions
    if not np.isfinite(pos).all():
        raise ValueError("positions contain non-finite values")
    keys = np.floor(pos / edge).astype(np.int64)
    if np.abs(keys).max() >= _COORD_LIMIT:
        raise ValueError(
            f"edge {edge} too small for the scene extent: voxel coordinates "
            f"exceed +/-{_COORD_LIMIT}"
        )
    enc = _encode(keys)
    order = np.argsort(enc, kind="stable").astype(np.int64)
    enc_sorted = enc[order]
    change = np.empty(n, dtype=bool)
    change[0] = True
    np.not_equal(enc_sorted[1:], enc_sorted[:-1], out=change[1:])
    ukeys = enc_sorted[change]
    starts = np.append(np.flatnonzero(change), n).astype(np.int64)
    pos_sorted = np.ascontiguousarray(pos[order])
    return VoxelGrid(edge, keys, order, starts, ukeys, pos_sorted)


def radius_neighbors(grid: VoxelGrid, cloud: PointCloud, center, r: float) -> np.ndarray:
    """Exactly the indices with Euclidean distance < r from center, ascending."""
    if not r > 0:
        raise ValueError("radius must be positive")
    if grid.n_points != cloud.n_points:
        raise ValueError("grid was not built over this cloud")
    ids, _ = grid.query_ball(center, r)
    ids = ids.copy()
    ids.sort()
    return ids


def local_geometric_features(cloud: PointCloud, radius: float = DEFAULT_FEATURE_RADIUS) -> FeatureField:
    """Per-point 8-D descriptor used by the built-in classifier.

    Columns: normalized height, r, g, b, verticality (|z| of the surface
    normal), planarity, scattering, local density (neighbor count over its
    global mean). Shape features are zero for degenerate neighborhoods
    (< 3 points or zero spread).
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    grid = build_grid(cloud, radius)
    counts, eig = grid.ball_eigen(radius)
    z = cloud.positions[:, 2]
    zmin = z.min()
    extent = z.max() - zmin
    if extent > 0:
        zn = (z - zmin) / extent
    else:
        zn = np.zeros_like(z)
    density = counts / counts.mean()
    feats = np.column_stack([zn, cloud.colors, eig, density])
    return FeatureField(feats)
