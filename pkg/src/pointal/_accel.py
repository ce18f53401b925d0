"""Numba kernels behind the voxel grid.

Points are laid out in bucket-sorted order so neighbor scans stream
contiguous memory. Bucket keys are packed into a single int64
(21 bits per axis after offsetting), which makes the three buckets
adjacent along z a consecutive key range: each (dx, dy) shell needs one
binary search instead of three.

Every point's accumulation happens inside a single prange iteration in
a fixed traversal order, so results are identical for any thread count.
Both kernels require grid edge >= query radius (one-shell reach).
"""

import numpy as np
from numba import njit, prange

KEY_OFFSET = 1 << 20
TWO_PI_THIRD = 2.0943951023931953


@njit(cache=True, inline="always")
def _lower_bound(a, x):
    lo, hi = 0, a.size
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, inline="always")
def _eig3_desc(a00, a01, a02, a11, a12, a22):
    # Closed-form eigenvalues of a symmetric 3x3 matrix, descending.
    p1 = a01 * a01 + a02 * a02 + a12 * a12
    tr = a00 + a11 + a22
    q = tr / 3.0
    if p1 == 0.0:
        l1 = max(a00, max(a11, a22))
        l3 = min(a00, min(a11, a22))
        return l1, tr - l1 - l3, l3
    p2 = (a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    if p == 0.0:
        return q, q, q
    inv = 1.0 / p
    b00 = (a00 - q) * inv
    b11 = (a11 - q) * inv
    b22 = (a22 - q) * inv
    b01 = a01 * inv
    b02 = a02 * inv
    b12 = a12 * inv
    det = (
        b00 * (b11 * b22 - b12 * b12)
        - b01 * (b01 * b22 - b12 * b02)
        + b02 * (b01 * b12 - b11 * b02)
    )
    r = det / 2.0
    if r > 1.0:
        r = 1.0
    elif r < -1.0:
        r = -1.0
    phi = np.arccos(r) / 3.0
    l1 = q + 2.0 * p * np.cos(phi)
    l3 = q + 2.0 * p * np.cos(phi + TWO_PI_THIRD)
    l2 = tr - l1 - l3
    return l1, l2, l3


@njit(cache=True, parallel=True)
def ball_value_sums(pos, starts, ukeys, vals, r2, out_sum, out_cnt):
    """Sum `vals` rows over each point's strict-radius ball (self included).

    All arrays are in bucket-sorted order; out_sum is (n, C) float64 zeros,
    out_cnt (n,) int64 zeros.
    """
    nb = ukeys.size
    ncol = vals.shape[1]
    for b in prange(nb):
        s0 = starts[b]
        e0 = starts[b + 1]
        key = ukeys[b]
        kz = key & 0x1FFFFF
        ky = (key >> 21) & 0x1FFFFF
        kx = key >> 42
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                base = ((kx + dx) << 42) | ((ky + dy) << 21) | (kz - 1)
                hi = base + 2
                t = _lower_bound(ukeys, base)
                while t < nb and ukeys[t] <= hi:
                    s1 = starts[t]
                    e1 = starts[t + 1]
                    for u in range(s0, e0):
                        xu = pos[u, 0]
                        yu = pos[u, 1]
                        zu = pos[u, 2]
                        c = 0
                        for v in range(s1, e1):
                            ddx = pos[v, 0] - xu
                            ddy = pos[v, 1] - yu
                            ddz = pos[v, 2] - zu
                            if ddx * ddx + ddy * ddy + ddz * ddz < r2:
                                c += 1
                                for j in range(ncol):
                                    out_sum[u, j] += vals[v, j]
                        out_cnt[u] += c
                    t += 1


@njit(cache=True, inline="always")
def _normal_z(a00, a01, a02, a11, a12, a22, l3):
    # |z| of the unit eigenvector for the smallest eigenvalue: rows of
    # (A - l3*I) span the orthogonal complement, so the largest cross
    # product of row pairs points along the normal.
    b00 = a00 - l3
    b11 = a11 - l3
    b22 = a22 - l3
    c0x = a01 * a12 - a02 * b11
    c0y = a02 * a01 - b00 * a12
    c0z = b00 * b11 - a01 * a01
    n0 = c0x * c0x + c0y * c0y + c0z * c0z
    c1x = a01 * b22 - a12 * a02
    c1y = a02 * a02 - b00 * b22
    c1z = b00 * a12 - a01 * a02
    n1 = c1x * c1x + c1y * c1y + c1z * c1z
    c2x = b11 * b22 - a12 * a12
    c2y = a12 * a02 - a01 * b22
    c2z = a01 * a12 - b11 * a02
    n2 = c2x * c2x + c2y * c2y + c2z * c2z
    best = n0
    bz = c0z
    if n1 > best:
        best = n1
        bz = c1z
    if n2 > best:
        best = n2
        bz = c2z
    if best <= 0.0:
        return 0.0
    v = abs(bz) / np.sqrt(best)
    if v > 1.0:
        v = 1.0
    return v


@njit(cache=True, parallel=True)
def ball_eigen_features(pos, starts, ukeys, r2, out_cnt, out_feat):
    """Neighbor count plus covariance shape features per point.

    out_feat rows are (verticality, planarity, scattering); zeros when the
    ball holds fewer than 3 points or the covariance is degenerate.
    Moments are accumulated relative to the center point for stability.
    """
    nb = ukeys.size
    for b in prange(nb):
        s0 = starts[b]
        e0 = starts[b + 1]
        m = e0 - s0
        acc = np.zeros((m, 10))
        key = ukeys[b]
        kz = key & 0x1FFFFF
        ky = (key >> 21) & 0x1FFFFF
        kx = key >> 42
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                base = ((kx + dx) << 42) | ((ky + dy) << 21) | (kz - 1)
                hi = base + 2
                t = _lower_bound(ukeys, base)
                while t < nb and ukeys[t] <= hi:
                    s1 = starts[t]
                    e1 = starts[t + 1]
                    for u in range(m):
                        xu = pos[s0 + u, 0]
                        yu = pos[s0 + u, 1]
                        zu = pos[s0 + u, 2]
                        for v in range(s1, e1):
                            ddx = pos[v, 0] - xu
                            ddy = pos[v, 1] - yu
                            ddz = pos[v, 2] - zu
                            if ddx * ddx + ddy * ddy + ddz * ddz < r2:
                                acc[u, 0] += 1.0
                                acc[u, 1] += ddx
                                acc[u, 2] += ddy
                                acc[u, 3] += ddz
                                acc[u, 4] += ddx * ddx
                                acc[u, 5] += ddx * ddy
                                acc[u, 6] += ddx * ddz
                                acc[u, 7] += ddy * ddy
                                acc[u, 8] += ddy * ddz
                                acc[u, 9] += ddz * ddz
                    t += 1
        for u in range(m):
            cnt = acc[u, 0]
            out_cnt[s0 + u] = np.int64(cnt)
            if cnt < 3.0:
                out_feat[s0 + u, 0] = 0.0
                out_feat[s0 + u, 1] = 0.0
                out_feat[s0 + u, 2] = 0.0
                continue
            inv = 1.0 / cnt
            mx = acc[u, 1] * inv
            my = acc[u, 2] * inv
            mz = acc[u, 3] * inv
            cxx = acc[u, 4] * inv - mx * mx
            cxy = acc[u, 5] * inv - mx * my
            cxz = acc[u, 6] * inv - mx * mz
            cyy = acc[u, 7] * inv - my * my
            cyz = acc[u, 8] * inv - my * mz
            czz = acc[u, 9] * inv - mz * mz
            l1, l2, l3 = _eig3_desc(cxx, cxy, cxz, cyy, cyz, czz)
            if l3 < 0.0:
                l3 = 0.0
            if l2 < l3:
                l2 = l3
            if l1 < l2:
                l1 = l2
            if l1 <= 0.0:
                out_feat[s0 + u, 0] = 0.0
                out_feat[s0 + u, 1] = 0.0
                out_feat[s0 + u, 2] = 0.0
            else:
                out_feat[s0 + u, 0] = _normal_z(cxx, cxy, cxz, cyy, cyz, czz, l3)
                out_feat[s0 + u, 1] = (l2 - l3) / l1
                out_feat[s0 + u, 2] = l3 / l1
