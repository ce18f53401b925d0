"""Slow, independent references the fast implementations are tested against.

Everything here is written the dumb way on purpose: linear scans, per-point
loops, numpy.linalg.eigh. No voxel grids, no shared code with the package
beyond the dataclasses the tests construct themselves.
"""

import numpy as np


def brute_ball(positions, center, r):
    """Indices with strict Euclidean distance < r, ascending."""
    d2 = ((positions - np.asarray(center, dtype=np.float64)) ** 2).sum(axis=1)
    return np.flatnonzero(d2 < r * r)


def margin_of(row):
    """Top-1 minus top-2 of one probability row; 1.0 for a single class."""
    row = np.sort(np.asarray(row, dtype=np.float64).ravel())
    if row.size == 1:
        return 1.0
    return float(row[-1] - row[-2])


def hmmu_by_hand(positions, probs, specs):
    """Per-point margin plus weighted margins of ball-averaged rows.

    ``specs`` is a sequence of (radius, weight) pairs. The ball around a
    point always contains the point itself.
    """
    n = positions.shape[0]
    fused = np.empty(n)
    for i in range(n):
        v = margin_of(probs[i])
        for v_r, omega in specs:
            ids = brute_ball(positions, positions[i], v_r)
            v += omega * margin_of(probs[ids].mean(axis=0))
        fused[i] = v
    return fused


def greedy_fds(ranked, positions, feats, r, tau, k, preselected=()):
    """Quadratic reference for suppression-filtered selection.

    Walks ``ranked`` in order, keeping a candidate unless some already
    selected point (or a ``preselected`` one) lies strictly inside radius r
    with cosine similarity strictly above tau. Returns (selected list,
    suppressed list of (index, blocker, distance, similarity)).
    """
    feats = np.asarray(feats, dtype=np.float64)
    norms = np.sqrt((feats * feats).sum(axis=1))
    pool = [int(i) for i in preselected]
    selected = []
    suppressed = []
    r2 = r * r
    for i in ranked:
        if len(selected) >= k:
            break
        i = int(i)
        best = None
        for j in pool:
            d2 = float(((positions[i] - positions[j]) ** 2).sum())
            if d2 >= r2:
                continue
            denom = norms[i] * norms[j]
            sim = float(np.dot(feats[i], feats[j]) / denom) if denom > 0 else 0.0
            if best is None or sim > best[2]:
                best = (j, float(np.sqrt(d2)), sim)
        if best is not None and best[2] > tau:
            suppressed.append((i,) + best)
            continue
        selected.append(i)
        pool.append(i)
    return selected, suppressed


def ce_loss_at(W, b, F, idx, y):
    """Mean negative log-likelihood of a linear softmax model."""
    z = F[idx] @ W.T + b
    lse = np.logaddexp.reduce(z, axis=1)
    return float((lse - z[np.arange(len(idx)), y]).mean())


def numeric_ce_grad(W, b, F, idx, y, h=1e-4):
    """Central-difference gradient of ce_loss_at in (W, b)."""
    gw = np.zeros_like(W)
    for p in range(W.shape[0]):
        for q in range(W.shape[1]):
            Wp = W.copy()
            Wm = W.copy()
            Wp[p, q] += h
            Wm[p, q] -= h
            gw[p, q] = (ce_loss_at(Wp, b, F, idx, y) - ce_loss_at(Wm, b, F, idx, y)) / (2 * h)
    gb = np.zeros_like(b)
    for p in range(b.shape[0]):
        bp = b.copy()
        bm = b.copy()
        bp[p] += h
        bm[p] -= h
        gb[p] = (ce_loss_at(W, bp, F, idx, y) - ce_loss_at(W, bm, F, idx, y)) / (2 * h)
    return gw, gb


def eigen_features_by_hand(positions, radius):
    """Neighbor counts, (verticality, planarity, scattering), and eigenvalues.

    Covariance is taken over ball members relative to the center point, with
    the same degeneracy rules as the fast path: fewer than 3 members or a
    non-positive top eigenvalue give zeros. Eigenvalues come back descending
    and clamped so callers can judge conditioning.
    """
    n = positions.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    feats = np.zeros((n, 3))
    lams = np.zeros((n, 3))
    for i in range(n):
        ids = brute_ball(positions, positions[i], radius)
        counts[i] = ids.size
        if ids.size < 3:
            continue
        d = positions[ids] - positions[i]
        mu = d.mean(axis=0)
        cov = d.T @ d / ids.size - np.outer(mu, mu)
        w, v = np.linalg.eigh(cov)
        l3 = max(float(w[0]), 0.0)
        l2 = max(float(w[1]), l3)
        l1 = max(float(w[2]), l2)
        lams[i] = (l1, l2, l3)
        if l1 <= 0.0:
            continue
        feats[i] = (abs(float(v[2, 0])), (l2 - l3) / l1, l3 / l1)
    return counts, feats, lams


def simplex_rows(rng, n, c):
    """Random rows on the probability simplex (flat Dirichlet)."""
    g = rng.gamma(1.0, size=(n, c))
    return g / g.sum(axis=1, keepdims=True)


def blob_cloud(rng, n, n_blobs=4, extent=2.0, spread=0.15, n_classes=4):
    """Clustered positions with colors and labels, as (pos, col, lab) arrays.

    A few points are exact duplicates so grids see coincident coordinates.
    """
    centers = rng.random((n_blobs, 3)) * extent
    which = rng.integers(0, n_blobs, n)
    pos = centers[which] + rng.normal(0.0, spread, (n, 3))
    if n >= 8:
        pos[-2] = pos[0]
        pos[-1] = pos[1]
    col = rng.random((n, 3))
    lab = rng.integers(0, n_classes, n)
    return pos, col, lab
