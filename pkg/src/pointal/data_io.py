"""File formats and the synthetic scene generator.

Formats: ASCII PLY clouds, a little-endian binary matrix container for
probabilities/features/params, newline-separated selection lists, JSON
configs, and JSON selection-state snapshots. Parsers raise
DataFormatError / ConfigError with positions instead of crashing on
malformed input.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cloud import PointCloud, SelectionState
from .selection import SelectionConfig, VALID_STRATEGIES
from .trainer import TrainerConfig
from .uncertainty import DEFAULT_LEVELS, LevelSpec


class DataFormatError(ValueError):
    """Malformed input file (bad header, bad token, wrong length)."""


class ConfigError(ValueError):
    """Invalid configuration (unknown key, wrong type, out-of-range value)."""


# ---------------------------------------------------------------------------
# Matrix container: magic, version u32, dtype byte (0=f32, 1=u32), rows u32,
# cols u32, then row-major little-endian payload.

MATRIX_MAGIC = b"HPALMTRX"
MATRIX_VERSION = 1
_HEADER = struct.Struct("<8sIBII")


def save_matrix(matrix, path) -> None:
    """Write a 2-D float (stored as float32) or unsigned int (uint32) matrix."""
    arr = np.asarray(matrix)
    if arr.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        payload = arr.astype("<f4")
        code = 0
    elif arr.dtype.kind in "iu":
        if arr.size and arr.min() < 0:
            raise ValueError("integer matrix must be non-negative for uint32 storage")
        payload = arr.astype("<u4")
        code = 1
    else:
        raise ValueError(f"unsupported matrix dtype {arr.dtype}")
    header = _HEADER.pack(
        MATRIX_MAGIC, MATRIX_VERSION, code, arr.shape[0], arr.shape[1]
    )
    Path(path).write_bytes(header + payload.tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    """Read a matrix file back as float32 or uint32, bit-exact."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DataFormatError(
            f"truncated header: {len(data)} bytes, need {_HEADER.size}"
        )
    magic, version, code, rows, cols = _HEADER.unpack_from(data)
    if magic != MATRIX_MAGIC:
        raise DataFormatError(f"bad magic {magic!r}")
    if version != MATRIX_VERSION:
        raise DataFormatError(f"unsupported version {version}")
    if code == 0:
        dtype = np.dtype("<f4")
    elif code == 1:
        dtype = np.dtype("<u4")
    else:
        raise DataFormatError(f"unsupported dtype code {code}")
    expected = rows * cols * 4
    actual = len(data) - _HEADER.size
    if actual < expected:
        raise DataFormatError(
            f"truncated payload: expected {expected} bytes, found {actual}"
        )
    if actual > expected:
        raise DataFormatError(
            f"trailing data: expected {expected} bytes, found {actual}"
        )
    flat = np.frombuffer(data, dtype=dtype, count=rows * cols, offset=_HEADER.size)
    return flat.astype(dtype.newbyteorder("=")).reshape(rows, cols)


# ---------------------------------------------------------------------------
# ASCII PLY

_PLY_XYZ_TYPES = ("float", "float32")
_PLY_COLOR_TYPES = ("uchar", "uint8")
_PLY_LABEL_TYPES = ("int", "int32")
_PLY_PROPS = {
    "x": _PLY_XYZ_TYPES,
    "y": _PLY_XYZ_TYPES,
    "z": _PLY_XYZ_TYPES,
    "red": _PLY_COLOR_TYPES,
    "green": _PLY_COLOR_TYPES,
    "blue": _PLY_COLOR_TYPES,
    "label": _PLY_LABEL_TYPES,
}


def save_ply(cloud: PointCloud, path) -> None:
    """Write an ASCII PLY; positions as float32, colors quantized to 8 bits."""
    n = cloud.n_points
    has_labels = cloud.gt_labels is not None
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
    ]
    if has_labels:
        header.append("property int label")
    header.append("end_header")
    pos = cloud.positions.astype(np.float32)
    col = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.int64)
    lines = header
    if has_labels:
        lab = cloud.gt_labels
        for i in range(n):
            lines.append(
                f"{pos[i, 0]:.9g} {pos[i, 1]:.9g} {pos[i, 2]:.9g} "
                f"{col[i, 0]} {col[i, 1]} {col[i, 2]} {lab[i]}"
            )
    else:
        for i in range(n):
            lines.append(
                f"{pos[i, 0]:.9g} {pos[i, 1]:.9g} {pos[i, 2]:.9g} "
                f"{col[i, 0]} {col[i, 1]} {col[i, 2]}"
            )
    lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def _parse_ply_header(lines):
    """Returns (n_vertices, property names in order, body start line index)."""
    if not lines or lines[0].strip() != "ply":
        raise DataFormatError("missing header: first line must be 'ply' (line 1)")
    n_vertices = None
    props = []
    saw_format = False
    in_vertex = False
    i = 1
    while True:
        if i >= len(lines):
            raise DataFormatError("missing end_header")
        raw = lines[i].strip()
        lineno = i + 1
        i += 1
        if raw == "" or raw.startswith("comment") or raw.startswith("obj_info"):
            continue
        tok = raw.split()
        if tok[0] == "format":
            if raw != "format ascii 1.0":
                raise DataFormatError(
                    f"unsupported format '{raw}' at line {lineno}; need 'format ascii 1.0'"
                )
            saw_format = True
        elif tok[0] == "element":
            if len(tok) != 3 or tok[1] != "vertex":
                raise DataFormatError(
                    f"unsupported element at line {lineno}: only 'element vertex N'"
                )
            if n_vertices is not None:
                raise DataFormatError(f"duplicate vertex element at line {lineno}")
            try:
                n_vertices = int(tok[2])
            except ValueError:
                raise DataFormatError(f"bad vertex count '{tok[2]}' at line {lineno}")
            if n_vertices < 0:
                raise DataFormatError(f"bad vertex count {n_vertices} at line {lineno}")
            in_vertex = True
        elif tok[0] == "property":
            if not in_vertex:
                raise DataFormatError(f"property outside vertex element at line {lineno}")
            if len(tok) != 3:
                raise DataFormatError(f"malformed property at line {lineno}")
            ptype, name = tok[1], tok[2]
            if name not in _PLY_PROPS:
                raise DataFormatError(f"unknown property '{name}' at line {lineno}")
            if ptype not in _PLY_PROPS[name]:
                raise DataFormatError(
                    f"property '{name}' has unsupported type '{ptype}' at line {lineno}"
                )
            if name in props:
                raise DataFormatError(f"duplicate property '{name}' at line {lineno}")
            props.append(name)
        elif tok[0] == "end_header":
            break
        else:
            raise DataFormatError(f"unexpected header line '{raw}' at line {lineno}")
    if not saw_format:
        raise DataFormatError("missing 'format ascii 1.0' line")
    if n_vertices is None:
        raise DataFormatError("missing 'element vertex' line")
    for req in ("x", "y", "z", "red", "green", "blue"):
        if req not in props:
            raise DataFormatError(f"missing required property '{req}'")
    return n_vertices, props, i


def load_ply(path) -> PointCloud:
    """Read an ASCII PLY with x y z red green blue and an optional label."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise DataFormatError(f"not a text PLY file: {e}") from None
    lines = text.split("\n")
    n, props, body_start = _parse_ply_header(lines)
    ncol = len(props)
    rows = np.empty((n, ncol))
    filled = 0
    lineno = body_start
    for li in range(body_start, len(lines)):
        lineno = li + 1
        raw = lines[li].strip()
        if raw == "":
            continue
        if filled >= n:
            raise DataFormatError(f"vertex count mismatch at line {lineno}")
        tok = raw.split()
        if len(tok) != ncol:
            raise DataFormatError(
                f"expected {ncol} values at line {lineno}, found {len(tok)}"
            )
        try:
            for j, t in enumerate(tok):
                rows[filled, j] = float(t)
        except ValueError:
            raise DataFormatError(f"non-numeric token '{tok[j]}' at line {lineno}")
        if not np.isfinite(rows[filled]).all():
            raise DataFormatError(f"non-finite value at line {lineno}")
        filled += 1
    if filled < n:
        raise DataFormatError(f"vertex count mismatch at line {len(lines) + 1}")
    cols = {name: rows[:, j] for j, name in enumerate(props)}
    positions = np.column_stack([cols["x"], cols["y"], cols["z"]])
    positions = positions.astype(np.float32).astype(np.float64)
    rgb = np.column_stack([cols["red"], cols["green"], cols["blue"]])
    if n and ((rgb != np.rint(rgb)).any() or rgb.min() < 0 or rgb.max() > 255):
        bad = np.flatnonzero(
            (rgb != np.rint(rgb)).any(axis=1) | (rgb < 0).any(axis=1) | (rgb > 255).any(axis=1)
        )[0]
        raise DataFormatError(
            f"color value out of uchar range at line {body_start + int(bad) + 1}"
        )
    labels = None
    if "label" in cols:
        lab = cols["label"]
        if n and (lab != np.rint(lab)).any():
            bad = np.flatnonzero(lab != np.rint(lab))[0]
            raise DataFormatError(
                f"non-integer label at line {body_start + int(bad) + 1}"
            )
        if n and lab.min() < 0:
            bad = np.flatnonzero(lab < 0)[0]
            raise DataFormatError(
                f"negative label at line {body_start + int(bad) + 1}"
            )
        labels = lab.astype(np.int64)
    return PointCloud(positions, rgb / 255.0, labels)


# ---------------------------------------------------------------------------
# Selection lists: one zero-based decimal index per line, LF-terminated.


def save_selection(indices, path) -> None:
    out = []
    for i in indices:
        i = int(i)
        if i < 0:
            raise ValueError(f"negative index {i}")
        out.append(f"{i}\n")
    Path(path).write_text("".join(out), encoding="utf-8")


def load_selection(path) -> list:
    text = Path(path).read_text(encoding="utf-8")
    out = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        s = raw.strip()
        if s == "":
            continue
        try:
            v = int(s)
        except ValueError:
            raise DataFormatError(f"invalid index '{s}' at line {lineno}")
        if v < 0:
            raise DataFormatError(f"negative index {v} at line {lineno}")
        out.append(v)
    return out


# ---------------------------------------------------------------------------
# SelectionState snapshots


def state_to_dict(state: SelectionState) -> dict:
    return {
        "n_points": state.n_points,
        "initial_count": state.initial_count,
        "labeled": sorted(state.labeled),
        "selections_per_iteration": [list(s) for s in state.selections_per_iteration],
    }


def state_from_dict(d: dict) -> SelectionState:
    try:
        n = int(d["n_points"])
        initial = int(d["initial_count"])
        labeled = frozenset(int(i) for i in d["labeled"])
        selections = tuple(tuple(int(i) for i in s) for s in d["selections_per_iteration"])
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"malformed selection state: {e}") from None
    for s in selections:
        for i in s:
            if i not in labeled:
                raise DataFormatError(f"selected index {i} not in labeled set")
    for i in labeled:
        if not 0 <= i < n:
            raise DataFormatError(f"labeled index {i} out of range for {n} points")
    if len(labeled) - sum(len(s) for s in selections) != initial:
        raise DataFormatError("initial_count inconsistent with labeled and selections")
    return SelectionState(n, labeled, initial, selections)


def save_state(state: SelectionState, path) -> None:
    Path(path).write_text(
        json.dumps(state_to_dict(state), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def load_state(path) -> SelectionState:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise DataFormatError(f"invalid state JSON: {e}") from None
    if not isinstance(d, dict):
        raise DataFormatError("state file must hold a JSON object")
    return state_from_dict(d)


# ---------------------------------------------------------------------------
# Synthetic scenes

_PALETTE = (
    (0.72, 0.72, 0.72),
    (0.85, 0.82, 0.72),
    (0.42, 0.26, 0.12),
    (0.62, 0.46, 0.28),
    (0.52, 0.10, 0.12),
    (0.68, 0.24, 0.10),
    (0.18, 0.52, 0.20),
    (0.15, 0.25, 0.68),
    (0.80, 0.80, 0.20),
    (0.50, 0.10, 0.50),
    (0.10, 0.60, 0.60),
    (0.95, 0.55, 0.10),
    (0.30, 0.30, 0.30),
    (0.90, 0.30, 0.50),
    (0.20, 0.20, 0.80),
    (0.60, 0.60, 0.60),
)


@dataclass(frozen=True)
class SceneSpec:
    """Room-scale synthetic scene: planes, furniture primitives, outliers."""

    n_points: int
    n_classes: int = 8
    extent: tuple = (10.0, 10.0, 3.0)
    surface_noise: float = 0.005
    color_noise: float = 0.05
    outlier_fraction: float = 0.005
    seed: int = 0
    class_weights: Optional[tuple] = None

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError("infeasible spec: n_points must be >= 1")
        if self.n_classes < 2:
            raise ValueError("infeasible spec: n_classes must be >= 2")
        ext = tuple(float(v) for v in self.extent)
        if len(ext) != 3 or any(not v > 0 for v in ext):
            raise ValueError("extent must be three positive lengths")
        object.__setattr__(self, "extent", ext)
        if self.surface_noise < 0 or self.color_noise < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError(f"outlier_fraction out of range [0,1]: {self.outlier_fraction}")
        if self.class_weights is not None:
            w = tuple(float(v) for v in self.class_weights)
            if len(w) != self.n_classes:
                raise ValueError(
                    f"class_weights has {len(w)} entries for {self.n_classes} classes"
                )
            if any(not v > 0 for v in w):
                raise ValueError("class_weights must be positive")
            object.__setattr__(self, "class_weights", w)


def _default_weights(n_classes: int) -> np.ndarray:
    w = [0.26, 0.22]
    rest = n_classes - 2
    if rest > 0:
        decay = 0.6 ** np.arange(rest)
        w.extend(0.52 * decay / decay.sum())
    w = np.asarray(w[:n_classes], dtype=np.float64)
    return w / w.sum()


def _class_counts(spec: SceneSpec, n_main: int) -> np.ndarray:
    if spec.class_weights is not None:
        w = np.asarray(spec.class_weights) / sum(spec.class_weights)
    else:
        w = _default_weights(spec.n_classes)
    raw = w * n_main
    counts = np.floor(raw).astype(np.int64)
    frac_order = np.argsort(-(raw - counts), kind="stable")
    for k in range(n_main - counts.sum()):
        counts[frac_order[k % spec.n_classes]] += 1
    required = max(1, math.ceil(0.01 * spec.n_points))
    for c in range(spec.n_classes):
        while counts[c] < required:
            donor = int(np.argmax(counts))
            if counts[donor] <= required:
                raise ValueError(
                    f"infeasible spec: class {c} gets {counts[c]} points, "
                    f"needs {required} (1% of {spec.n_points})"
                )
            counts[donor] -= 1
            counts[c] += 1
    return counts


def _sample_floor(rng, m, ext, noise):
    p = np.empty((m, 3))
    p[:, 0] = rng.random(m) * ext[0]
    p[:, 1] = rng.random(m) * ext[1]
    p[:, 2] = rng.normal(0.0, noise, m)
    return p


def _sample_walls(rng, m, ext, noise):
    side = rng.integers(0, 4, m)
    u = rng.random(m)
    h = rng.random(m) * ext[2]
    off = rng.normal(0.0, noise, m)
    p = np.empty((m, 3))
    p[:, 2] = h
    for s in range(4):
        k = side == s
        if s == 0:
            p[k, 0] = off[k]
            p[k, 1] = u[k] * ext[1]
        elif s == 1:
            p[k, 0] = ext[0] + off[k]
            p[k, 1] = u[k] * ext[1]
        elif s == 2:
            p[k, 1] = off[k]
            p[k, 0] = u[k] * ext[0]
        else:
            p[k, 1] = ext[1] + off[k]
            p[k, 0] = u[k] * ext[0]
    return p


def _item_centers(rng, n_items, ext, margin):
    cx = margin + rng.random(n_items) * max(ext[0] - 2 * margin, 0.1)
    cy = margin + rng.random(n_items) * max(ext[1] - 2 * margin, 0.1)
    return cx, cy


def _sample_table(rng, m, ext, noise):
    n_items = 3
    cx, cy = _item_centers(rng, n_items, ext, 1.0)
    w = 0.6 + rng.random(n_items) * 0.8
    d = 0.5 + rng.random(n_items) * 0.5
    h = 0.65 + rng.random(n_items) * 0.2
    parts = []
    for t in range(n_items):
        k = m // n_items + (1 if t < m % n_items else 0)
        p = np.empty((k, 3))
        p[:, 0] = cx[t] + (rng.random(k) - 0.5) * min(w[t], ext[0] * 0.4)
        p[:, 1] = cy[t] + (rng.random(k) - 0.5) * min(d[t], ext[1] * 0.4)
        p[:, 2] = min(h[t], ext[2] * 0.9) + rng.normal(0.0, noise, k)
        parts.append(p)
    return np.concatenate(parts)


def _sample_box(rng, m, ext, noise, n_items, size_lo, size_hi):
    cx, cy = _item_centers(rng, n_items, ext, 1.0)
    sx = size_lo + rng.random(n_items) * (size_hi - size_lo)
    sy = size_lo + rng.random(n_items) * (size_hi - size_lo)
    sz = size_lo + rng.random(n_items) * (size_hi - size_lo) * 1.5
    parts = []
    for t in range(n_items):
        k = m // n_items + (1 if t < m % n_items else 0)
        w = min(sx[t], ext[0] * 0.3)
        d = min(sy[t], ext[1] * 0.3)
        h = min(sz[t], ext[2] * 0.8)
        # faces: top (area w*d) and four sides; sampled proportionally to area
        areas = np.array([w * d, d * h, d * h, w * h, w * h])
        face = rng.choice(5, size=k, p=areas / areas.sum())
        u = rng.random(k)
        v = rng.random(k)
        p = np.empty((k, 3))
        for f in range(5):
            q = face == f
            if f == 0:
                p[q, 0] = (u[q] - 0.5) * w
                p[q, 1] = (v[q] - 0.5) * d
                p[q, 2] = h
            elif f in (1, 2):
                p[q, 0] = (-0.5 if f == 1 else 0.5) * w
                p[q, 1] = (u[q] - 0.5) * d
                p[q, 2] = v[q] * h
            else:
                p[q, 0] = (u[q] - 0.5) * w
                p[q, 1] = (-0.5 if f == 3 else 0.5) * d
                p[q, 2] = v[q] * h
        p += rng.normal(0.0, noise, (k, 3))
        p[:, 0] += cx[t]
        p[:, 1] += cy[t]
        parts.append(p)
    return np.concatenate(parts)


def _sample_sphere(rng, m, ext, noise, n_items, rad_lo, rad_hi, z_lo, z_hi):
    cx, cy = _item_centers(rng, n_items, ext, 1.0)
    rad = rad_lo + rng.random(n_items) * (rad_hi - rad_lo)
    cz = np.clip(
        z_lo + rng.random(n_items) * (z_hi - z_lo), 0.02 * ext[2], 0.95 * ext[2]
    )
    parts = []
    for t in range(n_items):
        k = m // n_items + (1 if t < m % n_items else 0)
        d = rng.normal(0.0, 1.0, (k, 3))
        norm = np.sqrt((d * d).sum(axis=1))
        norm[norm == 0] = 1.0
        p = d / norm[:, None] * rad[t]
        p += rng.normal(0.0, noise, (k, 3))
        p[:, 0] += cx[t]
        p[:, 1] += cy[t]
        p[:, 2] += cz[t]
        parts.append(p)
    return np.concatenate(parts)


def _sample_class(rng, cls, m, ext, noise):
    # Classes 0/1 are the room shell; furniture cycles six archetypes.
    # Rare archetypes come as many sub-20cm items, so one unlearned class
    # shows up as compact look-alike clusters scattered over the room.
    if cls == 0:
        return _sample_floor(rng, m, ext, noise)
    if cls == 1:
        return _sample_walls(rng, m, ext, noise)
    arch = (cls - 2) % 6
    if arch == 0:
        return _sample_table(rng, m, ext, noise)
    if arch == 1:
        return _sample_box(rng, m, ext, noise, 3, 0.4, 1.0)
    if arch == 2:
        return _sample_sphere(rng, m, ext, noise, 8, 0.08, 0.16, 0.08, 0.5)
    if arch == 3:
        return _sample_sphere(rng, m, ext, noise, 3, 0.15, 0.35, ext[2] - 0.9, ext[2] - 0.3)
    if arch == 4:
        return _sample_sphere(rng, m, ext, noise, 12, 0.04, 0.09, 0.04, 0.3)
    return _sample_box(rng, m, ext, noise, 12, 0.08, 0.16)


def gen_synthetic(spec: SceneSpec) -> PointCloud:
    """Deterministic labeled scene; every class holds >= 1% of the points.

    Classes 0/1 are the floor and walls; the rest cycle furniture
    archetypes (tables, boxes, floor spheres, hung spheres, tiny-sphere
    scatter, small boxes). Class colors come from a fixed palette plus
    Gaussian noise. Outlier points are uniform in the room volume with
    random labels (colored to match); they are excluded from the 1%
    guarantee.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_points
    ext = spec.extent
    n_out = int(round(spec.outlier_fraction * n))
    counts = _class_counts(spec, n - n_out)
    pos_parts = []
    col_parts = []
    lab_parts = []
    for cls in range(spec.n_classes):
        m = int(counts[cls])
        p = _sample_class(rng, cls, m, ext, spec.surface_noise)
        base = np.asarray(_PALETTE[cls % len(_PALETTE)])
        c = np.clip(base + rng.normal(0.0, spec.color_noise, (m, 3)), 0.0, 1.0)
        pos_parts.append(p)
        col_parts.append(c)
        lab_parts.append(np.full(m, cls, dtype=np.int64))
    if n_out:
        p = rng.random((n_out, 3)) * np.asarray(ext)
        lab = rng.integers(0, spec.n_classes, n_out)
        pal = np.asarray(_PALETTE)[np.asarray(lab) % len(_PALETTE)]
        c = np.clip(pal + rng.normal(0.0, spec.color_noise, (n_out, 3)), 0.0, 1.0)
        pos_parts.append(p)
        col_parts.append(c)
        lab_parts.append(lab)
    positions = np.concatenate(pos_parts)
    colors = np.concatenate(col_parts)
    labels = np.concatenate(lab_parts)
    perm = rng.permutation(n)
    return PointCloud(positions[perm], colors[perm], labels[perm])


# ---------------------------------------------------------------------------
# JSON config

_CONFIG_KEYS = {"levels", "fds", "budget", "trainer", "strategy"}
_FDS_KEYS = {"radius_m", "tau"}
_BUDGET_KEYS = {"initial_fraction", "per_iter_fraction", "iterations"}
_TRAINER_KEYS = {
    "alpha",
    "pseudo_threshold",
    "learning_rate",
    "steps",
    "seed",
    "jitter_sigma_m",
    "color_sigma",
}


def _need_number(d: dict, section: str, key: str, default):
    if key not in d:
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{section}{key} must be a number, got {v!r}")
    return float(v)


def _need_int(d: dict, section: str, key: str, default):
    if key not in d:
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{section}{key} must be an integer, got {v!r}")
    return v


def _check_keys(d: dict, allowed, section: str):
    for k in d:
        if k not in allowed:
            where = f"{section}{k}" if section else k
            raise ConfigError(f"unknown key '{where}'")


def config_from_dict(cfg: dict):
    """Validate a config mapping; missing keys fall back to the shipped defaults.

    Returns (TrainerConfig, SelectionConfig, list of LevelSpec).
    """
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(cfg, _CONFIG_KEYS, "")

    levels = list(DEFAULT_LEVELS)
    if "levels" in cfg:
        raw = cfg["levels"]
        if not isinstance(raw, list):
            raise ConfigError("levels must be a list")
        levels = []
        for i, item in enumerate(raw):
            if not isinstance(item, dict):
                raise ConfigError(f"levels[{i}] must be an object")
            _check_keys(item, {"radius_m", "weight"}, f"levels[{i}].")
            if "radius_m" not in item or "weight" not in item:
                raise ConfigError(f"levels[{i}] needs both radius_m and weight")
            v_r = _need_number(item, f"levels[{i}].", "radius_m", None)
            w = _need_number(item, f"levels[{i}].", "weight", None)
            if not v_r > 0:
                raise ConfigError(f"levels[{i}].radius_m must be positive: {v_r}")
            if w < 0:
                raise ConfigError(f"levels[{i}].weight must be non-negative: {w}")
            levels.append(LevelSpec(v_r, w))

    fds = cfg.get("fds", {})
    if not isinstance(fds, dict):
        raise ConfigError("fds must be an object")
    _check_keys(fds, _FDS_KEYS, "fds.")
    r = _need_number(fds, "fds.", "radius_m", 0.2)
    tau = _need_number(fds, "fds.", "tau", 0.8)
    if not r > 0:
        raise ConfigError(f"fds.radius_m must be positive: {r}")
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau out of range [0,1]: {tau}")

    strategy = cfg.get("strategy", "hmmu_fds")
    if not isinstance(strategy, str) or strategy not in VALID_STRATEGIES:
        raise ConfigError(
            f"unknown strategy {strategy!r}; valid: {', '.join(VALID_STRATEGIES)}"
        )

    budget = cfg.get("budget", {})
    if not isinstance(budget, dict):
        raise ConfigError("budget must be an object")
    _check_keys(budget, _BUDGET_KEYS, "budget.")
    defaults = TrainerConfig()
    initial_fraction = _need_number(budget, "budget.", "initial_fraction", defaults.initial_fraction)
    per_iter_fraction = _need_number(budget, "budget.", "per_iter_fraction", defaults.per_iter_fraction)
    iterations = _need_int(budget, "budget.", "iterations", defaults.iterations)

    tr = cfg.get("trainer", {})
    if not isinstance(tr, dict):
        raise ConfigError("trainer must be an object")
    _check_keys(tr, _TRAINER_KEYS, "trainer.")
    alpha = _need_number(tr, "trainer.", "alpha", defaults.alpha)
    threshold = _need_number(tr, "trainer.", "pseudo_threshold", defaults.pseudo_threshold)
    lr = _need_number(tr, "trainer.", "learning_rate", defaults.learning_rate)
    steps = _need_int(tr, "trainer.", "steps", defaults.steps)
    seed = _need_int(tr, "trainer.", "seed", defaults.seed)
    jitter = _need_number(tr, "trainer.", "jitter_sigma_m", defaults.jitter_sigma)
    color = _need_number(tr, "trainer.", "color_sigma", defaults.color_sigma)

    try:
        trainer_cfg = TrainerConfig(
            alpha=alpha,
            pseudo_threshold=threshold,
            learning_rate=lr,
            steps=steps,
            seed=seed,
            jitter_sigma=jitter,
            color_sigma=color,
            iterations=iterations,
            per_iter_fraction=per_iter_fraction,
            initial_fraction=initial_fraction,
        )
        sel_cfg = SelectionConfig(budget_k=0, r=r, tau=tau, strategy=strategy)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return trainer_cfg, sel_cfg, levels


def load_config(path):
    """Read and validate a JSON config file; see config_from_dict."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"invalid config JSON: {e}") from None
    return config_from_dict(raw)


def effective_config(trainer_cfg: TrainerConfig, sel_cfg: SelectionConfig, levels) -> dict:
    """The fully merged configuration, in the config-file schema."""
    return {
        "levels": [{"radius_m": s.v_r, "weight": s.omega} for s in levels],
        "fds": {"radius_m": sel_cfg.r, "tau": sel_cfg.tau},
        "budget": {
            "initial_fraction": trainer_cfg.initial_fraction,
            "per_iter_fraction": trainer_cfg.per_iter_fraction,
            "iterations": trainer_cfg.iterations,
        },
        "trainer": {
            "alpha": trainer_cfg.alpha,
            "pseudo_threshold": trainer_cfg.pseudo_threshold,
            "learning_rate": trainer_cfg.learning_rate,
            "steps": trainer_cfg.steps,
            "seed": trainer_cfg.seed,
            "jitter_sigma_m": trainer_cfg.jitter_sigma,
            "color_sigma": trainer_cfg.color_sigma,
        },
        "strategy": sel_cfg.strategy,
    }
