"""CSV and JSON serialization of tile grids, profiles and summaries.

Every CSV starts with ``#``-prefixed provenance lines (tool version, the run
configuration as JSON and the grid geometry) followed by a fixed header row.
Floats are written with ``repr`` so files round-trip exactly and identical
runs give identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .stats import TileGrid, LayerProfile, _summaries
from .volume import SYM_COMPONENTS

TENSOR_COLUMNS = [f"a_{c}" for c in SYM_COMPONENTS]
TILE_COLUMNS = (["ix", "iy", "iz", "center_x_um", "center_y_um", "center_z_um", "count",
                 "fiber_voxels"] + TENSOR_COLUMNS
                + ["alpha", "dir_x", "dir_y", "dir_z", "valid", "partial"])
TILE_REQUIRED = ["ix", "iy", "iz", "count"] + TENSOR_COLUMNS + ["valid"]
PROFILE_COLUMNS = ["layer", "center_um", "a_xx", "a_yy", "a_zz", "alpha", "count"]


class SchemaError(ValueError):
    """A CSV file lacks a required column or holds an unparsable row."""


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return None if math.isnan(x) else float(x)
    if isinstance(x, Path):
        return str(x)
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _preamble(config: Optional[dict], extra: Optional[dict] = None) -> list[str]:
    lines = [f"# fibertensor {__version__}"]
    if config is not None:
        lines.append("# config: " + json.dumps(_jsonable(config), sort_keys=True))
    for key, value in (extra or {}).items():
        lines.append(f"# {key}: " + json.dumps(_jsonable(value), sort_keys=True))
    return lines


def _write_csv(path, preamble: list[str], columns: list[str], rows) -> Path:
    buf = io.StringIO()
    for line in preamble:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def grid_metadata(grid: TileGrid) -> dict:
    return {"tile_edge_vox": grid.tile_edge, "dims": list(grid.dims),
            "spacing": list(grid.spacing), "shape": list(grid.shape),
            "min_fiber_voxels": grid.min_fiber_voxels, "alpha_report": grid.alpha_report}


def write_tiles_csv(grid: TileGrid, path, config: Optional[dict] = None) -> Path:
    """One row per tile, x fastest."""
    cx, cy, cz = (grid.centers_um(a) for a in range(3))
    partial = grid.partial()
    gx, gy, gz = grid.shape

    def rows():
        for iz in range(gz):
            for iy in range(gy):
                for ix in range(gx):
                    t = (ix, iy, iz)
                    yield ([ix, iy, iz, cx[ix], cy[iy], cz[iz], grid.count[t],
                            grid.fiber_voxels[t]] + list(grid.tensor[t]) + [grid.alpha[t]]
                           + list(grid.mean_dir[t]) + [grid.valid[t], partial[t]])

    return _write_csv(path, _preamble(config, {"grid": grid_metadata(grid)}), TILE_COLUMNS, rows())


def _read_commented_csv(path):
    meta = {}
    body = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition(":")
                if sep:
                    try:
                        meta[key.strip()] = json.loads(value)
                    except json.JSONDecodeError:
                        meta[key.strip()] = value.strip()
            elif line.strip():
                body.append(line)
    if not body:
        raise SchemaError(f"{path}: no header row")
    reader = csv.DictReader(body)
    return meta, reader.fieldnames or [], list(reader)


def read_tiles_csv(path) -> TileGrid:
    """Rebuild a :class:`TileGrid` from a tile CSV.

    Without a ``grid`` provenance line, tiles are taken as one voxel wide
    and the spacing is inferred from the first tile's center.
    """
    meta, columns, rows = _read_commented_csv(path)
    missing = [c for c in TILE_REQUIRED if c not in columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    if not rows:
        raise SchemaError(f"{path}: no tile rows")

    def num(row, key, default=math.nan):
        v = row.get(key, "")
        if v is None or v == "":
            return default
        try:
            return float(v)
        except ValueError:
            raise SchemaError(f"{path}: column {key} holds {v!r}, not a number") from None

    idx = np.array([[int(num(r, k)) for k in ("ix", "iy", "iz")] for r in rows])
    shape = tuple(int(n) for n in idx.max(axis=0) + 1)
    grid_meta = meta.get("grid") if isinstance(meta.get("grid"), dict) else {}
    if grid_meta.get("shape") and tuple(grid_meta["shape"]) != shape:
        raise SchemaError(f"{path}: rows do not cover the declared grid {grid_meta['shape']}")
    count = np.zeros(shape, dtype=np.int64)
    fiber = np.zeros(shape, dtype=np.int64)
    tensor = np.full(shape + (6,), np.nan)
    valid = np.zeros(shape, dtype=bool)
    centers = [np.full(n, np.nan) for n in shape]
    for (ix, iy, iz), r in zip(idx, rows):
        t = (ix, iy, iz)
        count[t] = int(num(r, "count"))
        fiber[t] = int(num(r, "fiber_voxels", count[t]))
        valid[t] = num(r, "valid") != 0
        if valid[t]:
            tensor[t] = [num(r, c) for c in TENSOR_COLUMNS]
        for a, i in enumerate(t):
            centers[a][i] = num(r, f"center_{'xyz'[a]}_um")
    if grid_meta:
        edge = int(grid_meta["tile_edge_vox"])
        dims = tuple(int(n) for n in grid_meta["dims"])
        spacing = tuple(float(s) for s in grid_meta["spacing"])
        min_fiber = int(grid_meta.get("min_fiber_voxels", 1))
        alpha_report = float(grid_meta.get("alpha_report", 0.6))
    else:
        edge, dims, min_fiber, alpha_report = 1, shape, 1, 0.6
        spacing = tuple(2.0 * c[0] if np.isfinite(c[0]) and c[0] > 0 else 1.0 for c in centers)
    flat_t = tensor.reshape(-1, 6)
    flat_v = valid.ravel()
    alpha = np.full(flat_v.shape, np.nan)
    mean = np.full(flat_v.shape + (3,), np.nan)
    alpha[flat_v], mean[flat_v] = _summaries(flat_t[flat_v], alpha_report)
    sums = np.where(valid[..., None], tensor * count[..., None], 0.0)
    return TileGrid(edge, dims, spacing, sums, count, fiber, tensor, alpha.reshape(shape),
                    mean.reshape(shape + (3,)), valid, min_fiber, alpha_report)


def write_profile_csv(profile: LayerProfile, path, config: Optional[dict] = None) -> Path:
    rows = ([i, profile.center_um[i]] + list(profile.tensor[i, :3])
            + [profile.alpha[i], profile.count[i]] for i in range(profile.n_layers))
    return _write_csv(path, _preamble(config, {"axis": profile.axis}), PROFILE_COLUMNS, rows)


def read_profile_csv(path) -> dict:
    """Columns of a profile CSV as float arrays (NaN for absent layers)."""
    _, columns, rows = _read_commented_csv(path)
    missing = [c for c in PROFILE_COLUMNS[:6] if c not in columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    return {c: np.array([float(r[c]) if r[c] not in ("", None) else math.nan for r in rows])
            for c in columns}


def tensor_dict(t) -> Optional[dict]:
    if t is None:
        return None
    return {f"a_{c}": float(v) for c, v in zip(SYM_COMPONENTS, t)}


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path
