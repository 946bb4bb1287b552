"""Second-order orientation tensors over tiles, anisotropy and layer profiles.

For a set of unit axes ``u`` the orientation tensor is the average outer
product ``a_ij = <u_i u_j>``; it is symmetric, positive semi-definite and has
unit trace. The anisotropy index ``alpha = 1 - l_min / l_max`` is 0 for an
isotropic system and 1 for unidirectional or transversally isotropic ones.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateTensorError
from .orientation import as_sym, eigen_sym3_batch
from .volume import Mask, OrientationField, canonical_direction, outer_sym

ALPHA_REPORT = 0.6
DEFAULT_MIN_FRACTION = 0.01
AXES = {"x": 0, "y": 1, "z": 2}


def _value_sorted(tensors):
    """Eigenvalues ascending by value and the matching eigenvectors."""
    w, v = eigen_sym3_batch(tensors)
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return w, v


def _unit_directions(field: OrientationField, region=None) -> np.ndarray:
    valid = field.valid
    if region is not None:
        bits = region.bits if isinstance(region, Mask) else np.asarray(region, dtype=bool)
        if bits.shape != valid.shape:
            raise ValueError(f"region dims {bits.shape} do not match field dims {valid.shape}")
        valid = valid & bits
    u = field.directions[valid].astype(np.float64)
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def orientation_tensor(field: OrientationField, region=None):
    """Average ``u u^T`` over valid voxels (optionally inside ``region``).

    Returns ``(tensor, count)``; ``tensor`` is ``None`` when no valid voxel
    is present.
    """
    u = _unit_directions(field, region)
    if len(u) == 0:
        return None, 0
    return outer_sym(u).sum(axis=0) / len(u), len(u)


def tensor_from_axes(axes) -> np.ndarray:
    """Orientation tensor of an explicit list of axes (each normalized)."""
    u = np.asarray(axes, dtype=np.float64).reshape(-1, 3)
    u = u / np.linalg.norm(u, axis=1, keepdims=True)
    return outer_sym(u).mean(axis=0)


def anisotropy_index(tensor) -> float:
    """``1 - l_min / l_max`` from the value-sorted eigenvalues, clipped to [0, 1]."""
    return float(anisotropy_batch(as_sym(tensor)[None])[0])


def anisotropy_batch(tensors) -> np.ndarray:
    t = as_sym(tensors).reshape(-1, 6)
    if len(t) == 0:
        return np.zeros(0)
    w, _ = _value_sorted(t)
    if (w[:, 2] <= 0).any():
        raise DegenerateTensorError("largest eigenvalue is not positive")
    return np.clip(1.0 - w[:, 0] / w[:, 2], 0.0, 1.0)


def mean_direction(tensor, alpha_report: float = ALPHA_REPORT) -> Optional[np.ndarray]:
    """Largest-eigenvalue axis, or ``None`` when ``alpha < alpha_report``."""
    alpha = anisotropy_index(tensor)
    if alpha < alpha_report:
        return None
    _, v = _value_sorted(as_sym(tensor)[None])
    return canonical_direction(v[0, :, 2])


def _summaries(tensors: np.ndarray, alpha_report: float):
    """Alpha and gated mean directions (NaN where absent) for stacked tensors."""
    alpha = np.zeros(len(tensors))
    mean = np.full((len(tensors), 3), np.nan)
    if len(tensors):
        w, v = _value_sorted(tensors)
        alpha = np.clip(1.0 - w[:, 0] / w[:, 2], 0.0, 1.0)
        show = alpha >= alpha_report
        mean[show] = canonical_direction(v[show, :, 2])
    return alpha, mean


@dataclass
class TileGrid:
    """Per-tile orientation statistics on an origin-anchored grid of cubes.

    ``count`` is the number of oriented (valid) voxels in a tile and serves as
    its weight; ``fiber_voxels`` is the fiber-mask count used for exclusion.
    ``sums`` keeps the raw outer-product sums so that whole-field tensors
    can be recovered without re-reading the field. Absent mean directions
    and invalid-tile tensors are NaN.
    """

    tile_edge: int
    dims: tuple
    spacing: tuple
    sums: np.ndarray
    count: np.ndarray
    fiber_voxels: np.ndarray
    tensor: np.ndarray
    alpha: np.ndarray
    mean_dir: np.ndarray
    valid: np.ndarray
    min_fiber_voxels: int
    alpha_report: float = ALPHA_REPORT

    @property
    def shape(self) -> tuple:
        return tuple(self.count.shape)

    @property
    def tile_edge_um(self) -> tuple:
        return tuple(self.tile_edge * s for s in self.spacing)

    def bounds(self, axis: int) -> np.ndarray:
        """``(g, 2)`` voxel index ranges of the tiles along ``axis``."""
        lo = np.arange(self.shape[axis]) * self.tile_edge
        return np.stack([lo, np.minimum(lo + self.tile_edge, self.dims[axis])], axis=1)

    def centers_um(self, axis: int) -> np.ndarray:
        b = self.bounds(axis)
        return 0.5 * (b[:, 0] + b[:, 1]) * self.spacing[axis]

    def partial(self) -> np.ndarray:
        """True for trailing tiles cut short by the volume boundary."""
        flags = [(self.bounds(a)[:, 1] - self.bounds(a)[:, 0]) < self.tile_edge for a in range(3)]
        return flags[0][:, None, None] | flags[1][None, :, None] | flags[2][None, None, :]

    def global_tensor(self):
        """Whole-field tensor and count (all tiles, before exclusion)."""
        n = int(self.count.sum())
        if n == 0:
            return None, 0
        return self.sums.reshape(-1, 6).sum(axis=0) / n, n


def default_min_fiber_voxels(tile_edge_vox: int, fraction: float = DEFAULT_MIN_FRACTION) -> int:
    return max(1, int(np.ceil(fraction * tile_edge_vox ** 3)))


def tile_analysis(field: OrientationField, fiber_mask: Mask, tile_edge_vox: int,
                  min_fiber_voxels: Optional[int] = None,
                  alpha_report: float = ALPHA_REPORT) -> TileGrid:
    """Orientation tensor, alpha and mean direction per cubic tile.

    Tiles start at the volume origin; trailing partial tiles are kept (see
    :meth:`TileGrid.partial`). A tile is valid when it holds at least
    ``min_fiber_voxels`` fiber voxels (default 1% of a full tile) and at
    least one oriented voxel.
    """
    e = int(tile_edge_vox)
    if e < 2:
        raise ValueError(f"tile edge must be >= 2 voxels, got {tile_edge_vox}")
    if min_fiber_voxels is None:
        min_fiber_voxels = default_min_fiber_voxels(e)
    if min_fiber_voxels < 1:
        raise ValueError(f"min_fiber_voxels must be >= 1, got {min_fiber_voxels}")
    fiber_mask.check_matches(field)
    dims = field.dims
    g = tuple(-(-n // e) for n in dims)
    ntiles = g[0] * g[1] * g[2]

    def tile_ids(bits):
        ix, iy, iz = np.nonzero(bits)
        return (ix // e) + g[0] * ((iy // e) + g[1] * (iz // e))

    # np.nonzero walks C order; flat tile ids make the sums order-independent
    # apart from the (fixed) traversal order, so results never vary between runs
    ids = tile_ids(field.valid)
    u = field.directions[field.valid].astype(np.float64)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    outer = outer_sym(u)
    sums = np.stack([np.bincount(ids, weights=outer[:, k], minlength=ntiles) for k in range(6)], -1)
    count = np.bincount(ids, minlength=ntiles)
    fiber = np.bincount(tile_ids(fiber_mask.bits), minlength=ntiles)

    valid = (fiber >= min_fiber_voxels) & (count > 0)
    tensor = np.full((ntiles, 6), np.nan)
    tensor[valid] = sums[valid] / count[valid, None]
    alpha = np.full(ntiles, np.nan)
    mean = np.full((ntiles, 3), np.nan)
    alpha[valid], mean[valid] = _summaries(tensor[valid], alpha_report)

    def grid(a):
        return np.reshape(a, g + a.shape[1:], order="F")

    return TileGrid(e, tuple(dims), tuple(field.spacing), grid(sums), grid(count), grid(fiber),
                    grid(tensor), grid(alpha), grid(mean), grid(valid), int(min_fiber_voxels),
                    alpha_report)


@dataclass
class LayerProfile:
    """Count-weighted average tensor per layer; absent layers hold NaN."""

    axis: str
    center_um: np.ndarray
    tensor: np.ndarray
    alpha: np.ndarray
    count: np.ndarray
    present: np.ndarray

    @property
    def n_layers(self) -> int:
        return len(self.center_um)

    def diagonal(self) -> np.ndarray:
        return self.tensor[:, :3]


def _fold_layers(grid: TileGrid, axis: int, layer_of_tile: np.ndarray, n: int):
    """Weighted average of valid tiles per layer in a fixed (index) order."""
    tensors = np.full((n, 6), np.nan)
    counts = np.zeros(n, dtype=np.int64)
    moved = lambda a: np.moveaxis(a, axis, 0)  # noqa: E731
    valid = moved(grid.valid)
    count = moved(grid.count)
    tensor = moved(grid.tensor)
    for i in range(valid.shape[0]):
        layer = layer_of_tile[i]
        sel = valid[i]
        if not sel.any():
            continue
        w = count[i][sel].astype(np.float64)
        acc = (w[:, None] * tensor[i][sel]).sum(axis=0)
        if counts[layer] == 0:
            tensors[layer] = acc
        else:
            tensors[layer] += acc
        counts[layer] += int(w.sum())
    present = counts > 0
    tensors[present] /= tensors[present, :3].sum(axis=1, keepdims=True)
    alpha = np.full(n, np.nan)
    alpha[present], _ = _summaries(tensors[present], grid.alpha_report)
    return tensors, alpha, counts, present


def axis_profile(grid: TileGrid, axis="z") -> LayerProfile:
    """One layer per tile index along ``axis``, averaged over the other two."""
    a = AXES[axis] if isinstance(axis, str) else int(axis)
    n = grid.shape[a]
    tensors, alpha, counts, present = _fold_layers(grid, a, np.arange(n), n)
    return LayerProfile("xyz"[a], grid.centers_um(a), tensors, alpha, counts, present)


def layer_resample(grid: TileGrid, n_layers: int = 12) -> LayerProfile:
    """Re-bin tile layers along z into ``n_layers`` equal bands of tile indices.

    Tile layer ``k`` of ``g`` goes to band ``floor((k + 1/2) n / g)``. A band's
    center is the midpoint of the z-range its tiles cover (or of its nominal
    extent when no tile falls in it).
    """
    n = int(n_layers)
    if n < 1:
        raise ValueError(f"n_layers must be >= 1, got {n_layers}")
    gz = grid.shape[2]
    band = np.floor((np.arange(gz) + 0.5) * n / gz).astype(int)
    tensors, alpha, counts, present = _fold_layers(grid, 2, band, n)
    b = grid.bounds(2)
    sz = grid.spacing[2]
    centers = (np.arange(n) + 0.5) / n * grid.dims[2] * sz
    for layer in range(n):
        hit = band == layer
        if hit.any():
            centers[layer] = 0.5 * (b[hit, 0].min() + b[hit, 1].max()) * sz
    return LayerProfile("z", centers, tensors, alpha, counts, present)
