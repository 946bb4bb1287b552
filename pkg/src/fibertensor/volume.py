"""Shared 3D grid model: scalar volumes, masks, symmetric tensors, directions.

Conventions
-----------
Arrays are indexed ``a[ix, iy, iz]`` with shape ``(nx, ny, nz)`` and stored
in Fortran order, so x varies fastest in memory. That is also the order of
raw payloads on disk; :func:`linear_index` and :func:`unravel_index` are the
single definition of the mapping. Voxel ``i`` covers the physical interval
``[i*s, (i+1)*s)`` so its center sits at ``(i + 0.5) * s`` micrometres.

Symmetric 3x3 matrices are stored as 6-vectors in the order
``xx, yy, zz, xy, xz, yz`` (see :data:`SYM_COMPONENTS`).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BoundsError

SYM_COMPONENTS = ("xx", "yy", "zz", "xy", "xz", "yz")
_SYM_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))

Dims = tuple[int, int, int]
Spacing = tuple[float, float, float]


def _as_dims(dims) -> Dims:
    d = tuple(int(v) for v in dims)
    if len(d) != 3 or any(v <= 0 for v in d):
        raise ValueError(f"dims must be three positive integers, got {dims!r}")
    return d  # type: ignore[return-value]


def _as_spacing(spacing) -> Spacing:
    s = tuple(float(v) for v in spacing)
    if len(s) != 3 or not all(np.isfinite(v) and v > 0 for v in s):
        raise ValueError(f"spacing must be three finite positive values, got {spacing!r}")
    return s  # type: ignore[return-value]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


# --------------------------------------------------------------------------
# index conventions


def linear_index(ix, iy, iz, dims: Sequence[int]):
    """Offset of voxel ``(ix, iy, iz)`` in the x-fastest flat layout."""
    nx, ny, _ = dims
    return ix + nx * (iy + ny * iz)


def unravel_index(idx, dims: Sequence[int]):
    """Inverse of :func:`linear_index`."""
    nx, ny, _ = dims
    ix = idx % nx
    rest = idx // nx
    return ix, rest % ny, rest // ny


def from_flat(flat: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """View a flat x-fastest buffer as an ``(nx, ny, nz)`` array."""
    return np.reshape(flat, tuple(dims), order="F")


def to_flat(a: np.ndarray) -> np.ndarray:
    return np.ravel(a, order="F")


def voxel_centers(n: int, spacing: float) -> np.ndarray:
    return (np.arange(n) + 0.5) * spacing


# --------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class Volume:
    """Scalar gray-value volume (float32, read-only after construction)."""

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self, _copy=True):
        a = np.asarray(self.data)
        if a.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {a.shape}")
        _as_dims(a.shape)
        a = np.asfortranarray(a, dtype=np.float32)
        if a is self.data and _copy:
            a = a.copy(order="F")
        if not np.isfinite(a).all():
            bad = np.argwhere(~np.isfinite(a))[0]
            raise ValueError(f"non-finite value in volume at voxel {tuple(int(v) for v in bad)}")
        object.__setattr__(self, "data", _frozen(a))
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @classmethod
    def adopt(cls, data: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> "Volume":
        """Wrap a freshly allocated array without the defensive copy.

        The caller gives up ownership; the array is made read-only.
        """
        vol = object.__new__(cls)
        object.__setattr__(vol, "data", data)
        object.__setattr__(vol, "spacing", spacing)
        vol.__post_init__(_copy=False)
        return vol

    @property
    def dims(self) -> Dims:
        return tuple(self.data.shape)  # type: ignore[return-value]

    @property
    def extent(self) -> tuple[float, float, float]:
        """Physical size in micrometres."""
        return tuple(n * s for n, s in zip(self.dims, self.spacing))  # type: ignore[return-value]

    @classmethod
    def from_flat(cls, flat, dims, spacing=(1.0, 1.0, 1.0)) -> "Volume":
        dims = _as_dims(dims)
        flat = np.asarray(flat)
        if flat.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(f"data length {flat.size} does not match dims {dims}")
        return cls(from_flat(flat, dims), spacing)

    def flat(self) -> np.ndarray:
        return to_flat(self.data)


@dataclass(frozen=True)
class Mask:
    """Binary voxel mask."""

    bits: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.bits)
        if a.ndim != 3:
            raise ValueError(f"mask must be 3D, got shape {a.shape}")
        a = np.asfortranarray(a, dtype=bool)
        if a is self.bits:
            a = a.copy(order="F")
        object.__setattr__(self, "bits", _frozen(a))

    @property
    def dims(self) -> Dims:
        return tuple(self.bits.shape)  # type: ignore[return-value]

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def check_matches(self, other) -> None:
        if tuple(self.dims) != tuple(other.dims):
            raise ValueError(f"mask dims {self.dims} do not match {other.dims}")


@dataclass(frozen=True)
class TensorField:
    """One symmetric 3x3 matrix per voxel, ``components[..., k]`` in SYM_COMPONENTS order."""

    components: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        c = np.asarray(self.components)
        if c.ndim != 4 or c.shape[-1] != 6:
            raise ValueError(f"tensor field must have shape (nx, ny, nz, 6), got {c.shape}")
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @property
    def dims(self) -> Dims:
        return tuple(self.components.shape[:3])  # type: ignore[return-value]

    def component(self, name: str) -> np.ndarray:
        return self.components[..., SYM_COMPONENTS.index(name)]


@dataclass(frozen=True)
class OrientationField:
    """Per-voxel fiber axis on the upper half-sphere plus a validity flag.

    Invalid voxels hold a zero vector.
    """

    directions: np.ndarray
    valid: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        d = np.asarray(self.directions)
        v = np.asarray(self.valid, dtype=bool)
        if d.ndim != 4 or d.shape[-1] != 3 or d.shape[:3] != v.shape:
            raise ValueError(f"inconsistent orientation field shapes {d.shape} / {v.shape}")
        object.__setattr__(self, "valid", v)
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @property
    def dims(self) -> Dims:
        return tuple(self.valid.shape)  # type: ignore[return-value]

    def count(self) -> int:
        return int(np.count_nonzero(self.valid))

    @classmethod
    def empty(cls, dims, spacing=(1.0, 1.0, 1.0)) -> "OrientationField":
        dims = _as_dims(dims)
        return cls(
            np.zeros(dims + (3,), dtype=np.float32, order="F"),
            np.zeros(dims, dtype=bool, order="F"),
            spacing,
        )


# --------------------------------------------------------------------------
# symmetric matrices and directions


def sym_to_matrix(m) -> np.ndarray:
    """Expand ``(..., 6)`` storage to ``(..., 3, 3)``."""
    m = np.asarray(m, dtype=np.float64)
    out = np.empty(m.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(_SYM_INDEX):
        out[..., i, j] = m[..., k]
        out[..., j, i] = m[..., k]
    return out


def matrix_to_sym(a) -> np.ndarray:
    """Pack ``(..., 3, 3)`` into ``(..., 6)``, averaging the two triangles."""
    a = np.asarray(a, dtype=np.float64)
    out = np.empty(a.shape[:-2] + (6,))
    for k, (i, j) in enumerate(_SYM_INDEX):
        out[..., k] = 0.5 * (a[..., i, j] + a[..., j, i])
    return out


def sym_frobenius(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    d = m[..., :3]
    o = m[..., 3:]
    return np.sqrt((d * d).sum(-1) + 2.0 * (o * o).sum(-1))


def outer_sym(u) -> np.ndarray:
    """``u u^T`` for unit vectors ``u`` of shape ``(..., 3)`` in packed form."""
    u = np.asarray(u, dtype=np.float64)
    x, y, z = u[..., 0], u[..., 1], u[..., 2]
    return np.stack([x * x, y * y, z * z, x * y, x * z, y * z], axis=-1)


def canonical_direction(v) -> np.ndarray:
    """Map axes to their upper-half-sphere representative.

    ``v`` and ``-v`` land on the same vector: ``u_z > 0``, or ``u_z == 0`` and
    ``u_y > 0``, or ``u_z == u_y == 0`` and ``u_x > 0``. Works on ``(..., 3)``
    arrays; vectors are normalized, zero vectors stay zero.
    """
    v = np.array(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    # vectors already of unit length (to rounding) are left alone, which keeps
    # the map exactly idempotent
    n = np.where(np.abs(n - 1.0) <= 4 * np.finfo(np.float64).eps, 1.0, n)
    v = np.divide(v, n, out=np.zeros_like(v), where=n > 0)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    flip = (z < 0) | ((z == 0) & ((y < 0) | ((y == 0) & (x < 0))))
    v = np.where(flip[..., None], -v, v)
    return v + 0.0  # drop negative zeros


def angle_between_axes(a, b) -> np.ndarray:
    """Angle in degrees between undirected axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.abs((a * b).sum(-1)) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
    return np.degrees(np.arccos(np.clip(c, 0.0, 1.0)))


# --------------------------------------------------------------------------
# operations


def crop(vol, lo, hi):
    """Sub-block ``[lo, hi)`` of a Volume, Mask or OrientationField; spacing is kept."""
    lo = tuple(int(v) for v in lo)
    hi = tuple(int(v) for v in hi)
    for axis, (a, b, n) in enumerate(zip(lo, hi, vol.dims)):
        if not 0 <= a < b <= n:
            raise BoundsError("xyz"[axis], f"need 0 <= lo < hi <= {n}, got lo={a}, hi={b}")
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    if isinstance(vol, Volume):
        return Volume(vol.data[sl], vol.spacing)
    if isinstance(vol, Mask):
        return Mask(vol.bits[sl])
    if isinstance(vol, OrientationField):
        return OrientationField(
            np.asfortranarray(vol.directions[sl]), np.asfortranarray(vol.valid[sl]), vol.spacing
        )
    raise TypeError(f"cannot crop {type(vol).__name__}")


def _block_sum(a: np.ndarray, factor: int, axis: int) -> np.ndarray:
    starts = np.arange(0, a.shape[axis], factor)
    return np.add.reduceat(a, starts, axis=axis)


def downsample(volume: Volume, factor: int) -> Volume:
    """Average ``factor**3`` blocks; partial trailing blocks average what they hold."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"downsample factor must be a positive integer, got {factor!r}")
    factor = int(factor)
    if factor == 1:
        return volume
    acc = volume.data.astype(np.float64)
    counts = np.ones((1, 1, 1))
    for axis, n in enumerate(volume.dims):
        acc = _block_sum(acc, factor, axis)
        c = np.minimum(factor, n - np.arange(0, n, factor)).astype(np.float64)
        shape = [1, 1, 1]
        shape[axis] = c.size
        counts = counts * c.reshape(shape)
    spacing = tuple(s * factor for s in volume.spacing)
    return Volume.adopt((acc / counts).astype(np.float32, order="F"), spacing)
