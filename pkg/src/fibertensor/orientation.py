"""Symmetric 3x3 eigen-analysis and per-voxel fiber axis extraction.

The local fiber axis at a voxel is the Hessian eigenvector whose eigenvalue
is smallest in magnitude: along a bright ridge the gray-value relief curves
least in the ridge direction. Exactly tied magnitudes resolve towards the
eigenvector closest to +z, which is arbitrary but deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _backend
from .errors import NumericalError
from .filters import (
    gaussian_smooth, hessian_scales, pad_reflect, smoothing_for_fiber, structure_tensor_field,
)
from .volume import Mask, OrientationField, Volume, canonical_direction, matrix_to_sym, to_flat

# voxels whose Hessian norm is below this fraction of the volume maximum carry no axis
FLAT_HESSIAN = 1e-12


def as_sym(m) -> np.ndarray:
    """Accept a packed 6-vector or a full 3x3 matrix (or stacks of either)."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] == (3, 3):
        return matrix_to_sym(m)
    if m.shape[-1] != 6:
        raise ValueError(f"expected (..., 6) or (..., 3, 3), got shape {m.shape}")
    return m


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues by ascending magnitude, ``vectors[:, k]`` belonging to ``values[k]``."""

    values: np.ndarray
    vectors: np.ndarray


def eigen_sym3(m) -> EigenDecomposition:
    m = as_sym(m)
    if m.shape != (6,):
        raise ValueError(f"eigen_sym3 takes a single matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("matrix has non-finite entries")
    w, v = _backend.kernels.eigh_sym3(m[None, :])
    return EigenDecomposition(w[0], v[0])


def eigen_sym3_batch(m, nthreads: Optional[int] = None):
    """Vectorized :func:`eigen_sym3`; returns ``(values (N, 3), vectors (N, 3, 3))``."""
    m = as_sym(m).reshape(-1, 6)
    if not np.isfinite(m).all():
        raise ValueError("matrix has non-finite entries")
    return _backend.kernels.eigh_sym3(m, nthreads or _backend.get_threads())


def local_orientation(hessian) -> Optional[np.ndarray]:
    """Canonical fiber axis for one Hessian, or ``None`` for the zero matrix."""
    h = as_sym(hessian)
    if not np.isfinite(h).all():
        raise ValueError("Hessian has non-finite entries")
    if not np.any(h):
        return None
    e = eigen_sym3(h)
    return canonical_direction(e.vectors[:, 0])


def smallest_value_axis(tensors) -> np.ndarray:
    """Canonical eigenvector of the smallest (signed) eigenvalue, for PSD tensors."""
    w, v = eigen_sym3_batch(tensors)
    k = np.argmin(w, axis=1)
    return canonical_direction(np.take_along_axis(v, k[:, None, None], axis=2)[..., 0])


@dataclass
class OrientationConfig:
    """How local axes are measured.

    ``fiber_diameter`` and ``sigma`` are in micrometres. ``sigma`` defaults to
    the fiber radius; ``fallback`` defaults to automatic selection of the
    3x3x3 binomial mask when the diameter spans fewer than three voxels.
    Structure-tensor scales are in voxels and default to
    ``max(1, radius/2)`` for the gradient and ``radius`` for integration.
    """

    fiber_diameter: float
    sigma: Optional[float] = None
    fallback: Optional[bool] = None
    method: str = "hessian"
    st_sigma_grad: Optional[float] = None
    st_sigma_int: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def smoothing(self, spacing):
        sig, auto = smoothing_for_fiber(self.fiber_diameter, spacing, self.sigma)
        return sig, (auto if self.fallback is None else self.fallback)

    def structure_scales(self, spacing):
        r = 0.5 * self.fiber_diameter / min(spacing)
        g = self.st_sigma_grad if self.st_sigma_grad is not None else max(1.0, 0.5 * r)
        i = self.st_sigma_int if self.st_sigma_int is not None else max(1.0, r)
        return g, i


def masked_indices(mask: Mask) -> np.ndarray:
    return np.flatnonzero(to_flat(mask.bits))


def _scatter(dims, spacing, idx, dirs, valid) -> OrientationField:
    n = dims[0] * dims[1] * dims[2]
    flat_dirs = np.zeros((n, 3), dtype=np.float32)
    flat_valid = np.zeros(n, dtype=bool)
    flat_dirs[idx] = dirs
    flat_valid[idx] = valid
    directions = np.reshape(flat_dirs, dims + (3,), order="F")
    return OrientationField(directions, np.reshape(flat_valid, dims, order="F"), spacing)


def hessian_orientation_field(volume: Volume, fiber_mask: Mask, sigma_vox,
                              fallback: bool = False) -> OrientationField:
    """Smooth, then take the smallest-|eigenvalue| Hessian axis at every masked voxel."""
    fiber_mask.check_matches(volume)
    idx = masked_indices(fiber_mask)
    if idx.size == 0:
        return OrientationField.empty(volume.dims, volume.spacing)
    smoothed = gaussian_smooth(volume, sigma_vox, fallback=fallback)
    padded = pad_reflect(smoothed.data)
    del smoothed
    floor = FLAT_HESSIAN * float(np.abs(volume.data).max())
    dirs, valid, bad = _backend.kernels.hessian_orientation(
        padded, idx, volume.dims, hessian_scales(volume.spacing), floor, _backend.get_threads())
    if bad >= 0:
        from .volume import unravel_index
        raise NumericalError("non-finite Hessian", unravel_index(int(idx[bad]), volume.dims))
    return _scatter(volume.dims, volume.spacing, idx, dirs, valid)


def structure_orientation_field(volume: Volume, fiber_mask: Mask, sigma_grad,
                                sigma_int) -> OrientationField:
    """Smallest-eigenvalue axis of the structure tensor at every masked voxel."""
    fiber_mask.check_matches(volume)
    idx = masked_indices(fiber_mask)
    if idx.size == 0:
        return OrientationField.empty(volume.dims, volume.spacing)
    st = structure_tensor_field(volume, sigma_grad, sigma_int)
    comps = np.reshape(st.components, (-1, 6), order="F")[idx].astype(np.float64)
    del st
    norm = np.sqrt((comps[:, :3] ** 2).sum(1) + 2 * (comps[:, 3:] ** 2).sum(1))
    valid = norm > FLAT_HESSIAN * float(np.abs(volume.data).max()) ** 2
    dirs = smallest_value_axis(comps).astype(np.float32)
    dirs[~valid] = 0
    return _scatter(volume.dims, volume.spacing, idx, dirs, valid)


def orientation_field(volume: Volume, fiber_mask: Mask, config: OrientationConfig) -> OrientationField:
    """Local fiber axis at each fiber voxel; everything else is invalid."""
    if config.method == "hessian":
        sigma, fallback = config.smoothing(volume.spacing)
        return hessian_orientation_field(volume, fiber_mask, sigma, fallback)
    if config.method == "structure-tensor":
        g, i = config.structure_scales(volume.spacing)
        return structure_orientation_field(volume, fiber_mask, g, i)
    raise ValueError(f"unknown orientation method {config.method!r}")
