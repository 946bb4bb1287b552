"""Synthetic fiber systems with known orientation statistics.

Fibers are straight capsules (a cylinder with hemispherical caps) rasterized
with 2x2x2 sub-voxel sampling, so every voxel carries a fiber coverage
fraction ``c`` and the gray value ``c * fiber + (1 - c) * matrix``. Optional
Gaussian noise is added afterwards and values are clipped to
``[air, fiber]``.

Randomness comes from a single :class:`numpy.random.SeedSequence`, split
into independent placement and noise streams, so a seed fixes the output
bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import _backend
from .errors import GenerationError, PackingError
from .stats import tensor_from_axes
from .volume import Volume, _as_dims, _as_spacing, canonical_direction, outer_sym


@dataclass(frozen=True)
class GrayLevels:
    fiber: float = 200.0
    matrix: float = 80.0
    air: float = 0.0
    noise: float = 0.0

    def __post_init__(self):
        if not self.fiber > self.matrix >= self.air:
            raise ValueError(f"need fiber > matrix >= air, got {self}")
        if self.noise < 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.noise}")


DEFAULT_GRAY = GrayLevels()
DEFAULT_NOISE = 5.0


@dataclass(frozen=True)
class FiberSpec:
    """One placed fiber: unit axis, radius and length (um), center (um)."""

    axis: tuple
    radius: float
    length: float
    center: tuple

    def endpoints(self):
        a = np.asarray(self.axis) * (0.5 * self.length)
        c = np.asarray(self.center)
        return c - a, c + a


@dataclass
class Phantom:
    """Rendered volume plus the ground truth it was built from.

    ``truth`` is the orientation tensor of the placed fiber axes. For layered
    phantoms ``slice_weights[z, f]`` is the fiber coverage of family ``f``
    (axis ``family_axes[f]``) summed over z-slice ``z``; see
    :meth:`truth_profile`.
    """

    volume: Volume
    truth: np.ndarray
    fibers: list
    coverage: np.ndarray
    gray: GrayLevels
    family_axes: Optional[np.ndarray] = None
    slice_weights: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def axes(self) -> np.ndarray:
        return np.array([f.axis for f in self.fibers], dtype=np.float64).reshape(-1, 3)

    def truth_profile(self, n_layers: int) -> np.ndarray:
        """Coverage-weighted tensor of ``n_layers`` equal z-bands, shape ``(n, 6)``."""
        if self.slice_weights is None:
            return np.tile(self.truth, (n_layers, 1))
        nz = self.slice_weights.shape[0]
        band = np.floor((np.arange(nz) + 0.5) * n_layers / nz).astype(int)
        outer = outer_sym(self.family_axes)
        out = np.full((n_layers, 6), np.nan)
        for b in range(n_layers):
            w = self.slice_weights[band == b].sum(axis=0)
            if w.sum() > 0:
                out[b] = w @ outer / w.sum()
        return out

    def to_json(self) -> dict:
        d = {
            "dims": list(self.volume.dims),
            "spacing": list(self.volume.spacing),
            "gray": asdict(self.gray),
            "truth_tensor": [float(x) for x in self.truth],
            "fibers": [
                {"axis": list(map(float, f.axis)), "radius": f.radius, "length": f.length,
                 "center": list(map(float, f.center))}
                for f in self.fibers
            ],
        }
        d.update(self.meta)
        return d


def _streams(seed):
    place, noise = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(place), np.random.default_rng(noise)


def _check_radius(radius: float, spacing) -> None:
    if not radius >= 0.3 * min(spacing):
        raise ValueError(
            f"fiber radius {radius} um is below 0.3 voxel ({0.3 * min(spacing)} um); "
            "such fibers vanish from the image")


def rasterize(dims, spacing, fibers) -> np.ndarray:
    """Fiber coverage fraction per voxel (max over overlapping fibers)."""
    coverage = np.zeros(dims, dtype=np.float32, order="F")
    by_radius: dict = {}
    for f in fibers:
        by_radius.setdefault(f.radius, []).append(f.endpoints())
    for radius, ends in by_radius.items():
        p0 = np.array([e[0] for e in ends])
        p1 = np.array([e[1] for e in ends])
        _backend.kernels.rasterize_capsules(coverage, p0, p1, float(radius), spacing,
                                            _backend.get_threads())
    return coverage


def _render(coverage: np.ndarray, gray: GrayLevels, noise_rng) -> np.ndarray:
    img = coverage.astype(np.float64) * (gray.fiber - gray.matrix) + gray.matrix
    if gray.noise > 0:
        img += noise_rng.normal(0.0, gray.noise, size=img.shape)
    np.clip(img, gray.air, gray.fiber, out=img)
    return np.asfortranarray(img, dtype=np.float32)


def _lattice_shape(n: int, la: float, lb: float):
    """Grid ``(na, nb)`` with ``na * nb >= n`` that maximizes the smaller pitch."""
    best = None
    for na in range(1, n + 1):
        nb = -(-n // na)
        pitch = min(la / na, lb / nb)
        if best is None or pitch > best[0]:
            best = (pitch, na, nb)
    return best[1], best[2]


def gen_straight_bundle(dims, spacing, direction, radius: float, n_fibers: int, seed=0,
                        gray: GrayLevels = DEFAULT_GRAY) -> Phantom:
    """Parallel fibers crossing the whole volume along ``direction``.

    Fibers pass through the cells of a lattice in the mid-plane perpendicular
    to the dominant axis of ``direction``, picked in random order and jittered
    by up to a quarter of the free gap, so they never touch. Swapping two
    axes of ``dims``, ``spacing`` and ``direction`` transposes the output
    exactly (noise aside).
    """
    dims = _as_dims(dims)
    spacing = _as_spacing(spacing)
    _check_radius(radius, spacing)
    n_fibers = int(n_fibers)
    if n_fibers < 0:
        raise ValueError(f"n_fibers must be >= 0, got {n_fibers}")
    d = canonical_direction(direction)
    if not np.any(d):
        raise ValueError("direction must be non-zero")
    place, noise = _streams(seed)
    extent = np.array(dims) * np.array(spacing)
    k = int(np.argmax(np.abs(d)))
    a, b = [j for j in range(3) if j != k]
    fibers = []
    if n_fibers:
        na, nb = _lattice_shape(n_fibers, extent[a], extent[b])
        pa, pb = extent[a] / na, extent[b] / nb
        gap = min(pa, pb) * abs(d[k]) - 2.0 * radius
        if gap < 0:
            raise PackingError(
                f"{n_fibers} fibers of radius {radius} do not fit: lattice pitch "
                f"{min(pa, pb):.3g} um leaves no room")
        cells = place.permutation(na * nb)[:n_fibers]
        jitter = place.uniform(-0.25 * gap, 0.25 * gap, size=(n_fibers, 2))
        half = float(np.linalg.norm(extent))
        for cell, (ja, jb) in zip(cells, jitter):
            c = np.empty(3)
            c[k] = 0.5 * extent[k]
            c[a] = (cell % na + 0.5) * pa + ja
            c[b] = (cell // na + 0.5) * pb + jb
            fibers.append(FiberSpec(tuple(d), float(radius), 2.0 * half, tuple(c)))
    coverage = rasterize(dims, spacing, fibers)
    vol = Volume.adopt(_render(coverage, gray, noise), spacing)
    return Phantom(vol, outer_sym(d), fibers, coverage, gray,
                   meta={"kind": "bundle", "seed": seed, "direction": [float(x) for x in d]})


def sample_hemisphere(rng, n: int) -> np.ndarray:
    """Area-uniform axes on the upper half-sphere."""
    z = rng.uniform(0.0, 1.0, n)
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    s = np.sqrt(1.0 - z * z)
    return canonical_direction(np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1))


def gen_isotropic_fibers(dims, spacing, radius: float, n_fibers: int, seed=0,
                         length: Optional[float] = None,
                         gray: GrayLevels = DEFAULT_GRAY) -> Phantom:
    """Randomly oriented, equally long fibers lying entirely inside the volume.

    Axes are area-uniform on the half-sphere and each center is drawn
    uniformly among positions that keep the fiber's axis segment inside the
    volume, so every fiber contributes the same volume. ``length`` defaults
    to half the smallest extent. The reported truth is the average outer
    product of the axes actually placed.
    """
    dims = _as_dims(dims)
    spacing = _as_spacing(spacing)
    _check_radius(radius, spacing)
    if n_fibers < 0:
        raise ValueError(f"n_fibers must be >= 0, got {n_fibers}")
    extent = np.array(dims) * np.array(spacing)
    if length is None:
        length = 0.5 * float(extent.min())
    if not 0 < length < float(extent.min()):
        raise GenerationError(f"fiber length {length} um must be in (0, {extent.min()})")
    place, noise = _streams(seed)
    axes = sample_hemisphere(place, n_fibers)
    u = place.uniform(0.0, 1.0, size=(n_fibers, 3))
    half = 0.5 * length * np.abs(axes)
    centers = half + u * (extent - 2.0 * half)
    fibers = [FiberSpec(tuple(ax), float(radius), float(length), tuple(c))
              for ax, c in zip(axes, centers)]
    coverage = rasterize(dims, spacing, fibers)
    vol = Volume.adopt(_render(coverage, gray, noise), spacing)
    truth = tensor_from_axes(axes) if n_fibers else np.full(6, np.nan)
    return Phantom(vol, truth, fibers, coverage, gray,
                   meta={"kind": "isotropic", "seed": seed, "length": length})


def _layer_fibers(axis: int, extent, z0: float, z1: float, radius: float, pitch: float, rng):
    """Fibers along ``axis`` (x or y) filling the slab ``z0 <= z < z1``."""
    across = 1 - axis  # the other in-plane axis
    ncols = int(extent[across] // pitch)
    nrows = int((z1 - z0) // pitch)
    if ncols < 1 or nrows < 1:
        raise GenerationError(
            f"layer {z0:.4g}..{z1:.4g} um cannot hold fibers at pitch {pitch:.4g} um")
    pa, pz = extent[across] / ncols, (z1 - z0) / nrows
    gap = min(pa, pz) - 2.0 * radius
    if gap < 0:
        raise GenerationError(f"fiber radius {radius} um too large for pitch {pitch} um")
    jitter = rng.uniform(-0.25 * gap, 0.25 * gap, size=(ncols * nrows, 2))
    d = np.zeros(3)
    d[axis] = 1.0
    half = float(np.linalg.norm(extent))
    fibers = []
    for n, (ja, jz) in enumerate(jitter):
        c = np.empty(3)
        c[axis] = 0.5 * extent[axis]
        c[across] = (n % ncols + 0.5) * pa + ja
        c[2] = z0 + (n // ncols + 0.5) * pz + jz
        fibers.append(FiberSpec(tuple(d), float(radius), 2.0 * half, tuple(c)))
    return fibers


def gen_shell_core(dims, spacing, radius: float, seed=0, pitch: Optional[float] = None,
                   tile_edge_vox: Optional[int] = None,
                   gray: GrayLevels = DEFAULT_GRAY) -> Phantom:
    """Three-layer plate: y-fibers in the outer thirds, x-fibers in the core.

    ``pitch`` (default four radii) is the center spacing of the fiber lattice
    in each layer. Passing ``tile_edge_vox`` enforces that the plate is at
    least three tiles thick, so each layer can be resolved by the tiling.
    """
    dims = _as_dims(dims)
    spacing = _as_spacing(spacing)
    _check_radius(radius, spacing)
    if tile_edge_vox is not None and dims[2] < 3 * tile_edge_vox:
        raise GenerationError(
            f"plate is {dims[2]} voxels thick, fewer than three tiles of {tile_edge_vox}")
    if dims[2] < 3:
        raise GenerationError(f"plate needs at least 3 slices, got {dims[2]}")
    pitch = 4.0 * radius if pitch is None else float(pitch)
    place, noise = _streams(seed)
    extent = np.array(dims) * np.array(spacing)
    z1 = round(dims[2] / 3) * spacing[2]
    z2 = round(2 * dims[2] / 3) * spacing[2]
    shells = (_layer_fibers(1, extent, 0.0, z1, radius, pitch, place)
              + _layer_fibers(1, extent, z2, extent[2], radius, pitch, place))
    core = _layer_fibers(0, extent, z1, z2, radius, pitch, place)
    cov_x = rasterize(dims, spacing, core)
    cov_y = rasterize(dims, spacing, shells)
    weights = np.zeros((dims[2], 2))
    weights[:, 0] = cov_x.sum(axis=(0, 1), dtype=np.float64)
    weights[:, 1] = cov_y.sum(axis=(0, 1), dtype=np.float64)
    np.maximum(cov_x, cov_y, out=cov_x)
    del cov_y
    vol = Volume.adopt(_render(cov_x, gray, noise), spacing)
    fam = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    total = weights.sum(axis=0)
    truth = total @ outer_sym(fam) / total.sum()
    return Phantom(vol, truth, shells + core, cov_x, gray, fam, weights,
                   meta={"kind": "shell-core", "seed": seed, "pitch": pitch,
                         "layer_bounds_um": [0.0, z1, z2, float(extent[2])]})
