"""Separable Gaussian smoothing, Hessian and structure-tensor fields.

All filters use half-sample mirror extension at the volume border
(``d c b a | a b c d``), which keeps symmetric smoothing mean-preserving.
Kernel taps are applied as correlations: ``out[i] = sum_k taps[k] * in[i + k - r]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backend
from .errors import NumericalError
from .volume import TensorField, Volume

TRUNCATE = 3.0


@dataclass(frozen=True)
class Kernel1D:
    """Odd-length correlation taps; smoothing kernels sum to 1, derivative kernels to 0."""

    taps: np.ndarray
    kind: str = "smooth"

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size % 2 != 1:
            raise ValueError(f"kernel length must be odd, got {taps.size}")
        target = {"smooth": 1.0, "derivative": 0.0}[self.kind]
        if abs(taps.sum() - target) > 1e-9:
            raise ValueError(f"{self.kind} kernel taps sum to {taps.sum()}, expected {target}")
        object.__setattr__(self, "taps", taps)

    @property
    def radius(self) -> int:
        return self.taps.size // 2


def gaussian_kernel(sigma: float) -> Kernel1D:
    """Sampled Gaussian truncated at ``ceil(3 sigma)`` and renormalized."""
    if sigma < 0 or not math.isfinite(sigma):
        raise ValueError(f"sigma must be a finite value >= 0, got {sigma}")
    if sigma == 0:
        return Kernel1D(np.array([1.0]))
    r = int(math.ceil(TRUNCATE * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return Kernel1D(g / g.sum())


def binomial_kernel() -> Kernel1D:
    """The 3-tap ``[1, 2, 1] / 4`` stand-in for a Gaussian on tiny fibers."""
    return Kernel1D(np.array([0.25, 0.5, 0.25]))


def gaussian_derivative_kernel(sigma: float) -> Kernel1D:
    """First-derivative taps, normalized so a unit ramp yields exactly 1.

    ``sigma == 0`` gives the central difference ``[-1/2, 0, 1/2]``.
    """
    if sigma < 0 or not math.isfinite(sigma):
        raise ValueError(f"sigma must be a finite value >= 0, got {sigma}")
    if sigma == 0:
        return Kernel1D(np.array([-0.5, 0.0, 0.5]), "derivative")
    r = max(1, int(math.ceil(TRUNCATE * sigma)))
    x = np.arange(-r, r + 1, dtype=np.float64)
    d = x * np.exp(-0.5 * (x / sigma) ** 2)
    d /= (x * d).sum()
    d[r] = 0.0
    d[:r] = -d[:r:-1]  # exact antisymmetry
    return Kernel1D(d, "derivative")


def _per_axis(value) -> tuple[float, float, float]:
    if np.ndim(value) == 0:
        return (float(value),) * 3
    v = tuple(float(x) for x in value)
    if len(v) != 3:
        raise ValueError(f"expected a scalar or three values, got {value!r}")
    return v  # type: ignore[return-value]


def separable(data: np.ndarray, kernels: Sequence[Kernel1D]) -> np.ndarray:
    """Apply one kernel per axis, x first, then y, then z."""
    k = _backend.kernels
    out = data
    for axis, kern in enumerate(kernels):
        if kern.taps.size == 1 and kern.taps[0] == 1.0:
            continue
        out = k.correlate_axis(out, kern.taps, axis, _backend.get_threads())
    if out is data:
        out = np.array(data, dtype=np.float32, order="F")
    return out


def gaussian_smooth(volume: Volume, sigma_vox, fallback: bool = False) -> Volume:
    """Smooth with a separable Gaussian of per-axis width ``sigma_vox`` (voxels).

    With ``fallback=True`` the 3x3x3 binomial mask is used on every axis and
    ``sigma_vox`` is ignored (apart from validation).
    """
    sig = _per_axis(sigma_vox)
    if any(s < 0 or not math.isfinite(s) for s in sig):
        raise ValueError(f"sigma must be >= 0 on every axis, got {sigma_vox!r}")
    kernels = [binomial_kernel()] * 3 if fallback else [gaussian_kernel(s) for s in sig]
    return Volume.adopt(separable(volume.data, kernels), volume.spacing)


def smoothing_for_fiber(fiber_diameter_um: float, spacing, sigma_um: float | None = None):
    """Per-axis Gaussian sigma in voxels and whether the 3x3x3 fallback applies.

    The sigma defaults to the fiber radius. Fibers resolved by fewer than
    three voxels across (on the finest axis) get the fallback mask instead.
    """
    if not fiber_diameter_um > 0:
        raise ValueError(f"fiber diameter must be > 0, got {fiber_diameter_um}")
    sigma_um = 0.5 * fiber_diameter_um if sigma_um is None else float(sigma_um)
    if sigma_um < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma_um}")
    sp = _per_axis(spacing)
    fallback = fiber_diameter_um / min(sp) < 3.0
    return tuple(sigma_um / s for s in sp), fallback


def hessian_scales(spacing) -> np.ndarray:
    sx, sy, sz = _per_axis(spacing)
    return np.array([1 / (sx * sx), 1 / (sy * sy), 1 / (sz * sz),
                     1 / (sx * sy), 1 / (sx * sz), 1 / (sy * sz)])


def pad_reflect(data: np.ndarray, width: int = 1) -> np.ndarray:
    return np.asfortranarray(np.pad(data, width, mode="symmetric"), dtype=np.float32)


def hessian_field(volume: Volume) -> TensorField:
    """Central-difference second derivatives of an (already smoothed) volume.

    ``[1, -2, 1]`` on the diagonal, products of ``[-1/2, 0, 1/2]`` off it,
    scaled by ``1 / (s_i s_j)`` to physical units.
    """
    f = pad_reflect(volume.data).astype(np.float64)
    n = volume.dims
    c = (slice(1, n[0] + 1), slice(1, n[1] + 1), slice(1, n[2] + 1))

    def sh(offsets):
        return f[tuple(slice(1 + o, 1 + o + m) for o, m in zip(offsets, n))]

    f0 = f[c]
    out = np.empty(n + (6,), dtype=np.float32, order="F")
    unit = np.eye(3, dtype=int)
    scales = hessian_scales(volume.spacing)
    with np.errstate(over="ignore", invalid="ignore"):  # reported below
        for k in range(3):
            e = unit[k]
            out[..., k] = (sh(e) + sh(-e) - 2.0 * f0) * scales[k]
        for k, (i, j) in zip((3, 4, 5), ((0, 1), (0, 2), (1, 2))):
            a, b = unit[i], unit[j]
            out[..., k] = 0.25 * (sh(a + b) - sh(a - b) - sh(-a + b) + sh(-a - b)) * scales[k]
    _check_finite(out)
    return TensorField(out, volume.spacing)


def _check_finite(components: np.ndarray) -> None:
    finite = np.isfinite(components).all(axis=-1)
    if not finite.all():
        raise NumericalError("non-finite tensor component", np.argwhere(~finite)[0])


def structure_tensor_field(volume: Volume, sigma_grad, sigma_int) -> TensorField:
    """Gaussian-integrated outer product of the Gaussian-derivative gradient.

    Scales are in voxels; gradient components are converted to physical units.
    """
    sg = _per_axis(sigma_grad)
    si = _per_axis(sigma_int)
    if any(s < 0 or not math.isfinite(s) for s in sg + si):
        raise ValueError(f"sigmas must be >= 0, got {sigma_grad!r}, {sigma_int!r}")
    smooth = [gaussian_kernel(s) for s in sg]
    grads = []
    for axis in range(3):
        kernels = list(smooth)
        kernels[axis] = gaussian_derivative_kernel(sg[axis])
        grads.append(separable(volume.data, kernels) / np.float32(volume.spacing[axis]))
    integrate = [gaussian_kernel(s) for s in si]
    out = np.empty(volume.dims + (6,), dtype=np.float32, order="F")
    for k, (i, j) in enumerate(((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))):
        prod = np.asfortranarray(grads[i] * grads[j])
        out[..., k] = separable(prod, integrate)
    _check_finite(out)
    return TensorField(out, volume.spacing)
