"""Part and fiber-phase masks from gray values.

The part mask separates solid from air with a manual global threshold and is
cleaned by a 3x3x3 opening. The fiber mask keeps part voxels at or above a
multiple (default 1.25) of Otsu's threshold, so that partial-volume voxels at
fiber edges are systematically left out.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateHistogramError
from .volume import Mask, Volume

NBINS = 256
DEFAULT_FIBER_FACTOR = 1.25

_CUBE = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class Histogram:
    """``counts[k]`` voxels fall in ``[lo + k w, lo + (k + 1) w)``, the last bin closed."""

    counts: np.ndarray
    lo: float
    hi: float

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size < 1:
            raise ValueError("histogram needs a 1-D array of counts")
        if (counts < 0).any():
            raise ValueError("histogram counts must be non-negative")
        if not self.hi >= self.lo:
            raise ValueError(f"histogram range is inverted: [{self.lo}, {self.hi}]")
        object.__setattr__(self, "counts", counts)

    @property
    def nbins(self) -> int:
        return self.counts.size

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.nbins

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.nbins + 1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def center(self, k) -> np.ndarray:
        return self.lo + (np.asarray(k) + 0.5) * self.width

    def upper_edge(self, k: int) -> float:
        return self.lo + (k + 1) * self.width


def bin_index(values, lo: float, hi: float, nbins: int = NBINS) -> np.ndarray:
    """Bin of each value for ``nbins`` equal bins over ``[lo, hi]``."""
    v = np.asarray(values, dtype=np.float64)
    if hi == lo:
        return np.zeros(v.shape, dtype=np.int64)
    k = np.floor((v - lo) * (nbins / (hi - lo))).astype(np.int64)
    return np.clip(k, 0, nbins - 1)


def histogram(values, nbins: int = NBINS) -> Histogram:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise DegenerateHistogramError("no voxels to build a histogram from")
    lo, hi = float(v.min()), float(v.max())
    counts = np.bincount(bin_index(v, lo, hi, nbins), minlength=nbins)
    return Histogram(counts, lo, hi)


def otsu_bin(hist: Histogram) -> int:
    """Last bin of the lower class that maximizes between-class variance.

    The criterion ``(S c0 - n s0)^2 / (c0 (n - c0))``, with counts and bin
    indices standing in for gray values (Otsu's criterion is affine
    invariant), is evaluated in exact integer arithmetic, so ties are real ties
    and resolve to the lowest bin.
    """
    h = [int(c) for c in hist.counts]
    if sum(1 for c in h if c) < 2:
        raise DegenerateHistogramError("histogram has fewer than two occupied bins")
    n = sum(h)
    s_total = sum(j * c for j, c in enumerate(h))
    best_k, best_num, best_den = -1, 0, 1
    c0 = s0 = 0
    for k in range(len(h) - 1):
        c0 += h[k]
        s0 += k * h[k]
        if c0 == 0 or c0 == n:
            continue
        num = (s_total * c0 - n * s0) ** 2
        den = c0 * (n - c0)
        if best_k < 0 or num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den
    return best_k


def otsu_threshold(hist: Histogram) -> float:
    """Otsu's gray-value threshold: the upper edge of the winning lower-class bin."""
    return hist.upper_edge(otsu_bin(hist))


def morphological_opening(mask: Mask) -> Mask:
    """Erode then dilate with the 3x3x3 cube; voxels outside the volume are background."""
    bits = ndimage.binary_erosion(mask.bits, structure=_CUBE, border_value=0)
    bits = ndimage.binary_dilation(bits, structure=_CUBE, border_value=0)
    return Mask(bits)


def part_mask(volume: Volume, threshold: float) -> Mask:
    """Solid-matter mask: ``gray >= threshold``, then opened.

    A volume that is solid everywhere stays all-true: erosion strips the
    one-voxel border shell and dilation restores it.
    """
    return morphological_opening(Mask(volume.data >= np.float64(threshold)))


def fiber_mask(volume: Volume, part: Mask, factor: float = DEFAULT_FIBER_FACTOR) -> Mask:
    """Part voxels with ``gray >= factor * otsu``, Otsu taken over part voxels only."""
    if not factor > 0:
        raise ValueError(f"fiber threshold factor must be > 0, got {factor}")
    part.check_matches(volume)
    hist = histogram(volume.data[part.bits])
    t = factor * otsu_threshold(hist)
    return Mask(part.bits & (volume.data >= np.float64(t)))
