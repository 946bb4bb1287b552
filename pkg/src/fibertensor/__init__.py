"""Fiber orientation analysis of 3D CT volumes.

Local fiber axes come from the Hessian of the smoothed gray values (the
direction of least curvature along a bright ridge). They are averaged into
second-order orientation tensors over cubic tiles, from which anisotropy
indices, mean directions and through-thickness layer profiles follow.
A phantom generator supplies volumes with known ground truth.
"""
from pathlib import Path

from ._backend import name as backend, set_threads, get_threads
from .volume import (
    Mask, OrientationField, TensorField, Volume, canonical_direction, crop, downsample,
)

__version__ = "0.1.0"

#: 64^3 bundle phantom (fibers along y, 20.4 um across at 3.4 um voxels) and its truth
DEMO_VOLUME = Path(__file__).parent / "data" / "demo_bundle.mhd"
DEMO_TRUTH = Path(__file__).parent / "data" / "demo_bundle_truth.json"

__all__ = [
    "DEMO_TRUTH", "DEMO_VOLUME", "Mask", "OrientationField", "TensorField", "Volume", "backend", "canonical_direction",
    "crop", "downsample", "get_threads", "set_threads", "__version__",
]
