"""Time the compiled kernels against the numpy fallback.

Run from the repository root::

    python3 benchmarks/bench_backends.py [--size 96] [--repeat 3] [--threads 1]

Each kernel is fed identical inputs; the table reports the best wall time of
``--repeat`` runs and the speed-up of the compiled version.
"""
import argparse
import time

import numpy as np

from fibertensor import _pure
from fibertensor.filters import gaussian_kernel, gaussian_smooth, hessian_scales, pad_reflect
from fibertensor.phantom import gen_straight_bundle

try:
    from fibertensor import _kernels
except ImportError:  # extension not built
    _kernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, threads, seed):
    rng = np.random.default_rng(seed)
    ph = gen_straight_bundle((n, n, n), (1.0, 1.0, 1.0), (0.2, 1.0, 0.1), 3.0,
                             max(1, n * n // 200), seed=seed)
    vol = ph.volume
    taps = gaussian_kernel(3.0).taps
    padded = pad_reflect(gaussian_smooth(vol, 3.0).data)
    idx = np.flatnonzero(np.ravel(ph.coverage > 0.5, order="F"))
    scales = hessian_scales(vol.spacing)
    mats = rng.normal(size=(200_000, 6))
    p = np.array([f.endpoints() for f in ph.fibers])
    radius = ph.fibers[0].radius

    def raster(mod, *extra):
        cov = np.zeros(vol.dims, np.float32, order="F")
        mod.rasterize_capsules(cov, p[:, 0], p[:, 1], radius, vol.spacing, *extra)

    return [
        (f"correlate_axis {n}^3, 19 taps, axis 1",
         lambda: _pure.correlate_axis(vol.data, taps, 1),
         lambda: _kernels.correlate_axis(vol.data, taps, 1, threads)),
        (f"eigh_sym3 {len(mats)} matrices",
         lambda: _pure.eigh_sym3(mats),
         lambda: _kernels.eigh_sym3(mats, threads)),
        (f"hessian_orientation {idx.size} voxels",
         lambda: _pure.hessian_orientation(padded, idx, vol.dims, scales, 1e-10, 1),
         lambda: _kernels.hessian_orientation(padded, idx, vol.dims, scales, 1e-10, threads)),
        (f"rasterize_capsules {len(p)} fibers",
         lambda: raster(_pure),
         lambda: raster(_kernels, threads)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=96, help="cube edge in voxels")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1, help="threads for the compiled kernels")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels is None:
        raise SystemExit("compiled extension not available; build with pip install -e .")

    print(f"{'kernel':42s} {'python s':>10s} {'compiled s':>11s} {'speed-up':>9s}")
    for label, py, cy in cases(args.size, args.threads, args.seed):
        tp, tc = best_of(py, args.repeat), best_of(cy, args.repeat)
        print(f"{label:42s} {tp:10.3f} {tc:11.4f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
