"""Vectorized numpy/scipy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable (or disabled
with ``FIBERTENSOR_BACKEND=python``). Every function here has a twin with
the same signature in ``_kernels.pyx``; the two are tested against each
other.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import ndimage

CHUNK = 1 << 18
# below this relative spread the matrix is treated as a multiple of identity
DEGENERATE_SPREAD = 1e-12


def correlate_axis(src: np.ndarray, taps: np.ndarray, axis: int, nthreads: int = 1) -> np.ndarray:
    """``out[i] = sum_k taps[k] * src[i + k - r]`` along ``axis`` with half-sample reflection."""
    out = np.empty(src.shape, dtype=np.float32, order="F")
    ndimage.correlate1d(src, np.asarray(taps, dtype=np.float64), axis=axis,
                        output=out, mode="reflect")
    return out


def _cross(a, b):
    return np.stack([
        a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1],
        a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2],
        a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0],
    ], axis=1)


def _matvec(c, v):
    xx, yy, zz, xy, xz, yz = (c[:, k] for k in range(6))
    return np.stack([
        xx * v[:, 0] + xy * v[:, 1] + xz * v[:, 2],
        xy * v[:, 0] + yy * v[:, 1] + yz * v[:, 2],
        xz * v[:, 0] + yz * v[:, 1] + zz * v[:, 2],
    ], axis=1)


def _dot(a, b):
    return a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1] + a[:, 2] * b[:, 2]


def eigh_sym3(m: np.ndarray, nthreads: int = 1):
    """Eigen-decompose packed symmetric matrices ``m`` of shape ``(N, 6)``.

    Returns ``(w, v)`` with ``w`` of shape ``(N, 3)`` sorted by ascending
    absolute value and ``v[:, :, k]`` the unit eigenvector for ``w[:, k]``.
    Exact ties in ``|w|`` put the eigenvector with the larger ``|v_z|`` first.
    """
    m = np.ascontiguousarray(m, dtype=np.float64).reshape(-1, 6)
    with np.errstate(invalid="ignore", divide="ignore"):
        return _eigh_sym3(m)


def _eigh_sym3(m):
    n = m.shape[0]
    scale = np.abs(m).max(axis=1)
    zero = scale == 0
    a = m / np.where(zero, 1.0, scale)[:, None]

    q = (a[:, 0] + a[:, 1] + a[:, 2]) / 3.0
    b = a.copy()
    b[:, :3] -= q[:, None]
    p = np.sqrt(((b[:, :3] ** 2).sum(1) + 2.0 * (b[:, 3:] ** 2).sum(1)) / 6.0)
    flat = p < DEGENERATE_SPREAD
    c = b / np.where(flat, 1.0, p)[:, None]

    xx, yy, zz, xy, xz, yz = (c[:, k] for k in range(6))
    det = xx * (yy * zz - yz * yz) - xy * (xy * zz - yz * xz) + xz * (xy * yz - yy * xz)
    phi = np.arccos(np.clip(0.5 * det, -1.0, 1.0)) / 3.0
    hi = 2.0 * np.cos(phi)
    lo = 2.0 * np.cos(phi + 2.0 * np.pi / 3.0)
    mid = -hi - lo
    mu = np.where(hi - mid >= mid - lo, hi, lo)

    # eigenvector of the best separated eigenvalue from row cross products
    r0 = np.stack([xx - mu, xy, xz], axis=1)
    r1 = np.stack([xy, yy - mu, yz], axis=1)
    r2 = np.stack([xz, yz, zz - mu], axis=1)
    cands = np.stack([_cross(r0, r1), _cross(r0, r2), _cross(r1, r2)], axis=1)
    norms = (cands ** 2).sum(2)
    best = norms.argmax(1)
    v0 = cands[np.arange(n), best]
    v0 /= np.sqrt(norms[np.arange(n), best])[:, None]

    # orthonormal complement, then a single 2x2 Jacobi rotation
    use_x = np.abs(v0[:, 0]) > np.abs(v0[:, 1])
    u = np.where(use_x[:, None],
                 np.stack([-v0[:, 2], np.zeros(n), v0[:, 0]], axis=1),
                 np.stack([np.zeros(n), v0[:, 2], -v0[:, 1]], axis=1))
    u /= np.sqrt(_dot(u, u))[:, None]
    w = _cross(v0, u)
    cu = _matvec(c, u)
    cw = _matvec(c, w)
    m00 = _dot(u, cu)
    m01 = _dot(u, cw)
    m11 = _dot(w, cw)
    nz = m01 != 0
    theta = (m11 - m00) / (2.0 * np.where(nz, m01, 1.0))
    t = np.where(nz, np.copysign(1.0, theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)), 0.0)
    cs = 1.0 / np.sqrt(t * t + 1.0)
    sn = t * cs
    v1 = cs[:, None] * u - sn[:, None] * w
    v2 = sn[:, None] * u + cs[:, None] * w

    vecs = np.stack([v0, v1, v2], axis=2)
    vecs[flat | zero] = np.eye(3)
    # Rayleigh quotients on the scaled input
    lam = np.empty((n, 3))
    for k in range(3):
        lam[:, k] = _dot(vecs[:, :, k], _matvec(a, vecs[:, :, k]))
    lam[flat] = a[flat, :3]
    lam *= scale[:, None]

    order = np.lexsort((-np.abs(vecs[:, 2, :]), np.abs(lam)), axis=-1)
    lam = np.take_along_axis(lam, order, axis=1)
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=2)
    return lam, vecs


def _canonical(v):
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    flip = (z < 0) | ((z == 0) & ((y < 0) | ((y == 0) & (x < 0))))
    return np.where(flip[:, None], -v, v) + 0.0


def _hessian_at(flat_padded, idx, dims, scales):
    nx, ny, nz = dims
    px, py = nx + 2, ny + 2
    ix = idx % nx
    rest = idx // nx
    iy = rest % ny
    iz = rest // ny
    c = (ix + 1) + px * ((iy + 1) + py * (iz + 1))
    sx, sy, sz = 1, px, px * py

    def f(off):
        return flat_padded[c + off].astype(np.float64)

    f0 = f(0)
    h = np.empty((idx.size, 6))
    h[:, 0] = f(sx) + f(-sx) - 2.0 * f0
    h[:, 1] = f(sy) + f(-sy) - 2.0 * f0
    h[:, 2] = f(sz) + f(-sz) - 2.0 * f0
    for k, (a, b) in zip((3, 4, 5), ((sx, sy), (sx, sz), (sy, sz))):
        h[:, k] = 0.25 * (f(a + b) - f(a - b) - f(-a + b) + f(-a - b))
    h *= scales[None, :]
    return h


def hessian_orientation(padded: np.ndarray, idx: np.ndarray, dims, scales: np.ndarray,
                        norm_floor: float, nthreads: int = 1):
    """Hessian, eigen-analysis and axis extraction for the voxels ``idx``.

    ``padded`` is the smoothed volume extended by one reflected voxel on
    every side; ``idx`` are x-fastest linear indices into the unpadded
    grid. ``scales`` converts the six voxel-unit stencils to physical
    units. Returns canonical float32 directions and a validity flag
    (Hessian Frobenius norm above ``norm_floor`` and non-zero).
    """
    flat_padded = np.ravel(padded, order="F")
    idx = np.asarray(idx, dtype=np.int64)
    dirs = np.zeros((idx.size, 3), dtype=np.float32)
    valid = np.zeros(idx.size, dtype=bool)
    scales = np.asarray(scales, dtype=np.float64)

    def work(start):
        sl = slice(start, min(start + CHUNK, idx.size))
        h = _hessian_at(flat_padded, idx[sl], dims, scales)
        norm = np.sqrt((h[:, :3] ** 2).sum(1) + 2.0 * (h[:, 3:] ** 2).sum(1))
        ok = (norm > 0) & (norm >= norm_floor)
        if not np.isfinite(h).all():
            bad = int(np.flatnonzero(~np.isfinite(h).all(1))[0]) + sl.start
            return bad
        _, vecs = eigh_sym3(h)
        d = _canonical(vecs[:, :, 0])
        d[~ok] = 0.0
        dirs[sl] = d
        valid[sl] = ok
        return None

    starts = range(0, idx.size, CHUNK)
    if nthreads > 1 and idx.size > CHUNK:
        with ThreadPoolExecutor(nthreads) as pool:
            results = list(pool.map(work, starts))
    else:
        results = [work(s) for s in starts]
    bad = [r for r in results if r is not None]
    return dirs, valid, (bad[0] if bad else -1)


def _slab_box(p0, d, radius, lo, hi, k, spacing, dims):
    """Voxel index box that can touch the capsule within physical slab [lo, hi] along axis k."""
    if d[k] != 0:
        t_a = (lo - radius - p0[k]) / d[k]
        t_b = (hi + radius - p0[k]) / d[k]
        t_lo, t_hi = max(min(t_a, t_b), 0.0), min(max(t_a, t_b), 1.0)
    else:
        if not lo - radius <= p0[k] <= hi + radius:
            return None
        t_lo, t_hi = 0.0, 1.0
    if t_lo > t_hi:
        return None
    box = []
    for j in range(3):
        a = p0[j] + t_lo * d[j]
        b = p0[j] + t_hi * d[j]
        i0 = int(np.floor((min(a, b) - radius) / spacing[j]))
        i1 = int(np.floor((max(a, b) + radius) / spacing[j])) + 1
        i0, i1 = max(i0, 0), min(i1, dims[j])
        if i0 >= i1:
            return None
        box.append((i0, i1))
    return box


_SUB = np.array([[sx, sy, sz] for sz in (0.25, 0.75) for sy in (0.25, 0.75)
                 for sx in (0.25, 0.75)])


def _seg_dist2(px, py, pz, p0, d, dd):
    wx, wy, wz = px - p0[0], py - p0[1], pz - p0[2]
    t = np.clip((wx * d[0] + wy * d[1] + wz * d[2]) / dd, 0.0, 1.0)
    ex, ey, ez = wx - t * d[0], wy - t * d[1], wz - t * d[2]
    return ex * ex + ey * ey + ez * ez


def rasterize_capsules(coverage: np.ndarray, p0s: np.ndarray, p1s: np.ndarray, radius: float,
                       spacing, nthreads: int = 1) -> None:
    """Max-combine 2x2x2-supersampled capsule coverage into ``coverage`` in place.

    Capsules are segments ``p0 -> p1`` (physical units) dilated by ``radius``.
    """
    dims = coverage.shape
    spacing = np.asarray(spacing, dtype=np.float64)
    r2 = radius * radius
    slab = 4
    for p0, p1 in zip(np.asarray(p0s, dtype=np.float64), np.asarray(p1s, dtype=np.float64)):
        d = p1 - p0
        dd = float(d @ d)
        if dd == 0:
            continue
        k = int(np.argmax(np.abs(d)))
        for t0 in range(0, dims[k], slab):
            t1 = min(t0 + slab, dims[k])
            box = _slab_box(p0, d, radius, t0 * spacing[k], t1 * spacing[k], k, spacing, dims)
            if box is None:
                continue
            box[k] = (max(box[k][0], t0), min(box[k][1], t1))
            if box[k][0] >= box[k][1]:
                continue
            ii = [np.arange(a, b, dtype=np.float64) for a, b in box]
            gx, gy, gz = np.meshgrid(*ii, indexing="ij")
            count = np.zeros(gx.shape)
            for ox, oy, oz in _SUB:
                dist2 = _seg_dist2((gx + ox) * spacing[0], (gy + oy) * spacing[1],
                                   (gz + oz) * spacing[2], p0, d, dd)
                count += dist2 <= r2
            sl = tuple(slice(a, b) for a, b in box)
            np.maximum(coverage[sl], (count / 8.0).astype(np.float32), out=coverage[sl])
