# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the per-voxel kernels in ``_pure``.

Same signatures and numerics as the numpy twins. Parallel loops only ever
write disjoint output ranges, so results do not depend on ``nthreads``.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange, parallel
from libc.math cimport sqrt, fabs, cos, acos, floor, copysign, isfinite, M_PI
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double DEGENERATE_SPREAD = 1e-12


# ---------------------------------------------------------------------------
# separable filtering

cdef inline Py_ssize_t _reflect(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t period = 2 * n
    i = i % period
    if i < 0:
        i += period
    if i >= n:
        i = period - 1 - i
    return i


def correlate_axis(const float[:, :, :] src, taps, int axis, int nthreads=1):
    """``out[i] = sum_k taps[k] * src[i + k - r]`` along ``axis``, half-sample reflection."""
    cdef double[::1] w = np.ascontiguousarray(taps, dtype=np.float64)
    cdef Py_ssize_t ntap = w.shape[0]
    cdef Py_ssize_t rad = ntap // 2
    cdef Py_ssize_t n0 = src.shape[0], n1 = src.shape[1], n2 = src.shape[2]
    out_arr = np.empty((n0, n1, n2), dtype=np.float32, order="F")
    cdef float[::1, :, :] out = out_arr
    cdef Py_ssize_t n, na, nb
    if axis == 0:
        n, na, nb = n0, n1, n2
    elif axis == 1:
        n, na, nb = n1, n0, n2
    elif axis == 2:
        n, na, nb = n2, n0, n1
    else:
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    cdef Py_ssize_t[::1] table = np.array(
        [_reflect(i - rad, n) for i in range(n + 2 * rad)], dtype=np.intp)
    cdef Py_ssize_t line, a, b, i, k
    cdef double acc
    cdef double *buf
    with nogil, parallel(num_threads=nthreads):
        buf = <double *> malloc((n + 2 * rad) * sizeof(double))
        for line in prange(na * nb, schedule="static"):
            a = line % na
            b = line // na
            for i in range(n + 2 * rad):
                if axis == 0:
                    buf[i] = src[table[i], a, b]
                elif axis == 1:
                    buf[i] = src[a, table[i], b]
                else:
                    buf[i] = src[a, b, table[i]]
            for i in range(n):
                acc = 0.0
                for k in range(ntap):
                    acc = acc + w[k] * buf[i + k]
                if axis == 0:
                    out[i, a, b] = <float> acc
                elif axis == 1:
                    out[a, i, b] = <float> acc
                else:
                    out[a, b, i] = <float> acc
        free(buf)
    return out_arr


# ---------------------------------------------------------------------------
# symmetric 3x3 eigen-decomposition

cdef inline void _cross3(double *a, double *b, double *out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline double _quad(double *c, double *v) noexcept nogil:
    """v^T C v for packed symmetric C."""
    cdef double x = c[0] * v[0] + c[3] * v[1] + c[4] * v[2]
    cdef double y = c[3] * v[0] + c[1] * v[1] + c[5] * v[2]
    cdef double z = c[4] * v[0] + c[5] * v[1] + c[2] * v[2]
    return v[0] * x + v[1] * y + v[2] * z


cdef inline double _bilin(double *c, double *u, double *v) noexcept nogil:
    cdef double x = c[0] * v[0] + c[3] * v[1] + c[4] * v[2]
    cdef double y = c[3] * v[0] + c[1] * v[1] + c[5] * v[2]
    cdef double z = c[4] * v[0] + c[5] * v[1] + c[2] * v[2]
    return u[0] * x + u[1] * y + u[2] * z


cdef inline bint _before(double la, double za, double lb, double zb) noexcept nogil:
    la = fabs(la)
    lb = fabs(lb)
    if la < lb:
        return True
    if la == lb and fabs(za) > fabs(zb):
        return True
    return False


cdef void _eig3(double *m, double *lam, double *vec) noexcept nogil:
    """Packed matrix ``m`` -> eigenvalues ``lam[3]`` and column eigenvectors
    ``vec[3*row + col]``, sorted as in ``_pure.eigh_sym3``."""
    cdef double a[6]
    cdef double c[6]
    cdef double scale = 0.0, q, p, det, phi, hi, lo, mid, mu
    cdef double r0[3]
    cdef double r1[3]
    cdef double r2[3]
    cdef double cand[3]
    cdef double v0[3]
    cdef double u[3]
    cdef double w[3]
    cdef double vv[9]
    cdef double ll[3]
    cdef double best, nrm, m00, m01, m11, theta, t, cs, sn
    cdef int i, j, k, order[3], tmp
    for i in range(6):
        if fabs(m[i]) > scale:
            scale = fabs(m[i])
    if scale == 0.0:
        scale = 1.0
    for i in range(6):
        a[i] = m[i] / scale
    q = (a[0] + a[1] + a[2]) / 3.0
    for i in range(6):
        c[i] = a[i]
    c[0] -= q
    c[1] -= q
    c[2] -= q
    p = sqrt((c[0] * c[0] + c[1] * c[1] + c[2] * c[2]
              + 2.0 * (c[3] * c[3] + c[4] * c[4] + c[5] * c[5])) / 6.0)
    if p < DEGENERATE_SPREAD:
        for i in range(9):
            vv[i] = 0.0
        vv[0] = 1.0
        vv[4] = 1.0
        vv[8] = 1.0
        ll[0] = a[0]
        ll[1] = a[1]
        ll[2] = a[2]
    else:
        for i in range(6):
            c[i] = c[i] / p
        det = (c[0] * (c[1] * c[2] - c[5] * c[5])
               - c[3] * (c[3] * c[2] - c[5] * c[4])
               + c[4] * (c[3] * c[5] - c[1] * c[4]))
        det = 0.5 * det
        if det > 1.0:
            det = 1.0
        elif det < -1.0:
            det = -1.0
        phi = acos(det) / 3.0
        hi = 2.0 * cos(phi)
        lo = 2.0 * cos(phi + 2.0 * M_PI / 3.0)
        mid = -hi - lo
        mu = hi if hi - mid >= mid - lo else lo

        r0[0] = c[0] - mu; r0[1] = c[3]; r0[2] = c[4]
        r1[0] = c[3]; r1[1] = c[1] - mu; r1[2] = c[5]
        r2[0] = c[4]; r2[1] = c[5]; r2[2] = c[2] - mu
        _cross3(r0, r1, v0)
        best = v0[0] * v0[0] + v0[1] * v0[1] + v0[2] * v0[2]
        _cross3(r0, r2, cand)
        nrm = cand[0] * cand[0] + cand[1] * cand[1] + cand[2] * cand[2]
        if nrm > best:
            best = nrm
            v0[0] = cand[0]; v0[1] = cand[1]; v0[2] = cand[2]
        _cross3(r1, r2, cand)
        nrm = cand[0] * cand[0] + cand[1] * cand[1] + cand[2] * cand[2]
        if nrm > best:
            best = nrm
            v0[0] = cand[0]; v0[1] = cand[1]; v0[2] = cand[2]
        best = sqrt(best)
        v0[0] /= best; v0[1] /= best; v0[2] /= best

        if fabs(v0[0]) > fabs(v0[1]):
            u[0] = -v0[2]; u[1] = 0.0; u[2] = v0[0]
        else:
            u[0] = 0.0; u[1] = v0[2]; u[2] = -v0[1]
        nrm = sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
        u[0] /= nrm; u[1] /= nrm; u[2] /= nrm
        _cross3(v0, u, w)
        m00 = _quad(c, u)
        m01 = _bilin(c, u, w)
        m11 = _quad(c, w)
        if m01 != 0.0:
            theta = (m11 - m00) / (2.0 * m01)
            t = copysign(1.0, theta) / (fabs(theta) + sqrt(theta * theta + 1.0))
        else:
            t = 0.0
        cs = 1.0 / sqrt(t * t + 1.0)
        sn = t * cs
        for i in range(3):
            vv[3 * i] = v0[i]
            vv[3 * i + 1] = cs * u[i] - sn * w[i]
            vv[3 * i + 2] = sn * u[i] + cs * w[i]
        for k in range(3):
            cand[0] = vv[k]; cand[1] = vv[3 + k]; cand[2] = vv[6 + k]
            ll[k] = _quad(a, cand)
    for k in range(3):
        ll[k] *= scale

    # stable insertion sort on (|lambda| asc, |v_z| desc)
    order[0] = 0; order[1] = 1; order[2] = 2
    for i in range(1, 3):
        j = i
        while j > 0 and _before(ll[order[j]], vv[6 + order[j]],
                                ll[order[j - 1]], vv[6 + order[j - 1]]):
            tmp = order[j]; order[j] = order[j - 1]; order[j - 1] = tmp
            j -= 1
    for k in range(3):
        lam[k] = ll[order[k]]
        for i in range(3):
            vec[3 * i + k] = vv[3 * i + order[k]]


def eigh_sym3(m, int nthreads=1):
    """See ``_pure.eigh_sym3``."""
    cdef double[:, ::1] mv = np.ascontiguousarray(m, dtype=np.float64).reshape(-1, 6)
    cdef Py_ssize_t n = mv.shape[0], i
    lam_arr = np.empty((n, 3))
    vec_arr = np.empty((n, 3, 3))
    cdef double[:, ::1] lam = lam_arr
    cdef double[:, :, ::1] vec = vec_arr
    for i in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        _eig3(&mv[i, 0], &lam[i, 0], &vec[i, 0, 0])
    return lam_arr, vec_arr


# ---------------------------------------------------------------------------
# fused Hessian -> smallest-|lambda| axis

cdef int _orient_one(const float[::1, :, :] f, Py_ssize_t ix, Py_ssize_t iy, Py_ssize_t iz,
                     double *sc, double norm_floor, float *out) noexcept nogil:
    """Returns 1 for a valid axis, 0 for a flat voxel, -1 for a non-finite Hessian."""
    cdef double h[6]
    cdef double lam[3]
    cdef double vec[9]
    cdef double f0 = f[ix, iy, iz], nrm = 0.0, x, y, z, s = 1.0
    cdef int k
    h[0] = (<double> f[ix + 1, iy, iz] + f[ix - 1, iy, iz] - 2.0 * f0) * sc[0]
    h[1] = (<double> f[ix, iy + 1, iz] + f[ix, iy - 1, iz] - 2.0 * f0) * sc[1]
    h[2] = (<double> f[ix, iy, iz + 1] + f[ix, iy, iz - 1] - 2.0 * f0) * sc[2]
    h[3] = 0.25 * (<double> f[ix + 1, iy + 1, iz] - f[ix + 1, iy - 1, iz]
                   - f[ix - 1, iy + 1, iz] + f[ix - 1, iy - 1, iz]) * sc[3]
    h[4] = 0.25 * (<double> f[ix + 1, iy, iz + 1] - f[ix + 1, iy, iz - 1]
                   - f[ix - 1, iy, iz + 1] + f[ix - 1, iy, iz - 1]) * sc[4]
    h[5] = 0.25 * (<double> f[ix, iy + 1, iz + 1] - f[ix, iy + 1, iz - 1]
                   - f[ix, iy - 1, iz + 1] + f[ix, iy - 1, iz - 1]) * sc[5]
    for k in range(6):
        if not isfinite(h[k]):
            return -1
    nrm = sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2]
               + 2.0 * (h[3] * h[3] + h[4] * h[4] + h[5] * h[5]))
    if not (nrm > 0.0 and nrm >= norm_floor):
        return 0
    _eig3(h, lam, vec)
    x = vec[0]
    y = vec[3]
    z = vec[6]
    if z < 0.0 or (z == 0.0 and (y < 0.0 or (y == 0.0 and x < 0.0))):
        s = -1.0
    out[0] = <float> (s * x + 0.0)
    out[1] = <float> (s * y + 0.0)
    out[2] = <float> (s * z + 0.0)
    return 1


def hessian_orientation(const float[::1, :, :] padded, idx, dims, scales,
                        double norm_floor, int nthreads=1):
    """See ``_pure.hessian_orientation``."""
    cdef cnp.int64_t[::1] ids = np.ascontiguousarray(idx, dtype=np.int64)
    cdef double[::1] sc = np.ascontiguousarray(scales, dtype=np.float64)
    cdef Py_ssize_t n = ids.shape[0], v, rest
    cdef Py_ssize_t nx = dims[0], ny = dims[1]
    dirs_arr = np.zeros((n, 3), dtype=np.float32)
    status_arr = np.zeros(n, dtype=np.int8)
    cdef float[:, ::1] dirs = dirs_arr
    cdef cnp.int8_t[::1] status = status_arr
    if n:
        for v in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
            rest = ids[v] // nx
            status[v] = _orient_one(padded, ids[v] % nx + 1, rest % ny + 1, rest // ny + 1,
                                    &sc[0], norm_floor, &dirs[v, 0])
    bad = np.flatnonzero(status_arr < 0)
    return dirs_arr, status_arr > 0, (int(bad[0]) if bad.size else -1)


# ---------------------------------------------------------------------------
# capsule rasterization

cdef inline double _seg_dist2(double px, double py, double pz, double *p0, double *d,
                              double dd) noexcept nogil:
    cdef double wx = px - p0[0], wy = py - p0[1], wz = pz - p0[2]
    cdef double t = (wx * d[0] + wy * d[1] + wz * d[2]) / dd
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    cdef double ex = wx - t * d[0], ey = wy - t * d[1], ez = wz - t * d[2]
    return ex * ex + ey * ey + ez * ez


cdef int _slab_box(double *p0, double *d, double radius, double lo, double hi, int k,
                   double *sp, Py_ssize_t *dims, Py_ssize_t *box) noexcept nogil:
    cdef double t_a, t_b, t_lo, t_hi, a, b, tmp
    cdef int j
    cdef Py_ssize_t i0, i1
    if d[k] != 0.0:
        t_a = (lo - radius - p0[k]) / d[k]
        t_b = (hi + radius - p0[k]) / d[k]
        if t_a > t_b:
            tmp = t_a; t_a = t_b; t_b = tmp
        t_lo = t_a if t_a > 0.0 else 0.0
        t_hi = t_b if t_b < 1.0 else 1.0
    else:
        if p0[k] < lo - radius or p0[k] > hi + radius:
            return 0
        t_lo = 0.0
        t_hi = 1.0
    if t_lo > t_hi:
        return 0
    for j in range(3):
        a = p0[j] + t_lo * d[j]
        b = p0[j] + t_hi * d[j]
        if a > b:
            tmp = a; a = b; b = tmp
        i0 = <Py_ssize_t> floor((a - radius) / sp[j])
        i1 = <Py_ssize_t> floor((b + radius) / sp[j]) + 1
        if i0 < 0:
            i0 = 0
        if i1 > dims[j]:
            i1 = dims[j]
        if i0 >= i1:
            return 0
        box[2 * j] = i0
        box[2 * j + 1] = i1
    return 1


cdef void _rasterize_slab(float[::1, :, :] coverage, double *p0, double *d, double dd,
                          double radius, double r2, int k, Py_ssize_t t, double *sp,
                          Py_ssize_t *dims, Py_ssize_t *box) noexcept nogil:
    cdef Py_ssize_t i, j, l
    cdef int cnt, sx, sy, sz
    cdef double px, py, pz, cov
    if not _slab_box(p0, d, radius, t * sp[k], (t + 1) * sp[k], k, sp, dims, box):
        return
    box[2 * k] = t
    box[2 * k + 1] = t + 1
    for l in range(box[4], box[5]):
        for j in range(box[2], box[3]):
            for i in range(box[0], box[1]):
                cnt = 0
                for sz in range(2):
                    pz = (l + 0.25 + 0.5 * sz) * sp[2]
                    for sy in range(2):
                        py = (j + 0.25 + 0.5 * sy) * sp[1]
                        for sx in range(2):
                            px = (i + 0.25 + 0.5 * sx) * sp[0]
                            if _seg_dist2(px, py, pz, p0, d, dd) <= r2:
                                cnt = cnt + 1
                cov = cnt / 8.0
                if cov > coverage[i, j, l]:
                    coverage[i, j, l] = <float> cov


def rasterize_capsules(float[::1, :, :] coverage, p0s, p1s, double radius, spacing,
                       int nthreads=1):
    """See ``_pure.rasterize_capsules``; parallel over slices along the dominant axis."""
    cdef double[:, ::1] P0 = np.ascontiguousarray(p0s, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] P1 = np.ascontiguousarray(p1s, dtype=np.float64).reshape(-1, 3)
    cdef double sp[3]
    cdef Py_ssize_t dims[3]
    cdef double p0[3]
    cdef double d[3]
    cdef double dd, r2 = radius * radius
    cdef Py_ssize_t f, t
    cdef Py_ssize_t *box
    cdef int k
    for k in range(3):
        sp[k] = spacing[k]
        dims[k] = coverage.shape[k]
    for f in range(P0.shape[0]):
        for k in range(3):
            p0[k] = P0[f, k]
            d[k] = P1[f, k] - P0[f, k]
        dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
        if dd == 0.0:
            continue
        k = 0
        if fabs(d[1]) > fabs(d[k]):
            k = 1
        if fabs(d[2]) > fabs(d[k]):
            k = 2
        with nogil, parallel(num_threads=nthreads):
            box = <Py_ssize_t *> malloc(6 * sizeof(Py_ssize_t))
            for t in prange(dims[k], schedule="dynamic"):
                _rasterize_slab(coverage, p0, d, dd, radius, r2, k, t, sp, dims, box)
            free(box)
