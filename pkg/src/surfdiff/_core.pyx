# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. ``surfdiff._pykernels`` mirrors every function here."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, tanh

cnp.import_array()

ctypedef fused real:
    float
    double

cdef Py_ssize_t SLOTS = 8
cdef double GELU_C = 0.7978845608028654  # sqrt(2/pi)
cdef double GELU_A = 0.044715


def subdivide(const cnp.int64_t[:, ::1] faces, Py_ssize_t n_vertices):
    """4-way split. Returns (new_faces, midpoint_edges) with midpoints in creation order."""
    cdef Py_ssize_t nf = faces.shape[0]
    cdef Py_ssize_t f, e, k, u, v, lo, hi, found
    cdef cnp.int64_t[:, ::1] out = np.empty((4 * nf, 3), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] pairs = np.empty((3 * nf, 2), dtype=np.int64)
    cdef cnp.int64_t[::1] nbr = np.full(n_vertices * SLOTS, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] mid = np.empty(n_vertices * SLOTS, dtype=np.int64)
    cdef cnp.int64_t[::1] cnt = np.zeros(n_vertices, dtype=np.int64)
    cdef cnp.int64_t m[3]
    cdef cnp.int64_t c[3]
    cdef Py_ssize_t n_new = 0

    for f in range(nf):
        c[0] = faces[f, 0]
        c[1] = faces[f, 1]
        c[2] = faces[f, 2]
        for e in range(3):
            u = c[e]
            v = c[(e + 1) % 3]
            lo = u if u < v else v
            hi = v if u < v else u
            found = -1
            for k in range(cnt[lo]):
                if nbr[lo * SLOTS + k] == hi:
                    found = mid[lo * SLOTS + k]
                    break
            if found < 0:
                if cnt[lo] >= SLOTS:
                    raise ValueError("vertex degree exceeds kernel slot capacity")
                found = n_vertices + n_new
                nbr[lo * SLOTS + cnt[lo]] = hi
                mid[lo * SLOTS + cnt[lo]] = found
                cnt[lo] += 1
                pairs[n_new, 0] = lo
                pairs[n_new, 1] = hi
                n_new += 1
            m[e] = found
        # m[0]=ab, m[1]=bc, m[2]=ca
        out[4 * f, 0] = c[0]; out[4 * f, 1] = m[0]; out[4 * f, 2] = m[2]
        out[4 * f + 1, 0] = c[1]; out[4 * f + 1, 1] = m[1]; out[4 * f + 1, 2] = m[0]
        out[4 * f + 2, 0] = c[2]; out[4 * f + 2, 1] = m[2]; out[4 * f + 2, 2] = m[1]
        out[4 * f + 3, 0] = m[0]; out[4 * f + 3, 1] = m[1]; out[4 * f + 3, 2] = m[2]
    return np.asarray(out), np.asarray(pairs[:n_new]).copy()


def nearest_vertex(const double[:, ::1] dirs, const double[:, ::1] verts):
    """Index of the vertex with the largest dot product (nearest on the unit sphere)."""
    cdef Py_ssize_t p, v, best
    cdef Py_ssize_t np_ = dirs.shape[0], nv = verts.shape[0]
    cdef double d, bd, x, y, z
    cdef cnp.int64_t[::1] out = np.empty(np_, dtype=np.int64)
    for p in range(np_):
        x = dirs[p, 0]; y = dirs[p, 1]; z = dirs[p, 2]
        best = 0
        bd = x * verts[0, 0] + y * verts[0, 1] + z * verts[0, 2]
        for v in range(1, nv):
            d = x * verts[v, 0] + y * verts[v, 1] + z * verts[v, 2]
            if d > bd:
                bd = d
                best = v
        out[p] = best
    return np.asarray(out)


def layernorm_forward(const real[:, ::1] x, double eps):
    """Row-wise normalization. Returns (xhat, rstd)."""
    cdef Py_ssize_t n = x.shape[0], dim = x.shape[1], i, j
    dtype = np.float32 if real is float else np.float64
    xhat_arr = np.empty((n, dim), dtype=dtype)
    rstd_arr = np.empty(n, dtype=dtype)
    cdef real[:, ::1] xhat = xhat_arr
    cdef real[::1] rstd = rstd_arr
    cdef double mean, var, r, diff
    for i in range(n):
        mean = 0.0
        for j in range(dim):
            mean += x[i, j]
        mean /= dim
        var = 0.0
        for j in range(dim):
            diff = x[i, j] - mean
            var += diff * diff
        var /= dim
        r = 1.0 / sqrt(var + eps)
        rstd[i] = <real>r
        for j in range(dim):
            xhat[i, j] = <real>((x[i, j] - mean) * r)
    return xhat_arr, rstd_arr


def layernorm_backward(const real[:, ::1] dy, const real[:, ::1] xhat, const real[::1] rstd):
    """Gradient of the pre-affine normalization w.r.t. its input."""
    cdef Py_ssize_t n = dy.shape[0], dim = dy.shape[1], i, j
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.empty((n, dim), dtype=dtype)
    cdef real[:, ::1] dx = dx_arr
    cdef double s1, s2
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for j in range(dim):
            s1 += dy[i, j]
            s2 += dy[i, j] * xhat[i, j]
        s1 /= dim
        s2 /= dim
        for j in range(dim):
            dx[i, j] = <real>(rstd[i] * (dy[i, j] - s1 - xhat[i, j] * s2))
    return dx_arr


def gelu_forward(const real[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty(n, dtype=dtype)
    cdef real[::1] y = y_arr
    cdef double v
    for i in range(n):
        v = x[i]
        y[i] = <real>(0.5 * v * (1.0 + tanh(GELU_C * (v + GELU_A * v * v * v))))
    return y_arr


def gelu_backward(const real[::1] x, const real[::1] dy):
    cdef Py_ssize_t n = x.shape[0], i
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.empty(n, dtype=dtype)
    cdef real[::1] dx = dx_arr
    cdef double v, th, d
    for i in range(n):
        v = x[i]
        th = tanh(GELU_C * (v + GELU_A * v * v * v))
        d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * v * v)
        dx[i] = <real>(dy[i] * d)
    return dx_arr
