"""Pure numpy implementations of the kernels in ``_core.pyx``.

Used when the compiled extension is unavailable or when
``SURFDIFF_PURE_PYTHON=1`` is set.
"""

import math

import numpy as np

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715
_CHUNK = 4096


def subdivide(faces, n_vertices):
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    nf = faces.shape[0]
    u = faces
    v = np.roll(faces, -1, axis=1)  # edges ab, bc, ca per face
    lo = np.minimum(u, v).ravel()
    hi = np.maximum(u, v).ravel()
    keys = lo * n_vertices + hi
    uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    # rank unique edges by first appearance in face order
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    mids = (n_vertices + rank[inverse]).reshape(nf, 3)
    pairs = np.stack([uniq[order] // n_vertices, uniq[order] % n_vertices], axis=1)

    ab, bc, ca = mids[:, 0], mids[:, 1], mids[:, 2]
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    out = np.stack(
        [
            np.stack([a, ab, ca], axis=1),
            np.stack([b, bc, ab], axis=1),
            np.stack([c, ca, bc], axis=1),
            np.stack([ab, bc, ca], axis=1),
        ],
        axis=1,
    ).reshape(4 * nf, 3)
    return np.ascontiguousarray(out), np.ascontiguousarray(pairs, dtype=np.int64)


def nearest_vertex(dirs, verts):
    dirs = np.asarray(dirs, dtype=np.float64)
    verts = np.asarray(verts, dtype=np.float64)
    out = np.empty(dirs.shape[0], dtype=np.int64)
    for s in range(0, dirs.shape[0], _CHUNK):
        d = dirs[s : s + _CHUNK]
        dots = (
            d[:, 0:1] * verts[None, :, 0]
            + d[:, 1:2] * verts[None, :, 1]
            + d[:, 2:3] * verts[None, :, 2]
        )
        out[s : s + _CHUNK] = np.argmax(dots, axis=1)
    return out


def layernorm_forward(x, eps):
    x = np.asarray(x)
    mean = x.mean(axis=1, keepdims=True, dtype=np.float64)
    diff = x - mean
    var = (diff * diff).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (diff * rstd).astype(x.dtype)
    return xhat, rstd[:, 0].astype(x.dtype)


def layernorm_backward(dy, xhat, rstd):
    s1 = dy.mean(axis=1, keepdims=True, dtype=np.float64)
    s2 = (dy * xhat).mean(axis=1, keepdims=True, dtype=np.float64)
    dx = rstd[:, None].astype(np.float64) * (dy - s1 - xhat * s2)
    return dx.astype(dy.dtype)


def gelu_forward(x):
    v = np.asarray(x, dtype=np.float64)
    y = 0.5 * v * (1.0 + np.tanh(GELU_C * (v + GELU_A * v**3)))
    return y.astype(x.dtype)


def gelu_backward(x, dy):
    v = np.asarray(x, dtype=np.float64)
    th = np.tanh(GELU_C * (v + GELU_A * v**3))
    d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * v * v)
    return (dy * d).astype(dy.dtype)
