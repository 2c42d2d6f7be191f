"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from surfdiff import _pykernels as py
from surfdiff.icosphere import build_icosphere

try:
    from surfdiff import _core as core
except ImportError:  # pragma: no cover
    core = None


def cases():
    rng = np.random.default_rng(0)
    m5 = build_icosphere(5)
    faces = np.ascontiguousarray(m5.faces)
    nv = len(m5.vertices)
    dirs = rng.standard_normal((256 * 128, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    verts = np.ascontiguousarray(build_icosphere(3).vertices)
    x = rng.standard_normal((64 * 82, 64)).astype(np.float32)
    xhat, rstd = py.layernorm_forward(x, 1e-5)
    dy = rng.standard_normal(x.shape).astype(np.float32)
    g = rng.standard_normal(64 * 82 * 128).astype(np.float32)
    return {
        "subdivide (level 5 -> 6)": lambda k: k.subdivide(faces, nv),
        "nearest_vertex (256x128 px, level 3)": lambda k: k.nearest_vertex(dirs, verts),
        "layernorm_forward (5248x64 f32)": lambda k: k.layernorm_forward(x, 1e-5),
        "layernorm_backward (5248x64 f32)": lambda k: k.layernorm_backward(dy, xhat, rstd),
        "gelu_forward (671k f32)": lambda k: k.gelu_forward(g),
        "gelu_backward (671k f32)": lambda k: k.gelu_backward(g, g),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if core is None:
        print("compiled extension not available; only the fallback can be timed")
    print(f"{'kernel':40s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases().items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        if core is not None:
            t_c = min(timeit.repeat(lambda: fn(core), number=1, repeat=args.repeat)) * 1e3
            print(f"{name:40s} {t_py:10.2f} {t_c:10.2f} {t_py / t_c:7.1f}x")
        else:
            print(f"{name:40s} {t_py:10.2f} {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
