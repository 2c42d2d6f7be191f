"""Kernel backend selection.

The compiled extension ``surfdiff._core`` is used when it imports; otherwise
the numpy mirror in ``surfdiff._pykernels`` is used. Setting the environment
variable ``SURFDIFF_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("SURFDIFF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _pykernels

subdivide = _impl.subdivide
nearest_vertex = _impl.nearest_vertex
layernorm_forward = _impl.layernorm_forward
layernorm_backward = _impl.layernorm_backward
gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward

__all__ = [
    "BACKEND",
    "subdivide",
    "nearest_vertex",
    "layernorm_forward",
    "layernorm_backward",
    "gelu_forward",
    "gelu_backward",
]
