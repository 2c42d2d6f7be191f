"""Conditional denoising diffusion over scalar maps on icosphere meshes."""

__version__ = "0.1.0"

from .errors import (
    ArgumentError,
    NumericError,
    ParseError,
    SizeLimitError,
    StateError,
    SurfDiffError,
)
from .icosphere import IcoMesh, build_icosphere, validate_mesh
from .patching import MetricMap, PatchTable, build_patch_table, patchify, unpatchify

__all__ = [
    "ArgumentError",
    "IcoMesh",
    "MetricMap",
    "NumericError",
    "ParseError",
    "PatchTable",
    "SizeLimitError",
    "StateError",
    "SurfDiffError",
    "__version__",
    "build_icosphere",
    "build_patch_table",
    "patchify",
    "unpatchify",
    "validate_mesh",
]
