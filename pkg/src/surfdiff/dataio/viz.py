"""Equirectangular PNG rendering of metric maps."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .. import kernels
from ..errors import ArgumentError
from ..icosphere import build_icosphere
from ..patching import MetricMap

BLUE = np.array([33.0, 102.0, 172.0])
WHITE = np.array([247.0, 247.0, 247.0])
RED = np.array([178.0, 24.0, 43.0])


def pixel_directions(width: int, height: int) -> np.ndarray:
    """Unit vectors at pixel centres; row 0 is the north pole side."""
    lon = -np.pi + 2.0 * np.pi * (np.arange(width) + 0.5) / width
    lat = np.pi / 2 - np.pi * (np.arange(height) + 0.5) / height
    lat_g, lon_g = np.meshgrid(lat, lon, indexing="ij")
    d = np.stack([np.cos(lat_g) * np.cos(lon_g), np.cos(lat_g) * np.sin(lon_g), np.sin(lat_g)], axis=-1)
    return np.ascontiguousarray(d.reshape(-1, 3))


def pixel_vertex_map(level: int, width: int, height: int) -> np.ndarray:
    verts = np.ascontiguousarray(build_icosphere(level).vertices)
    return kernels.nearest_vertex(pixel_directions(width, height), verts).reshape(height, width)


def colorize(values: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    """Blue-white-red scale with blue at ``vmin`` and red at ``vmax``."""
    if vmax > vmin:
        u = (values.astype(np.float64) - vmin) / (vmax - vmin)
    else:
        u = np.full(values.shape, 0.5)
    u = np.clip(u, 0.0, 1.0)[..., None]
    lower = BLUE + (WHITE - BLUE) * (u / 0.5)
    upper = WHITE + (RED - WHITE) * ((u - 0.5) / 0.5)
    rgb = np.where(u <= 0.5, lower, upper)
    return np.rint(rgb).astype(np.uint8)


def render(metric: MetricMap, width: int = 256, height: int = 128) -> np.ndarray:
    if width < 16 or height < 16:
        raise ArgumentError("image must be at least 16x16")
    idx = pixel_vertex_map(metric.level, width, height)
    vals = metric.values
    return colorize(vals[idx], float(vals.min()), float(vals.max()))


def project_png(metric: MetricMap, width: int, height: int, path: str | Path) -> None:
    Image.fromarray(render(metric, width, height), mode="RGB").save(path, format="PNG")
