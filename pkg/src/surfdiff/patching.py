"""Surface <-> token-sequence maps.

A :class:`PatchTable` assigns to every face of a low-level icosphere the
high-level vertices lying in that face. Membership is determined by walking
the subdivision hierarchy rather than by geometric containment, so vertices on
low-level edges and corners land in every adjacent patch without any
floating-point tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container
from .errors import ArgumentError
from .icosphere import MAX_LEVEL, build_icosphere, n_vertices


def patch_size(depth: int) -> int:
    n = 2**depth
    return (n + 1) * (n + 2) // 2


@dataclass(frozen=True, eq=False)
class MetricMap:
    """One scalar channel per icosphere vertex plus metadata."""

    level: int
    values: np.ndarray
    age_weeks: float | None = None
    norm_mean: float | None = None
    norm_std: float | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.ndim != 1 or vals.size != n_vertices(self.level):
            raise ArgumentError(
                f"level {self.level} needs {n_vertices(self.level)} values, got shape {vals.shape}"
            )
        if not np.isfinite(vals).all():
            raise ArgumentError("metric values must be finite")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True, eq=False)
class PatchTable:
    """Attributes:
    high_level, low_level: icosphere levels of the data grid and the patch grid.
    patches: (F_low, V_p) int64 high-level vertex indices, row-major barycentric order.
    multiplicity: (V_high,) number of patches containing each vertex.
    template_hash: hash of the high-level mesh the indices refer to.
    """

    high_level: int
    low_level: int
    patches: np.ndarray
    multiplicity: np.ndarray
    template_hash: str = ""

    def __post_init__(self):
        order = np.argsort(self.patches.ravel(), kind="stable")
        counts = self.multiplicity
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        object.__setattr__(self, "_order", order)
        object.__setattr__(self, "_starts", starts)
        for arr in (self.patches, self.multiplicity):
            arr.setflags(write=False)

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]

    @property
    def patch_size(self) -> int:
        return self.patches.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.multiplicity.shape[0]


def _barycentric_grid(n: int) -> np.ndarray:
    rows = []
    for i in range(n + 1):
        for j in range(i + 1):
            rows.append((n - i, i - j, j))
    return np.array(rows, dtype=np.int64)


def build_patch_table(high: int, low: int) -> PatchTable:
    """Group the vertices of ico-``high`` by the faces of ico-``low``.

    Within a patch, vertices are ordered row by row from the face's first
    corner: row ``i`` holds barycentric points ``(n - i, i - j, j)`` for
    ``j = 0..i`` with ``n = 2**(high - low)``.
    """
    if not (0 <= low < high <= MAX_LEVEL):
        raise ArgumentError(f"need 0 <= low < high <= {MAX_LEVEL}, got high={high}, low={low}")
    mesh = build_icosphere(high)
    faces = build_icosphere(low).faces
    nv = len(mesh.vertices)

    parents = mesh.midpoint_parents
    keys = parents[:, 0] * nv + parents[:, 1]
    key_order = np.argsort(keys)
    sorted_keys = keys[key_order]

    def midpoint(u, v):
        k = np.minimum(u, v) * nv + np.maximum(u, v)
        pos = np.searchsorted(sorted_keys, k)
        return 12 + key_order[pos]

    size = 2 ** (high - low)
    grid = _barycentric_grid(size)
    vp = len(grid)
    nf = len(faces)
    a = np.repeat(faces[:, 0], vp)
    b = np.repeat(faces[:, 1], vp)
    c = np.repeat(faces[:, 2], vp)
    p = np.tile(grid[:, 0], nf)
    q = np.tile(grid[:, 1], nf)
    r = np.tile(grid[:, 2], nf)

    while size > 1:
        half = size // 2
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        in_a = p >= half
        in_b = ~in_a & (q >= half)
        in_c = ~in_a & ~in_b & (r >= half)
        # children (a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca) as created by subdivision
        na = np.select([in_a, in_b, in_c], [a, b, c], ab)
        nb = np.select([in_a, in_b, in_c], [ab, bc, ca], bc)
        nc = np.select([in_a, in_b, in_c], [ca, ab, bc], ca)
        np_ = np.select([in_a, in_b, in_c], [p - half, q - half, r - half], half - r)
        nq = np.select([in_a, in_b, in_c], [q, r, p], half - p)
        nr = np.select([in_a, in_b, in_c], [r, p, q], half - q)
        a, b, c, p, q, r = na, nb, nc, np_, nq, nr
        size = half

    idx = np.select([p == 1, q == 1], [a, b], c).reshape(nf, vp)
    mult = np.bincount(idx.ravel(), minlength=nv).astype(np.int64)
    return PatchTable(high, low, idx, mult, mesh.template_hash())


def load_or_build_patch_table(high: int, low: int, cache_dir: str | Path | None = None) -> PatchTable:
    """Return the table for (high, low), reading/writing ``patch_<high>_<low>.bin`` in ``cache_dir``."""
    if cache_dir is None:
        return build_patch_table(high, low)
    path = Path(cache_dir) / f"patch_{high}_{low}.bin"
    expected = build_icosphere(high).template_hash()
    if path.exists():
        tensors, meta = container.load(path)
        if meta.get("template_hash") == expected and meta.get("high") == high and meta.get("low") == low:
            return PatchTable(high, low, tensors["patches"], tensors["multiplicity"], expected)
    table = build_patch_table(high, low)
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    container.save(
        path,
        {"patches": table.patches, "multiplicity": table.multiplicity},
        {"kind": "patch_table", "high": high, "low": low, "template_hash": expected},
    )
    return table


def patchify_array(values: np.ndarray, table: PatchTable) -> np.ndarray:
    """(..., V) -> (..., F_low, V_p); shared vertices are copied into each patch."""
    values = np.asarray(values)
    if values.shape[-1] != table.n_vertices:
        raise ArgumentError(f"expected {table.n_vertices} vertices, got {values.shape[-1]}")
    return values[..., table.patches]


def unpatchify_array(patches: np.ndarray, table: PatchTable, reduce: str = "mean") -> np.ndarray:
    """(..., F_low, V_p) -> (..., V), averaging each vertex over its patches."""
    if reduce != "mean":
        raise ArgumentError(f"unsupported reduction {reduce!r}")
    patches = np.asarray(patches)
    if patches.shape[-2:] != table.patches.shape:
        raise ArgumentError(f"expected trailing shape {table.patches.shape}, got {patches.shape}")
    lead = patches.shape[:-2]
    flat = patches.reshape(lead + (-1,)).astype(np.float64)[..., table._order]
    # mean written as first copy + mean deviation so identical copies come back bit-exact
    ref = flat[..., table._starts]
    dev = flat - np.repeat(ref, table.multiplicity, axis=-1)
    shift = np.add.reduceat(dev, table._starts, axis=-1) / table.multiplicity
    out = np.where(shift == 0.0, ref, ref + shift)
    return out.astype(patches.dtype if patches.dtype.kind == "f" else np.float64)


def patchify(metric: MetricMap, table: PatchTable) -> np.ndarray:
    if metric.level != table.high_level:
        raise ArgumentError(f"map level {metric.level} != table high level {table.high_level}")
    return patchify_array(metric.values, table)


def unpatchify(patches: np.ndarray, table: PatchTable, reduce: str = "mean", **meta) -> MetricMap:
    patches = np.asarray(patches)
    if patches.shape != table.patches.shape:
        raise ArgumentError(f"expected shape {table.patches.shape}, got {patches.shape}")
    values = unpatchify_array(patches.astype(np.float32), table, reduce)
    return MetricMap(table.high_level, values, **meta)
