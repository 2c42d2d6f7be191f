"""Icosahedral sphere meshes built by recursive 4-way triangle subdivision."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ArgumentError, SizeLimitError

MAX_LEVEL = 8
PHI = (1.0 + 5.0**0.5) / 2.0


def n_vertices(level: int) -> int:
    return 10 * 4**level + 2


def n_faces(level: int) -> int:
    return 20 * 4**level


def n_edges(level: int) -> int:
    return 30 * 4**level


@dataclass(frozen=True, eq=False)
class IcoMesh:
    """Subdivided icosahedron.

    Attributes:
        level: number of subdivisions applied to the base icosahedron.
        vertices: (V, 3) float64 unit vectors.
        faces: (F, 3) int64, counter-clockwise seen from outside.
        edges: (E, 2) int64 sorted ``(lo, hi)`` pairs in lexicographic order.
        midpoint_parents: (V - 12, 2) int64; row ``i`` holds the sorted parent
            edge of vertex ``12 + i``. Empty for meshes not built by subdivision.
    """

    level: int
    vertices: np.ndarray
    faces: np.ndarray
    edges: np.ndarray = field(default=None)  # type: ignore[assignment]
    midpoint_parents: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.edges is None:
            object.__setattr__(self, "edges", edges_from_faces(self.faces))
        if self.midpoint_parents is None:
            object.__setattr__(self, "midpoint_parents", np.zeros((0, 2), dtype=np.int64))
        for arr in (self.vertices, self.faces, self.edges, self.midpoint_parents):
            arr.setflags(write=False)

    @property
    def euler(self) -> int:
        return len(self.vertices) - len(self.edges) + len(self.faces)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=len(self.vertices))

    def template_hash(self) -> str:
        """SHA-256 over vertex and face buffers; identifies the vertex ordering."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.faces, dtype="<i8").tobytes())
        return h.hexdigest()


def edges_from_faces(faces: np.ndarray) -> np.ndarray:
    f = np.asarray(faces, dtype=np.int64)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def _base_icosahedron() -> tuple[np.ndarray, np.ndarray]:
    verts = []
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            verts.append((0.0, s1, s2 * PHI))
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            verts.append((s1, s2 * PHI, 0.0))
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            verts.append((s1 * PHI, 0.0, s2))
    raw = np.array(verts, dtype=np.float64)

    # neighbours sit at squared distance 4 in the unnormalized construction
    d2 = ((raw[:, None, :] - raw[None, :, :]) ** 2).sum(-1)
    adj = np.isclose(d2, 4.0)
    faces = []
    n = len(raw)
    for i in range(n):
        for j in range(i + 1, n):
            if not adj[i, j]:
                continue
            for k in range(j + 1, n):
                if adj[i, k] and adj[j, k]:
                    normal = np.cross(raw[j] - raw[i], raw[k] - raw[i])
                    if normal @ (raw[i] + raw[j] + raw[k]) < 0:
                        faces.append((i, k, j))
                    else:
                        faces.append((i, j, k))
    unit = raw / np.sqrt((raw * raw).sum(axis=1, keepdims=True))
    return unit, np.array(faces, dtype=np.int64)


@lru_cache(maxsize=None)
def _build(level: int) -> IcoMesh:
    if level == 0:
        v, f = _base_icosahedron()
        return IcoMesh(0, v, f)
    prev = _build(level - 1)
    faces, pairs = kernels.subdivide(np.ascontiguousarray(prev.faces), len(prev.vertices))
    mid = prev.vertices[pairs[:, 0]] + prev.vertices[pairs[:, 1]]
    mid = mid / np.sqrt((mid * mid).sum(axis=1, keepdims=True))
    verts = np.concatenate([prev.vertices, mid])
    parents = np.concatenate([prev.midpoint_parents, pairs])
    return IcoMesh(level, verts, np.asarray(faces), midpoint_parents=parents)


def build_icosphere(level: int) -> IcoMesh:
    """Return the icosphere at ``level`` (cached; arrays are read-only).

    Parent vertices keep their indices across levels and new midpoints are
    appended in order of first creation while walking faces in order.
    """
    if not isinstance(level, (int, np.integer)) or level < 0:
        raise ArgumentError(f"level must be a non-negative integer, got {level!r}")
    if level > MAX_LEVEL:
        raise SizeLimitError(f"level {level} exceeds the resource guard (max {MAX_LEVEL})")
    return _build(int(level))


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        return "valid" if self.ok else "\n".join(self.violations)


def validate_mesh(mesh: IcoMesh, tol: float = 1e-12) -> ValidationReport:
    """Check every IcoMesh invariant; never raises on a malformed mesh."""
    rep = ValidationReport()
    v = np.asarray(mesh.vertices, dtype=np.float64)
    f = np.asarray(mesh.faces, dtype=np.int64)
    k = mesh.level
    nv, nf = len(v), len(f)

    if nv != n_vertices(k):
        rep.violations.append(f"vertex count {nv} != {n_vertices(k)}")
    if nf != n_faces(k):
        rep.violations.append(f"face count {nf} != {n_faces(k)}")
    if f.size and (f.min() < 0 or f.max() >= nv):
        rep.violations.append("face index out of range")
        return rep

    edges = edges_from_faces(f)
    if len(edges) != n_edges(k):
        rep.violations.append(f"edge count {len(edges)} != {n_edges(k)}")
    euler = nv - len(edges) + nf
    if euler != 2:
        rep.violations.append(f"euler characteristic {euler} != 2")

    norms = np.sqrt((v * v).sum(axis=1))
    bad = np.flatnonzero(np.abs(norms - 1.0) > tol)
    if bad.size:
        rep.violations.append(f"{bad.size} vertices off the unit sphere (first: {bad[0]})")

    degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
    if degenerate.any():
        rep.violations.append(f"{int(degenerate.sum())} degenerate faces")

    # each undirected edge must be incident to exactly two faces
    allpairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    allpairs.sort(axis=1)
    _, counts = np.unique(allpairs, axis=0, return_counts=True)
    nonmanifold = int((counts != 2).sum())
    if nonmanifold:
        rep.violations.append(f"{nonmanifold} edges not shared by exactly 2 faces")

    deg = np.bincount(edges.ravel(), minlength=nv)
    n5, n6 = int((deg == 5).sum()), int((deg == 6).sum())
    if n5 != 12 or n5 + n6 != nv:
        rep.violations.append(f"vertex degrees: {n5} of degree 5, {nv - n5 - n6} irregular")

    if not degenerate.any():
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        normal = np.cross(b - a, c - a)
        inward = int(((normal * (a + b + c)).sum(axis=1) <= 0).sum())
        if inward:
            rep.violations.append(f"{inward} faces not outward-oriented")
    return rep


def export_obj(mesh: IcoMesh, path: str | Path) -> None:
    """Write ``v``/``f`` records (1-based indices)."""
    lines = [f"# icosphere level {mesh.level}"]
    lines += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")
