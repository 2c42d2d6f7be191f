import dataclasses
import itertools

import numpy as np
import pytest

from surfdiff.errors import SizeLimitError
from surfdiff.icosphere import (
    IcoMesh,
    build_icosphere,
    edges_from_faces,
    export_obj,
    n_edges,
    n_faces,
    n_vertices,
    validate_mesh,
)


@pytest.mark.parametrize("level", range(0, 6))
def test_counts_match_closed_forms(level):
    mesh = build_icosphere(level)
    assert mesh.vertices.shape == (n_vertices(level), 3)
    assert mesh.faces.shape == (n_faces(level), 3)
    assert mesh.edges.shape == (n_edges(level), 2)
    assert mesh.euler == 2


def test_closed_form_counts():
    assert (n_vertices(0), n_faces(0), n_edges(0)) == (12, 20, 30)
    m2 = build_icosphere(2)
    assert len(m2.vertices) == 162 and len(m2.faces) == 320
    assert (n_vertices(6), n_faces(6), n_edges(6)) == (40962, 81920, 122880)


def test_level_six_enumerated():
    mesh = build_icosphere(6)
    assert len(mesh.vertices) == 40962
    # edges enumerated from faces independently of the builder's bookkeeping
    e = np.sort(mesh.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    assert len(np.unique(e, axis=0)) == 122880


def test_validation_report_clean():
    assert validate_mesh(build_icosphere(2)).ok


def test_unit_norm_violation_reported():
    m = build_icosphere(2)
    v = m.vertices.copy()
    v[7] *= 1.5
    bad = IcoMesh(2, v, m.faces)
    report = validate_mesh(bad)
    assert not report.ok
    assert any("unit sphere" in s for s in report.violations)


def test_duplicate_face_reported():
    m = build_icosphere(1)
    faces = np.vstack([m.faces, m.faces[:1]])
    report = validate_mesh(IcoMesh(1, m.vertices, faces))
    assert not report.ok
    assert any("edge" in s for s in report.violations)


def test_parents_prefix_and_midpoints():
    m1, m2 = build_icosphere(1), build_icosphere(2)
    np.testing.assert_array_equal(m2.vertices[: len(m1.vertices)], m1.vertices)
    parents = m2.midpoint_parents[len(m1.vertices) - 12 :]
    mid = m2.vertices[parents[:, 0]] + m2.vertices[parents[:, 1]]
    mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    np.testing.assert_allclose(m2.vertices[len(m1.vertices):], mid, atol=1e-15)


def test_degrees_and_outward():
    m = build_icosphere(3)
    deg = m.degrees()
    assert (deg == 5).sum() == 12 and (deg == 6).sum() == len(deg) - 12
    a, b, c = (m.vertices[m.faces[:, i]] for i in range(3))
    assert (np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) > 0).all()


def test_immutable_and_cached():
    m = build_icosphere(2)
    assert m is build_icosphere(2)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 1.0
    with pytest.raises(dataclasses.FrozenInstanceError):
        m.level = 3


def test_level_guard():
    with pytest.raises(SizeLimitError):
        build_icosphere(9)
    with pytest.raises(ValueError):
        build_icosphere(-1)


def test_template_hash_distinguishes_levels():
    assert build_icosphere(1).template_hash() != build_icosphere(2).template_hash()
    assert build_icosphere(2).template_hash() == build_icosphere(2).template_hash()


def test_edges_from_faces_brute_force():
    faces = build_icosphere(1).faces
    brute = set()
    for f in faces:
        for u, v in itertools.combinations(f.tolist(), 2):
            brute.add((min(u, v), max(u, v)))
    assert set(map(tuple, edges_from_faces(faces).tolist())) == brute


def test_export_obj(tmp_path):
    p = tmp_path / "m.obj"
    export_obj(build_icosphere(1), p)
    lines = p.read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == 42
    assert sum(l.startswith("f ") for l in lines) == 80
