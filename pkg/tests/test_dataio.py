import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from surfdiff.dataio import (
    assign_splits,
    compute_normalization,
    denormalize,
    load_manifest,
    normalize,
    project_png,
    read_smf,
    render,
    roughness,
    split_counts,
    synth_dataset,
    synth_map,
    write_smf,
)
from surfdiff.dataio import smf
from surfdiff.dataio.viz import pixel_directions, pixel_vertex_map
from surfdiff.errors import ArgumentError, BadMagicError, CountMismatchError, ParseError, TruncatedError
from surfdiff.icosphere import build_icosphere
from surfdiff.patching import MetricMap


def test_header_bytes_level2():
    m = MetricMap(2, np.zeros(162), age_weeks=None)
    raw = smf.dumps(m)
    assert raw[:16].hex() == "534d4631" + "02000000" + "a2000000" + "01000000"
    assert raw[16:24] == struct.pack("<Q", 0x7FF8000000000000)
    assert len(raw) == 24 + 162 * 4


def test_header_written_independently():
    v = np.arange(162, dtype=np.float32) / 7
    expected = b"SMF1" + (2).to_bytes(4, "little") + (162).to_bytes(4, "little") + (1).to_bytes(4, "little")
    expected += struct.pack("<d", 33.5) + v.astype("<f4").tobytes()
    assert smf.dumps(MetricMap(2, v, 33.5)) == expected


@settings(max_examples=40, deadline=None)
@given(
    st.integers(0, 3),
    st.one_of(st.none(), st.floats(20, 50)),
    st.data(),
)
def test_round_trip_bytes(level, age, data):
    n = 10 * 4**level + 2
    vals = data.draw(arrays(np.float32, n, elements=st.floats(-1e6, 1e6, width=32)))
    m = MetricMap(level, vals, age)
    raw = smf.dumps(m)
    back = smf.loads(raw)
    assert smf.dumps(back) == raw
    assert back.age_weeks == age


def test_error_classes():
    good = smf.dumps(MetricMap(2, np.ones(162)))
    with pytest.raises(BadMagicError):
        smf.loads(b"XXXX" + good[4:])
    bad_count = good[:8] + (161).to_bytes(4, "little") + good[12:]
    with pytest.raises(CountMismatchError):
        smf.loads(bad_count)
    with pytest.raises(TruncatedError):
        smf.loads(good[:-4])
    with pytest.raises(TruncatedError):
        smf.loads(good[:10])
    with pytest.raises(CountMismatchError):
        smf.loads(good + b"\0\0\0\0")
    with pytest.raises(ParseError):
        smf.loads(good[:12] + (2).to_bytes(4, "little") + good[16:])
    nan_payload = good[:24] + np.full(162, np.nan, dtype="<f4").tobytes()
    with pytest.raises(ParseError):
        smf.loads(nan_payload)


def test_file_io(tmp_path):
    m = synth_map(2, 0, 0)
    write_smf(m, tmp_path / "a.smf")
    assert read_smf(tmp_path / "a.smf").values.tobytes() == m.values.tobytes()


def test_synth_deterministic_and_bounded(tmp_path):
    synth_dataset(6, 2, 3, tmp_path / "a")
    synth_dataset(6, 2, 3, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    for m in load_manifest(tmp_path / "a" / "manifest.json").load_maps():
        assert np.all(np.abs(m.values) < 1) and 24 <= m.age_weeks <= 45


def test_roughness_increases_with_age():
    edges = build_icosphere(3).edges
    bins = [(24, 27), (27, 30), (30, 33), (33, 36), (36, 39), (39, 42), (42, 45)]
    rng = np.random.default_rng(0)
    means = []
    for lo, hi in bins:
        ages = rng.uniform(lo, hi, 50)
        means.append(np.mean([roughness(synth_map(3, 1, i, age=a).values, edges) for i, a in enumerate(ages)]))
    assert np.all(np.diff(means) > 0)


def test_synth_age_override_keeps_other_draws():
    a = synth_map(2, 5, 3, age=30.0)
    b = synth_map(2, 5, 3, age=30.0)
    assert a.values.tobytes() == b.values.tobytes() and a.age_weeks == 30.0


def test_normalize_examples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(100).astype(np.float32)
    np.testing.assert_array_equal(normalize(x, 0.0, 1.0), x)
    np.testing.assert_array_equal(normalize(np.full(5, 2.5, np.float32), 2.5, 0.7), 0.0)
    assert np.abs(denormalize(normalize(x, 0.3, 1.7), 0.3, 1.7) - x).max() < 1e-6
    with pytest.raises(ArgumentError):
        normalize(x, 0.0, 0.0)


def test_splits():
    assert split_counts(200) == {"train": 160, "test": 20, "val": 20}
    labels = assign_splits(200, 7)
    assert labels.count("train") == 160 and labels == assign_splits(200, 7)
    c = split_counts(530)
    assert (c["train"], c["test"], c["val"]) == (423, 54, 53)


def test_manifest_and_normalization(tmp_path):
    man = synth_dataset(10, 2, 0, tmp_path)
    loaded = load_manifest(tmp_path / "manifest.json")
    assert loaded.level == 2 and len(loaded.entries) == 10
    vals = np.concatenate([m.values.astype(np.float64) for m in loaded.load_maps("train")])
    assert loaded.normalization["mean"] == pytest.approx(vals.mean())
    assert loaded.normalization["std"] == pytest.approx(vals.std())
    assert compute_normalization(loaded) == man.normalization
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["format_version"] = 99
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    with pytest.raises(ParseError):
        load_manifest(tmp_path / "bad.json")


def test_manifest_validate_detects_missing(tmp_path):
    synth_dataset(4, 1, 0, tmp_path)
    (tmp_path / "sample_00001.smf").unlink()
    with pytest.raises(ArgumentError):
        load_manifest(tmp_path / "manifest.json").validate()


def test_render_constant_single_color():
    img = render(MetricMap(2, np.full(162, 0.3)), 32, 16)
    assert img.shape == (16, 32, 3)
    assert len(np.unique(img.reshape(-1, 3), axis=0)) == 1


def test_render_latitude():
    v = build_icosphere(3).vertices
    img = render(MetricMap(3, v[:, 2]), 64, 32).astype(int)
    top, bottom = img[0], img[-1]
    assert (top[:, 0] > top[:, 2]).all()  # red near the north pole
    assert (bottom[:, 2] > bottom[:, 0]).all()  # blue near the south pole


def test_nearest_vertex_brute_force():
    v = build_icosphere(2).vertices
    d = pixel_directions(32, 16)
    brute = np.argmin(((d[:, None] - v[None]) ** 2).sum(-1), axis=1).reshape(16, 32)
    np.testing.assert_array_equal(pixel_vertex_map(2, 32, 16), brute)


def test_png(tmp_path):
    project_png(synth_map(2, 0, 1), 40, 20, tmp_path / "x.png")
    with Image.open(tmp_path / "x.png") as im:
        assert im.size == (40, 20) and im.mode == "RGB"
    with pytest.raises(ArgumentError):
        render(synth_map(2, 0, 1), 8, 8)
