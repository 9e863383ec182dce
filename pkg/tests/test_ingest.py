import json
from collections import Counter

import numpy as np
import pytest

from sgforge.errors import ConfigError, DataError
from sgforge.ingest import (
    IngestConfig,
    align_semantics,
    filter_scene,
    load_label_map,
    load_scene,
    normalize,
    preprocess,
    save_scene_json,
    save_scene_ply,
    scene_to_dict,
    subsample,
)
from sgforge.scene_model import ScenePointCloud, node_from_instance
from sgforge.synthetic import scene_from_boxes


def big_scene(n=300_000, n_inst=6, seed=0):
    rng = np.random.default_rng(seed)
    xyz = rng.uniform(0, 5, size=(n, 3))
    inst = rng.integers(0, n_inst, size=n)
    # one rare instance, so preserving instances is not automatic
    inst[:3] = n_inst
    return ScenePointCloud(
        "big", xyz, np.zeros((n, 3), dtype=np.int64), inst, inst, {i: f"obj{i}" for i in range(n_inst + 1)}
    )


def point_multiset(scene):
    return Counter(map(tuple, scene.rows().tolist()))


def test_json_roundtrip(tmp_path):
    doc = {
        "scene_id": "mini",
        "instances": {"0": "floor"},
        "points": [[0, 0, 0, 1, 2, 3, 0, 0], [1, 0, 0, 1, 2, 3, 0, 0]],
    }
    p = tmp_path / "mini.json"
    p.write_text(json.dumps(doc))
    s = load_scene(p)
    assert len(s) == 2 and s.instances == {0: "floor"}
    save_scene_json(s, tmp_path / "again.json")
    assert scene_to_dict(load_scene(tmp_path / "again.json")) == scene_to_dict(s)


def test_ply_roundtrip(tmp_path, spec_scene):
    small = spec_scene.select(np.arange(0, len(spec_scene), 50))
    for binary in (True, False):
        p = tmp_path / f"s{binary}.ply"
        save_scene_ply(small, p, binary=binary)
        back = load_scene(p)
        assert back.instances == small.instances
        assert np.array_equal(back.xyz, small.xyz)
        assert np.array_equal(back.instance_ids, small.instance_ids)


def test_ply_three_vertices(tmp_path):
    p = tmp_path / "three.ply"
    p.write_text(
        "ply\nformat ascii 1.0\nelement vertex 3\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "property int instance_id\nproperty int semantic_id\nend_header\n"
        "0 0 0 1 2 3 0 5\n1 0 0 1 2 3 0 5\n0 1 0 1 2 3 1 6\n"
    )
    s = load_scene(p)
    assert len(s) == 3
    assert s.instances == {0: "5", 1: "6"}


def test_undeclared_instance_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"scene_id": "b", "instances": {"0": "floor"}, "points": [[0, 0, 0, 0, 0, 0, 3, 0]]}))
    with pytest.raises(DataError, match="3"):
        load_scene(p)


def test_parse_error_names_position(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{"scene_id": "x",\n "points": [1, 2')
    with pytest.raises(DataError, match="line 2"):
        load_scene(p)


def test_subsample_under_cap_unchanged(spec_scene):
    small = spec_scene.select(np.arange(100))
    assert subsample(small, 240_000, 0) is small


def test_subsample_300k_to_240k():
    s = big_scene()
    out = subsample(s, 240_000, 7)
    assert len(out) == 240_000
    assert set(np.unique(out.instance_ids).tolist()) == set(np.unique(s.instance_ids).tolist())
    again = subsample(s, 240_000, 7)
    assert np.array_equal(out.rows(), again.rows())
    other = subsample(s, 240_000, 8)
    assert not np.array_equal(out.rows(), other.rows())
    # sampling without replacement: every kept row occurs in the input
    src = point_multiset(s)
    assert all(src[k] >= v for k, v in point_multiset(out).items())


def test_subsample_below_instance_count():
    with pytest.raises(DataError):
        subsample(big_scene(1000, 6), 3, 0)


def floor_table_scene(floor_hi=(4.0, 4.0, 0.05)):
    return scene_from_boxes(
        "ft",
        [("floor", (0.0, 0.0, 0.0), floor_hi), ("table", (1.0, 1.0, 0.05), (2.0, 2.0, 0.8))],
        seed=3,
    )


def test_normalize_translates_floor_center_to_origin():
    s = floor_table_scene()
    out, t = normalize(s)
    table_before = node_from_instance(s, 1).centroid
    table_after = node_from_instance(out, 1).centroid
    assert np.allclose(np.array(table_after) - np.array(table_before), (-2, -2, -0.05), atol=1e-9)
    assert np.allclose(t[:3, :3], np.eye(3))


def test_normalize_centered_scene_is_fixed_point():
    out, _ = normalize(floor_table_scene())
    again, t = normalize(out)
    assert np.allclose(t, np.eye(4), atol=1e-9)
    assert np.allclose(again.xyz, out.xyz, atol=1e-9)


def test_normalize_undoes_quarter_turn():
    s = floor_table_scene((6.0, 4.0, 0.05))
    centered, _ = normalize(s)
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    turned = s.replace(xyz=s.xyz @ rot.T + np.array([10.0, -3.0, 0.0]))
    back, t = normalize(turned)
    assert np.allclose(back.xyz, centered.xyz, atol=1e-9)
    assert np.allclose(t[:3, :3] @ rot, np.eye(3), atol=1e-12)


def test_normalize_without_floor():
    s = scene_from_boxes("nf", [("table", (0, 0, 0), (1, 1, 1))])
    with pytest.raises(DataError, match="no floor"):
        normalize(s)


def test_normalize_degenerate_floor():
    rows = [[0, 0, 0, 0, 0, 0, 0, 0], [0, 0, 1, 0, 0, 0, 0, 0]]
    with pytest.raises(DataError, match="degenerate"):
        normalize(ScenePointCloud.from_rows("d", rows, {0: "floor"}))


def three_label_scene():
    return scene_from_boxes(
        "lab",
        [("floor", (0, 0, 0), (4, 4, 0.05)), ("sofa chair", (1, 1, 0.05), (2, 2, 1)), ("desk", (3, 3, 0.05), (3.5, 3.5, 1))],
    )


def test_align_semantics_direct_lookup():
    out, rep = align_semantics(three_label_scene(), {"sofa chair": "armchair"})
    assert out.instances[1] == "armchair"
    assert rep.mapped == {"sofa chair": "armchair"}


def test_align_semantics_empty_map():
    s = three_label_scene()
    out, rep = align_semantics(s, {})
    assert dict(out.instances) == dict(s.instances)
    assert set(rep.unmapped) == set(s.instances.values())


def test_align_semantics_partial_map():
    _, rep = align_semantics(three_label_scene(), {"sofa chair": "armchair", "floor": "floor", "bed": "bed"})
    assert rep.unmapped == ("desk",)


def test_align_semantics_semantic_ids_consistent():
    out, _ = align_semantics(three_label_scene(), {"sofa chair": "armchair", "floor": "floor"})
    vocab = ["armchair", "floor"]
    for iid, lab in out.instances.items():
        ids = set(out.semantic_ids[out.instance_ids == iid].tolist())
        assert ids == {vocab.index(lab) if lab in vocab else len(vocab)}


def n_object_scene(n, spacing=0.5):
    boxes = [("floor", (0, 0, 0), (n * spacing + 1, 2, 0.05))]
    boxes += [("box", (i * spacing, 0.5, 0.05), (i * spacing + 0.2, 0.7, 0.3)) for i in range(n)]
    return scene_from_boxes(f"n{n}", boxes)


def test_filter_min_objects():
    d = filter_scene(n_object_scene(3), IngestConfig())
    assert (d.keep, d.rule, d.value) == (False, "min_objects", 3)


def test_filter_keeps_ordinary_scene():
    s = n_object_scene(10)
    assert filter_scene(s, IngestConfig()).keep


def test_filter_max_extent():
    boxes = [("floor", (0, 0, 0), (18.0, 24.0, 0.05))] + [
        ("box", (i, 1, 0.05), (i + 0.5, 1.5, 0.5)) for i in range(5)
    ]
    d = filter_scene(scene_from_boxes("wide", boxes), IngestConfig())
    assert (d.keep, d.rule) == (False, "max_extent")
    assert d.value == pytest.approx(30.0)


def test_preprocess_report(spec_scene):
    res = preprocess(spec_scene, IngestConfig(min_objects=3), {}, seed=0)
    rep = res.report()
    assert rep["keep"] and rep["points_in"] == len(spec_scene)
    assert len(rep["transform"]) == 16


def test_label_map_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_label_map(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_label_map(bad)


def test_ingest_config_validation():
    with pytest.raises(ConfigError):
        IngestConfig(max_points=0)
    with pytest.raises(ConfigError):
        IngestConfig(max_extent_m=0)
