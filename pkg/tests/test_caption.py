import json
import logging

import httpx
import numpy as np
import pytest

from sgforge.caption import (
    Camera,
    CaptionCandidate,
    CaptionClients,
    CaptionConfig,
    HttpVisionClient,
    ObjectNeverVisible,
    StubCaptioner,
    StubScorer,
    StubSummarizer,
    caption_object,
    caption_scene,
    crop_rect,
    load_cameras,
    occlusion_score,
    project_points,
    save_cameras,
    select_candidates,
    stub_clients,
    visible_points,
)
from sgforge.errors import ClientError, ConfigError, DataError
from sgforge.ingest import normalize
from sgforge.scene_model import ScenePointCloud
from sgforge.synthetic import synthetic_cameras

CAM = Camera(100.0, 100.0, 64.0, 64.0, 128, 128, np.eye(4), "view.jpg")


def plane(x0, x1, y0, y1, z, step):
    xs = np.arange(x0, x1 + 1e-9, step)
    ys = np.arange(y0, y1 + 1e-9, step)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])


OBJECT = plane(-0.5, 0.5, -0.5, 0.5, 3.0, 1.0 / 60)


def occluder(x1):
    # denser than one point per pixel at depth 2
    return plane(-0.6, x1, -0.6, 0.6, 2.0, 0.01)


# -- projection --------------------------------------------------------------


def test_axis_point():
    p = project_points([[0.0, 0.0, 2.0]], CAM)
    assert p.as_tuples() == [(64.0, 64.0, 2.0)]


def test_off_axis_point():
    (u, v, d), = project_points([[0.5, 0.0, 2.0]], CAM).as_tuples()
    assert abs(u - 89.0) < 1e-9 and abs(v - 64.0) < 1e-9 and d == 2.0


def test_behind_camera_excluded():
    p = project_points([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]], CAM)
    assert p.index.tolist() == [1]


def test_outside_image_excluded():
    p = project_points([[10.0, 0.0, 1.0]], CAM)
    assert len(p) == 0


def test_extrinsics_applied():
    ext = np.eye(4)
    ext[:3, 3] = (0.0, 0.0, 2.0)  # world origin sits 2 m in front of the camera
    cam = Camera(100.0, 100.0, 64.0, 64.0, 128, 128, ext)
    (u, v, d), = project_points([[0.5, 0.0, 0.0]], cam).as_tuples()
    assert abs(u - 89.0) < 1e-9 and abs(v - 64.0) < 1e-9 and abs(d - 2.0) < 1e-9


def test_composed_camera_sees_normalized_scene(suite):
    scene = suite[0]
    cams = [Camera.from_dict(d) for d in synthetic_cameras(scene, views=3)]
    moved, transform = normalize(scene.replace(xyz=scene.xyz + (3.0, -2.0, 0.5)))
    raw = scene.xyz + (3.0, -2.0, 0.5)
    raw_cams = [Camera(c.fx, c.fy, c.cx, c.cy, c.width, c.height, c.extrinsics @ _shift(-3.0, 2.0, -0.5), c.image_ref) for c in cams]
    for cam in raw_cams:
        a = project_points(raw, cam)
        b = project_points(moved.xyz, cam.composed(np.linalg.inv(transform)))
        assert np.array_equal(a.index, b.index)
        assert np.allclose(a.u, b.u, atol=1e-9) and np.allclose(a.depth, b.depth, atol=1e-9)


def _shift(x, y, z):
    m = np.eye(4)
    m[:3, 3] = (x, y, z)
    return m


# -- visibility --------------------------------------------------------------


def test_object_alone_fully_visible():
    vis = visible_points(OBJECT, OBJECT, CAM)
    assert occlusion_score(OBJECT, vis) == 1.0


def test_object_fully_occluded():
    scene = np.vstack([OBJECT, occluder(0.6)])
    assert occlusion_score(OBJECT, visible_points(OBJECT, scene, CAM)) == 0.0


def test_object_half_occluded():
    scene = np.vstack([OBJECT, occluder(-0.01)])
    s = occlusion_score(OBJECT, visible_points(OBJECT, scene, CAM))
    assert 0.45 <= s <= 0.55


def test_coarser_buffer_is_not_more_visible():
    scene = np.vstack([OBJECT, occluder(-0.01)])
    fine = len(visible_points(OBJECT, scene, CAM, 1))
    coarse = len(visible_points(OBJECT, scene, CAM, 4))
    assert coarse <= fine


def test_occlusion_arithmetic():
    assert occlusion_score(range(100), range(100)) == 1.0
    assert occlusion_score(range(100), []) == 0.0
    assert occlusion_score(range(200), range(50)) == 0.25
    with pytest.raises(ValueError):
        occlusion_score([], [])


# -- crops and selection -----------------------------------------------------


def test_crop_single_point():
    assert crop_rect([10.3], [20.7], 128, 128, margin=0.0) == (10, 20, 10, 20)


def test_crop_min_max():
    assert crop_rect([10, 50, 30], [10, 80, 40], 128, 128, margin=0.0) == (10, 10, 50, 80)


def test_crop_clamped():
    assert crop_rect([1, 126], [0, 127], 128, 128, margin=0.5) == (0, 0, 127, 127)


def cand(i, clip, occ):
    return CaptionCandidate(i, f"c{i}", clip, occ, (0, 0, 1, 1))


def test_select_under_k():
    out = select_candidates([cand(0, 0.1, 1.0), cand(1, 0.9, 1.0), cand(2, 0.5, 1.0)], k=10)
    assert [c.view_id for c in out] == [1, 2, 0]


def test_select_product():
    out = select_candidates([cand(0, 0.9, 0.5), cand(1, 0.6, 0.9)])
    assert [c.view_id for c in out] == [1, 0]


def test_select_tie_prefers_visibility():
    out = select_candidates([cand(0, 0.6, 0.6), cand(1, 0.45, 0.8)])
    assert out[0].score == pytest.approx(out[1].score)
    assert [c.view_id for c in out] == [1, 0]


def test_select_ten_of_twelve():
    cands = [cand(i, (i + 1) / 12, 1.0) for i in range(12)]
    out = select_candidates(cands, k=10)
    assert len(out) == 10
    assert {c.view_id for c in out} == set(range(2, 12))


def test_select_lexicographic_and_bad_rule():
    out = select_candidates([cand(0, 0.9, 0.1), cand(1, 0.8, 1.0)], rule="lexicographic")
    assert out[0].view_id == 0
    with pytest.raises(ConfigError):
        select_candidates([], rule="best")


def test_candidate_scores_range():
    with pytest.raises(ValueError):
        cand(0, 1.5, 0.5)


# -- pipeline ----------------------------------------------------------------


def cup_scene(with_wall=False):
    pts = [OBJECT]
    ids = [np.zeros(len(OBJECT), dtype=np.int64)]
    inst = {0: "cup"}
    if with_wall:
        w = occluder(0.6)
        pts.append(w)
        ids.append(np.ones(len(w), dtype=np.int64))
        inst[1] = "wall"
    xyz = np.vstack(pts)
    iid = np.concatenate(ids)
    return ScenePointCloud("cups", xyz, np.zeros((len(xyz), 3), dtype=np.int64), iid, iid, inst)


class RecordingSummarizer(StubSummarizer):
    def summarize(self, prompt, texts, target):
        self.seen = list(texts)
        return super().summarize(prompt, texts, target)


def test_stub_plumbing_one_camera():
    clients = CaptionClients(StubCaptioner("a red {label}"), StubScorer(0.7), StubSummarizer("join"))
    cap = caption_object(0, cup_scene(), [CAM], clients)
    assert "a red cup" in cap.text
    assert len(cap.selected) == 1


def test_summarizer_receives_top_ten_of_twelve():
    cams = [Camera(100.0, 100.0, 64.0, 64.0, 128, 128, np.eye(4), f"v{i}.jpg") for i in range(12)]
    summ = RecordingSummarizer("first")
    clients = CaptionClients(StubCaptioner(), StubScorer(), summ)
    cap = caption_object(0, cup_scene(), cams, clients, CaptionConfig(k=10))
    assert len(summ.seen) == 10 and len(cap.selected) == 10 and len(cap.candidates) == 12


def test_never_visible_raises():
    with pytest.raises(ObjectNeverVisible, match="never visible"):
        caption_object(0, cup_scene(with_wall=True), [CAM], stub_clients())
    assert issubclass(ObjectNeverVisible, DataError)


def test_all_views_failing_is_client_error():
    clients = CaptionClients(StubCaptioner(fail_images=("view.jpg",)), StubScorer(), StubSummarizer())
    with pytest.raises(ClientError):
        caption_object(0, cup_scene(), [CAM], clients)


def test_caption_scene_isolates_hidden_objects(caplog):
    scene = cup_scene(with_wall=True)
    # the wall is structural and skipped; the cup behind it is logged and skipped
    with caplog.at_level(logging.WARNING):
        recs, audit = caption_scene(scene, [CAM], stub_clients(), CaptionConfig(), 0)
    assert recs == []
    assert audit == [{"object_id": 0, "label": "cup", "skipped": "never-visible"}]
    assert "never visible" in caplog.text


def test_caption_scene_records(suite):
    scene, _ = normalize(suite[5])
    cams = [Camera.from_dict(d) for d in synthetic_cameras(suite[5])]
    _, t = normalize(suite[5])
    cams = [c.composed(np.linalg.inv(t)) for c in cams]
    recs, audit = caption_scene(scene, cams, stub_clients(), CaptionConfig(), 0)
    assert recs and all(r.kind == "object_caption" and r.source == "summary" for r in recs)
    assert len(audit) == sum(1 for lab in scene.instances.values() if lab not in ("floor", "wall", "ceiling"))


def test_camera_file_roundtrip_and_errors(tmp_path):
    p = tmp_path / "cams.json"
    save_cameras([CAM], p)
    (back,) = load_cameras(p)
    assert back.to_dict() == CAM.to_dict()
    with pytest.raises(ConfigError):
        load_cameras(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("[{")
    with pytest.raises(DataError):
        load_cameras(bad)
    with pytest.raises(ValueError):
        Camera(0.0, 1.0, 0, 0, 10, 10, np.eye(4))


def test_http_vision_client():
    def handler(request):
        body = json.loads(request.content)
        if body["task"] == "caption":
            return httpx.Response(200, json={"text": f"a {body['label']}"})
        if body["task"] == "score":
            return httpx.Response(200, json={"score": 1.7})
        return httpx.Response(200, json={"text": " | ".join(body["texts"])})

    c = HttpVisionClient("http://vision.test", transport=httpx.MockTransport(handler))
    assert c.caption("im", (0, 0, 1, 1), "cup") == "a cup"
    assert c.score("im", (0, 0, 1, 1), "a cup") == 1.0
    assert c.summarize("p", ["a", "b"], "cup") == "a | b"
    broken = HttpVisionClient("http://vision.test", transport=httpx.MockTransport(lambda r: httpx.Response(500)))
    with pytest.raises(ClientError):
        broken.caption("im", (0, 0, 1, 1), "cup")
