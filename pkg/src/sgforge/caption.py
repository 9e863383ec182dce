"""Multi-view object captioning.

For each posed view: project the object's points, test them against a
point-splat depth buffer of the whole scene, score occlusion, crop, then ask
a captioner for a caption and a scorer for an image-text score. The best
candidates go to a summarizer that writes the final caption.

Camera convention: x right, y down, z forward (OpenCV pinhole). Extrinsics
map world coordinates to camera coordinates.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union

import httpx
import numpy as np

from .corpus import LanguageRecord
from .errors import ClientError, ConfigError, DataError
from .langgen.prompts import RephraseRequest, build_prompt
from .scene_model import ScenePointCloud
from .seeding import derive_seed

log = logging.getLogger(__name__)

DEPTH_TOL = 1e-4


class ObjectNeverVisible(DataError):
    pass


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsics: np.ndarray  # 4x4 world-to-camera
    image_ref: str = ""

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("fx and fy must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        ext = np.array(self.extrinsics, dtype=np.float64).reshape(4, 4)
        if not np.all(np.isfinite(ext)) or abs(np.linalg.det(ext)) < 1e-12:
            raise ValueError("extrinsics must be a finite invertible 4x4 matrix")
        ext.setflags(write=False)
        object.__setattr__(self, "extrinsics", ext)

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            extrinsics=np.array(d["extrinsics"], dtype=np.float64).reshape(4, 4),
            image_ref=str(d.get("image", "")),
        )

    def to_dict(self) -> dict:
        return {
            "image": self.image_ref,
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "extrinsics": [float(x) for x in self.extrinsics.reshape(-1)],
        }

    def composed(self, world_from_local: np.ndarray) -> "Camera":
        """Same camera, expressed for points given in another frame."""
        ext = self.extrinsics @ np.asarray(world_from_local, dtype=np.float64)
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, ext, self.image_ref)


def load_cameras(path: Union[str, Path]) -> list[Camera]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"camera file {path} does not exist")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        return [Camera.from_dict(d) for d in doc]
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: JSON parse error at line {exc.lineno} column {exc.colno}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad camera entry: {exc}") from None


def save_cameras(cameras: Sequence[Camera], path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in cameras]) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Projection:
    """Points that land in the image: pixel coordinates, depth and the index
    of each into the input array."""

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    index: np.ndarray

    def __len__(self) -> int:
        return len(self.index)

    def as_tuples(self) -> list[tuple[float, float, float]]:
        return [(float(a), float(b), float(c)) for a, b, c in zip(self.u, self.v, self.depth)]


def to_camera(points: np.ndarray, camera: Camera) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    ext = camera.extrinsics
    return pts @ ext[:3, :3].T + ext[:3, 3]


def project_points(points: np.ndarray, camera: Camera) -> Projection:
    cam = to_camera(points, camera)
    z = cam[:, 2]
    front = z > 0
    safe = np.where(front, z, 1.0)
    u = camera.fx * cam[:, 0] / safe + camera.cx
    v = camera.fy * cam[:, 1] / safe + camera.cy
    keep = front & (u >= 0) & (u < camera.width) & (v >= 0) & (v < camera.height)
    idx = np.nonzero(keep)[0]
    return Projection(u[idx], v[idx], z[idx], idx)


def unproject(u: np.ndarray, v: np.ndarray, depth: np.ndarray, camera: Camera) -> np.ndarray:
    """Camera-space points for pixels and depths; inverse of the pinhole map."""
    x = (np.asarray(u, dtype=np.float64) - camera.cx) * depth / camera.fx
    y = (np.asarray(v, dtype=np.float64) - camera.cy) * depth / camera.fy
    return np.stack([x, y, np.asarray(depth, dtype=np.float64)], axis=1)


def _cells(proj: Projection, camera: Camera, zbuf_res: int) -> tuple[np.ndarray, int]:
    cols = -(-camera.width // zbuf_res)
    cu = np.floor(proj.u / zbuf_res).astype(np.int64)
    cv = np.floor(proj.v / zbuf_res).astype(np.int64)
    return cv * cols + cu, cols * -(-camera.height // zbuf_res)


def depth_buffer(proj: Projection, camera: Camera, zbuf_res: int = 1) -> np.ndarray:
    """Nearest depth per cell of ``zbuf_res`` x ``zbuf_res`` pixels (inf where empty)."""
    if zbuf_res < 1:
        raise ValueError("zbuf_res must be >= 1")
    cell, n = _cells(proj, camera, zbuf_res)
    buf = np.full(n, np.inf)
    np.minimum.at(buf, cell, proj.depth)
    return buf


def visible_mask(points: np.ndarray, buffer: np.ndarray, camera: Camera, zbuf_res: int = 1) -> np.ndarray:
    """Boolean per input point: in the image and not behind the buffer."""
    proj = project_points(points, camera)
    cell, _ = _cells(proj, camera, zbuf_res)
    mask = np.zeros(len(np.asarray(points).reshape(-1, 3)), dtype=bool)
    mask[proj.index] = proj.depth <= buffer[cell] + DEPTH_TOL
    return mask


def visible_points(object_points: np.ndarray, scene_points: np.ndarray, camera: Camera, zbuf_res: int = 1) -> np.ndarray:
    """The subset of ``object_points`` that survives the scene's depth buffer."""
    obj = np.asarray(object_points, dtype=np.float64).reshape(-1, 3)
    buf = depth_buffer(project_points(scene_points, camera), camera, zbuf_res)
    return obj[visible_mask(obj, buf, camera, zbuf_res)]


def occlusion_score(object_points, visible) -> float:
    n = len(object_points)
    if n == 0:
        raise ValueError("occlusion score needs at least one object point")
    return len(visible) / n


Rect = tuple[int, int, int, int]


def crop_rect(u: Sequence[float], v: Sequence[float], width: int, height: int, margin: float = 0.05) -> Rect:
    """Inclusive pixel rect (x0, y0, x1, y1) around projected points, padded by
    ``margin`` of its size on each side and clamped to the image."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if len(u) == 0:
        raise ValueError("crop needs at least one projected point")
    x0, x1 = int(math.floor(u.min())), int(math.floor(u.max()))
    y0, y1 = int(math.floor(v.min())), int(math.floor(v.max()))
    px = int(math.ceil(margin * (x1 - x0 + 1)))
    py = int(math.ceil(margin * (y1 - y0 + 1)))
    return (max(0, x0 - px), max(0, y0 - py), min(width - 1, x1 + px), min(height - 1, y1 + py))


# ---------------------------------------------------------------------------
# Candidates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CaptionCandidate:
    view_id: int
    text: str
    s_clip: float
    s_occ: float
    crop: Rect
    image_ref: str = ""

    def __post_init__(self):
        for name in ("s_clip", "s_occ"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name}={val} outside [0, 1]")

    @property
    def score(self) -> float:
        return self.s_clip * self.s_occ

    def to_dict(self) -> dict:
        return {
            "view_id": self.view_id,
            "text": self.text,
            "s_clip": self.s_clip,
            "s_occ": self.s_occ,
            "crop": list(self.crop),
            "image": self.image_ref,
        }


SELECTION_RULES = ("product", "lexicographic")


def select_candidates(cands: Sequence[CaptionCandidate], k: int = 10, rule: str = "product") -> list[CaptionCandidate]:
    if rule == "product":
        key = lambda c: (-c.score, -c.s_occ, c.view_id)
    elif rule == "lexicographic":
        key = lambda c: (-c.s_clip, -c.s_occ, c.view_id)
    else:
        raise ConfigError(f"unknown selection rule {rule!r}; expected one of {SELECTION_RULES}")
    return sorted(cands, key=key)[:k]


# ---------------------------------------------------------------------------
# Clients
# ---------------------------------------------------------------------------


class Captioner(Protocol):
    def caption(self, image_ref: str, crop: Rect, label: str) -> str: ...


class Scorer(Protocol):
    def score(self, image_ref: str, crop: Rect, text: str) -> float: ...


class Summarizer(Protocol):
    def summarize(self, prompt: str, texts: Sequence[str], target: str) -> str: ...


@dataclass
class StubCaptioner:
    """Returns ``template`` with ``{label}`` filled in; fails on listed views."""

    template: str = "a {label}"
    fail_images: tuple = ()

    def caption(self, image_ref: str, crop: Rect, label: str) -> str:
        if image_ref in self.fail_images:
            raise ClientError(f"stub captioner configured to fail on {image_ref}")
        return self.template.format(label=label)


@dataclass
class StubScorer:
    """Deterministic pseudo-score from the crop reference, or a fixed value."""

    fixed: Optional[float] = None

    def score(self, image_ref: str, crop: Rect, text: str) -> float:
        if self.fixed is not None:
            return self.fixed
        h = hashlib.sha256(json.dumps([image_ref, list(crop), text]).encode()).digest()
        return int.from_bytes(h[:4], "big") / 0xFFFFFFFF


@dataclass
class StubSummarizer:
    """first: the top candidate's text; join: distinct texts in rank order."""

    mode: str = "first"

    def summarize(self, prompt: str, texts: Sequence[str], target: str) -> str:
        if self.mode == "first":
            return texts[0]
        if self.mode == "join":
            return " ".join(dict.fromkeys(texts))
        raise ValueError(f"unknown stub summarizer mode {self.mode!r}")


class HttpVisionClient:
    """One POST endpoint per task; request {"task", ...}, response {"text"} or {"score"}."""

    def __init__(self, url: str, timeout: float = 30.0, transport: Optional[httpx.BaseTransport] = None):
        self.url = url
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _post(self, body: dict, field_name: str):
        try:
            resp = self._client.post(self.url, json=body)
            resp.raise_for_status()
            doc = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise ClientError(f"{body['task']} request to {self.url} failed: {exc}") from None
        if not isinstance(doc, dict) or field_name not in doc:
            raise ClientError(f"{body['task']} response from {self.url} has no {field_name} field")
        return doc[field_name]

    def caption(self, image_ref: str, crop: Rect, label: str) -> str:
        return str(self._post({"task": "caption", "image_crop_ref": {"image": image_ref, "rect": list(crop)}, "label": label}, "text"))

    def score(self, image_ref: str, crop: Rect, text: str) -> float:
        val = self._post({"task": "score", "image_crop_ref": {"image": image_ref, "rect": list(crop)}, "texts": [text]}, "score")
        try:
            return min(1.0, max(0.0, float(val)))
        except (TypeError, ValueError):
            raise ClientError(f"score response from {self.url} is not a number") from None

    def summarize(self, prompt: str, texts: Sequence[str], target: str) -> str:
        return str(self._post({"task": "summarize", "prompt": prompt, "texts": list(texts), "target": target}, "text"))


@dataclass
class CaptionClients:
    captioner: Captioner
    scorer: Scorer
    summarizer: Summarizer


def stub_clients() -> CaptionClients:
    return CaptionClients(StubCaptioner(), StubScorer(), StubSummarizer())


def http_clients(captioner_url: str, scorer_url: str, summarizer_url: str, timeout: float = 30.0) -> CaptionClients:
    return CaptionClients(
        HttpVisionClient(captioner_url, timeout), HttpVisionClient(scorer_url, timeout), HttpVisionClient(summarizer_url, timeout)
    )


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CaptionConfig:
    k: int = 10
    zbuf_res: int = 1
    margin: float = 0.05
    rule: str = "product"
    skip_labels: tuple = ("floor", "wall", "ceiling")

    def __post_init__(self):
        if self.k < 1 or self.zbuf_res < 1 or self.margin < 0:
            raise ValueError("k and zbuf_res must be >= 1 and margin >= 0")
        if self.rule not in SELECTION_RULES:
            raise ValueError(f"unknown selection rule {self.rule!r}")


@dataclass(frozen=True)
class ViewVisibility:
    camera: Camera
    proj: Projection
    visible: np.ndarray  # per scene point


def scene_visibility(xyz: np.ndarray, cameras: Sequence[Camera], zbuf_res: int) -> list[ViewVisibility]:
    out = []
    for cam in cameras:
        proj = project_points(xyz, cam)
        buf = depth_buffer(proj, cam, zbuf_res)
        cell, _ = _cells(proj, cam, zbuf_res)
        vis = np.zeros(len(xyz), dtype=bool)
        vis[proj.index] = proj.depth <= buf[cell] + DEPTH_TOL
        out.append(ViewVisibility(cam, proj, vis))
    return out


@dataclass(frozen=True)
class ObjectCaption:
    object_id: int
    text: str
    selected: tuple
    candidates: tuple
    flags: tuple = ()


def _caption_from_views(
    object_id: int,
    label: str,
    member: np.ndarray,
    views: Sequence[ViewVisibility],
    clients: CaptionClients,
    cfg: CaptionConfig,
) -> ObjectCaption:
    total = int(member.sum())
    if total == 0:
        raise ObjectNeverVisible(f"object {object_id} has no points")
    cands, flags, seen = [], [], False
    for view_id, vv in enumerate(views):
        vis = vv.visible & member
        s_occ = occlusion_score(range(total), range(int(vis.sum())))
        if s_occ == 0.0:
            continue
        seen = True
        in_view = vis[vv.proj.index]
        crop = crop_rect(vv.proj.u[in_view], vv.proj.v[in_view], vv.camera.width, vv.camera.height, cfg.margin)
        try:
            text = clients.captioner.caption(vv.camera.image_ref, crop, label)
            s_clip = clients.scorer.score(vv.camera.image_ref, crop, text)
        except ClientError as exc:
            log.warning("object %d view %d dropped: %s", object_id, view_id, exc)
            flags.append(f"view-{view_id}-failed")
            continue
        cands.append(CaptionCandidate(view_id, text, float(s_clip), s_occ, crop, vv.camera.image_ref))
    if not seen:
        raise ObjectNeverVisible(f"object {object_id} ({label}) never visible")
    if not cands:
        raise ClientError(f"object {object_id}: every visible view failed at the client")
    selected = select_candidates(cands, cfg.k, cfg.rule)
    texts = [c.text for c in selected]
    prompt = build_prompt(RephraseRequest("caption-summary", text="\n".join(texts), target_label=label))
    summary = " ".join(clients.summarizer.summarize(prompt, texts, label).split())
    if not summary:
        raise ClientError(f"object {object_id}: empty summary")
    return ObjectCaption(object_id, summary, tuple(selected), tuple(cands), tuple(flags))


def caption_object(
    object_id: int,
    scene: ScenePointCloud,
    cameras: Sequence[Camera],
    clients: CaptionClients,
    cfg: CaptionConfig = CaptionConfig(),
) -> ObjectCaption:
    if not cameras:
        raise ConfigError("captioning needs at least one camera")
    if object_id not in scene.instances:
        raise DataError(f"unknown instance id {object_id}")
    views = scene_visibility(scene.xyz, cameras, cfg.zbuf_res)
    member = scene.instance_ids == object_id
    return _caption_from_views(object_id, scene.instances[object_id], member, views, clients, cfg)


def caption_scene(
    scene: ScenePointCloud,
    cameras: Sequence[Camera],
    clients: CaptionClients,
    cfg: CaptionConfig,
    root_seed: int,
) -> tuple[list[LanguageRecord], list[dict]]:
    """One object-caption record per visible object, plus an audit entry per
    object (selected candidates, or the reason it was skipped)."""
    if not cameras:
        raise ConfigError("captioning needs at least one camera")
    views = scene_visibility(scene.xyz, cameras, cfg.zbuf_res)
    records, audit = [], []
    for oid in sorted(scene.instances):
        label = scene.instances[oid]
        if label in cfg.skip_labels:
            continue
        try:
            cap = _caption_from_views(oid, label, scene.instance_ids == oid, views, clients, cfg)
        except ObjectNeverVisible as exc:
            log.warning("%s: %s, skipped", scene.scene_id, exc)
            audit.append({"object_id": oid, "label": label, "skipped": "never-visible"})
            continue
        except ClientError as exc:
            log.warning("%s: %s, skipped", scene.scene_id, exc)
            audit.append({"object_id": oid, "label": label, "skipped": "client-error"})
            continue
        records.append(
            LanguageRecord(
                scene_id=scene.scene_id,
                kind="object_caption",
                text=cap.text,
                source="summary",
                seed=derive_seed(root_seed, scene.scene_id, "caption", oid),
                target_id=oid,
                flags=cap.flags,
                template="caption",
            )
        )
        audit.append({"object_id": oid, "label": label, "selected": [c.to_dict() for c in cap.selected]})
    return records, audit
