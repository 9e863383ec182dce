"""Scene loading and preprocessing: subsampling, normalization, label alignment, filtering."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np
from plyfile import PlyData, PlyElement

from .errors import ConfigError, DataError
from .scene_model import ScenePointCloud, validate_scene

logger = logging.getLogger(__name__)

PLY_PROPERTIES = ("x", "y", "z", "red", "green", "blue", "instance_id", "semantic_id")


@dataclass(frozen=True)
class IngestConfig:
    max_points: int = 240_000
    min_objects: int = 4
    max_extent_m: float = 25.0
    seed: int = 0
    label_map_path: Optional[str] = None
    floor_labels: frozenset = field(default_factory=lambda: frozenset({"floor"}))

    def __post_init__(self):
        object.__setattr__(self, "floor_labels", frozenset(self.floor_labels))
        if self.max_points < 1:
            raise ConfigError("max_points must be >= 1")
        if self.min_objects < 1:
            raise ConfigError("min_objects must be >= 1")
        if not self.max_extent_m > 0:
            raise ConfigError("max_extent_m must be > 0")


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------


def _checked(scene: ScenePointCloud, origin: str) -> ScenePointCloud:
    problems = validate_scene(scene)
    if problems:
        raise DataError(f"{origin}: invalid scene: " + "; ".join(str(p) for p in problems))
    return scene


def scene_from_dict(doc: Mapping, origin: str = "<dict>") -> ScenePointCloud:
    try:
        instances = {int(k): str(v) for k, v in doc["instances"].items()}
        rows = np.asarray(doc["points"], dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != 8:
            if rows.size == 0:
                rows = rows.reshape(0, 8)
            else:
                raise DataError(f"{origin}: points must be rows of 8 numbers, got shape {rows.shape}")
        scene = ScenePointCloud.from_rows(
            str(doc["scene_id"]),
            rows,
            instances,
            room_type=doc.get("room_type"),
            source_dataset=str(doc.get("source_dataset", "unknown")),
        )
    except KeyError as exc:
        raise DataError(f"{origin}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise DataError(f"{origin}: {exc}") from None
    return _checked(scene, origin)


def scene_to_dict(scene: ScenePointCloud) -> dict:
    points = [
        [float(x), float(y), float(z), int(r), int(g), int(b), int(i), int(s)]
        for (x, y, z), (r, g, b), i, s in zip(
            scene.xyz.tolist(), scene.rgb.tolist(), scene.instance_ids.tolist(), scene.semantic_ids.tolist()
        )
    ]
    return {
        "scene_id": scene.scene_id,
        "source_dataset": scene.source_dataset,
        "room_type": scene.room_type,
        "instances": {str(k): v for k, v in scene.instances.items()},
        "points": points,
    }


def _load_json(path: Path) -> ScenePointCloud:
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: JSON parse error at line {exc.lineno} column {exc.colno} (char {exc.pos})") from None
    return scene_from_dict(doc, str(path))


def _load_ply(path: Path) -> ScenePointCloud:
    try:
        ply = PlyData.read(str(path))
    except Exception as exc:  # plyfile raises several exception types
        raise DataError(f"{path}: PLY parse error: {exc}") from None
    if "vertex" not in ply:
        raise DataError(f"{path}: PLY has no vertex element")
    vertex = ply["vertex"]
    names = {p.name for p in vertex.properties}
    missing = [p for p in PLY_PROPERTIES if p not in names]
    if missing:
        raise DataError(f"{path}: PLY vertex element lacks properties {missing}")
    cols = [np.asarray(vertex[p], dtype=np.float64) for p in PLY_PROPERTIES]
    table = np.column_stack(cols) if cols[0].size else np.zeros((0, 8))

    # Instance labels travel in comment lines: "instance <id> <label>".
    instances: dict[int, str] = {}
    meta: dict[str, str] = {}
    for line in ply.comments:
        parts = line.split(maxsplit=2)
        if len(parts) == 3 and parts[0] == "instance":
            instances[int(parts[1])] = parts[2]
        elif len(parts) >= 2 and parts[0] in ("scene_id", "source_dataset", "room_type"):
            meta[parts[0]] = line.split(maxsplit=1)[1]
    if not instances:
        # No label table: fall back to the semantic id as the label.
        for iid, sid in zip(table[:, 6].astype(np.int64), table[:, 7].astype(np.int64)):
            instances.setdefault(int(iid), str(int(sid)))
    scene = ScenePointCloud.from_rows(
        meta.get("scene_id", path.stem),
        table,
        instances,
        room_type=meta.get("room_type"),
        source_dataset=meta.get("source_dataset", "unknown"),
    )
    return _checked(scene, str(path))


def load_scene(path: Union[str, Path], format: Optional[str] = None) -> ScenePointCloud:
    """Read a canonical JSON or PLY scene and validate it.

    The format defaults to the file suffix.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if not path.exists():
        raise DataError(f"{path}: no such file")
    if fmt == "json":
        return _load_json(path)
    if fmt == "ply":
        return _load_ply(path)
    raise DataError(f"{path}: unsupported scene format {fmt!r}")


def save_scene_json(scene: ScenePointCloud, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), separators=(",", ":")) + "\n", encoding="utf-8")


def save_scene_ply(scene: ScenePointCloud, path: Union[str, Path], binary: bool = True) -> None:
    dtype = [
        ("x", "f8"), ("y", "f8"), ("z", "f8"),
        ("red", "u1"), ("green", "u1"), ("blue", "u1"),
        ("instance_id", "i4"), ("semantic_id", "i4"),
    ]
    data = np.empty(len(scene), dtype=dtype)
    data["x"], data["y"], data["z"] = scene.xyz.T
    data["red"], data["green"], data["blue"] = np.clip(scene.rgb, 0, 255).T
    data["instance_id"] = scene.instance_ids
    data["semantic_id"] = scene.semantic_ids
    comments = [f"scene_id {scene.scene_id}", f"source_dataset {scene.source_dataset}"]
    if scene.room_type:
        comments.append(f"room_type {scene.room_type}")
    comments += [f"instance {k} {v}" for k, v in scene.instances.items()]
    PlyData([PlyElement.describe(data, "vertex")], text=not binary, comments=comments).write(str(path))


def load_label_map(path: Union[str, Path]) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"label map {path} does not exist")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"label map {path}: JSON parse error at line {exc.lineno}") from None
    if not isinstance(doc, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in doc.items()):
        raise ConfigError(f"label map {path} must be a JSON object of strings")
    return dict(doc)


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def subsample(scene: ScenePointCloud, max_points: int, seed: int) -> ScenePointCloud:
    """Cap the point count by seeded uniform sampling without replacement.

    One point per instance is reserved first (the first point of that
    instance in a seeded permutation), and the remainder is filled from
    the same permutation, so no instance disappears. Retained points keep
    their original order.
    """
    if max_points < 1:
        raise ConfigError("max_points must be >= 1")
    n = len(scene)
    if n <= max_points:
        return scene
    n_inst = len(np.unique(scene.instance_ids))
    if max_points < n_inst:
        raise DataError(f"{scene.scene_id}: max_points={max_points} is below the instance count {n_inst}")
    perm = np.random.default_rng(seed).permutation(n)
    _, first = np.unique(scene.instance_ids[perm], return_index=True)
    reserved = np.zeros(n, dtype=bool)
    reserved[first] = True
    rest = perm[~reserved][: max_points - n_inst]
    keep = np.sort(np.concatenate([perm[reserved], rest]))
    return scene.select(keep)


def apply_transform(xyz: np.ndarray, transform: np.ndarray) -> np.ndarray:
    return xyz @ transform[:3, :3].T + transform[:3, 3]


def floor_bbox(scene: ScenePointCloud, floor_labels) -> tuple[np.ndarray, np.ndarray]:
    floor_ids = [i for i, lab in scene.instances.items() if lab in floor_labels]
    mask = np.isin(scene.instance_ids, floor_ids)
    if not mask.any():
        raise DataError(f"{scene.scene_id}: no floor")
    pts = scene.xyz[mask]
    return pts.min(axis=0), pts.max(axis=0)


def normalize(scene: ScenePointCloud, floor_labels=frozenset({"floor"})) -> tuple[ScenePointCloud, np.ndarray]:
    """Center the scene on the floor and turn its longer side onto +X.

    The floor box's XY center and top face go to the origin. When the
    floor box is deeper (Y) than wide (X), the scene is turned -90 degrees
    about Z; ties leave it unrotated. Returns the new scene and the 4x4
    row-major transform that produced it.
    """
    lo, hi = floor_bbox(scene, floor_labels)
    ext = hi - lo
    if ext[0] <= 0 or ext[1] <= 0:
        raise DataError(f"{scene.scene_id}: degenerate floor with XY extent {ext[:2].tolist()}")
    center = np.array([(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, hi[2]])
    if ext[1] > ext[0]:
        rot = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    else:
        rot = np.eye(3)
    transform = np.eye(4)
    transform[:3, :3] = rot
    transform[:3, 3] = -rot @ center
    return scene.replace(xyz=apply_transform(scene.xyz, transform)), transform


@dataclass(frozen=True)
class RemapReport:
    mapped: dict  # source label -> canonical label
    unmapped: tuple  # labels kept verbatim


def align_semantics(
    scene: ScenePointCloud, label_map: Mapping[str, str], vocabulary: Optional[list[str]] = None
) -> tuple[ScenePointCloud, RemapReport]:
    """Rename instance labels through ``label_map`` and re-index semantic ids.

    Semantic ids index ``vocabulary`` (default: the sorted set of label-map
    values). Labels outside the vocabulary get id ``len(vocabulary)``.
    """
    vocab = sorted(set(label_map.values())) if vocabulary is None else list(vocabulary)
    index = {lab: i for i, lab in enumerate(vocab)}
    other = len(vocab)
    new_instances = {}
    mapped, unmapped = {}, set()
    for iid, lab in scene.instances.items():
        if lab in label_map:
            new_instances[iid] = label_map[lab]
            mapped[lab] = label_map[lab]
        else:
            new_instances[iid] = lab
            unmapped.add(lab)
    ids = np.array(sorted(new_instances), dtype=np.int64)
    sem = np.array([index.get(new_instances[i], other) for i in ids.tolist()], dtype=np.int64)
    pos = np.searchsorted(ids, scene.instance_ids)
    pos = np.clip(pos, 0, max(len(ids) - 1, 0))
    semantic_ids = sem[pos] if len(ids) else scene.semantic_ids
    out = scene.replace(instances=new_instances, semantic_ids=semantic_ids)
    return out, RemapReport(dict(sorted(mapped.items())), tuple(sorted(unmapped)))


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    rule: Optional[str] = None
    value: Optional[float] = None

    def to_dict(self) -> dict:
        return {"keep": self.keep, "rule": self.rule, "value": self.value}


def object_count(scene: ScenePointCloud, floor_labels) -> int:
    present = set(np.unique(scene.instance_ids).tolist())
    return sum(1 for i in present if scene.instances.get(i) not in floor_labels)


def xy_diagonal(scene: ScenePointCloud) -> float:
    ext = scene.xyz[:, :2].max(axis=0) - scene.xyz[:, :2].min(axis=0)
    return float(math.hypot(ext[0], ext[1]))


def filter_scene(scene: ScenePointCloud, cfg: IngestConfig) -> FilterDecision:
    count = object_count(scene, cfg.floor_labels)
    if count < cfg.min_objects:
        return FilterDecision(False, "min_objects", count)
    diag = xy_diagonal(scene)
    if diag > cfg.max_extent_m:
        return FilterDecision(False, "max_extent", diag)
    return FilterDecision(True)


@dataclass(frozen=True)
class IngestResult:
    scene: ScenePointCloud
    transform: np.ndarray
    decision: FilterDecision
    remap: RemapReport
    points_in: int

    def report(self) -> dict:
        return {
            "scene_id": self.scene.scene_id,
            "points_in": self.points_in,
            "points_out": len(self.scene),
            "transform": [float(v) for v in self.transform.ravel()],
            "unmapped_labels": list(self.remap.unmapped),
            **self.decision.to_dict(),
        }


def preprocess(scene: ScenePointCloud, cfg: IngestConfig, label_map: Mapping[str, str], seed: int) -> IngestResult:
    """subsample -> normalize -> align_semantics -> filter."""
    points_in = len(scene)
    scene = subsample(scene, cfg.max_points, seed)
    scene, transform = normalize(scene, cfg.floor_labels)
    scene, remap = align_semantics(scene, label_map)
    return IngestResult(scene, transform, filter_scene(scene, cfg), remap, points_in)
