"""Seeded synthetic indoor scenes built from furniture boxes.

Box corners sit on a 1/32 m grid, which keeps every box coordinate exactly
representable: translating by whole meters or scaling by powers of two
changes no pairwise comparison. Points are sampled on box surfaces and
every box contributes its 8 corners, so instance bounding boxes equal the
designed boxes exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .ingest import save_scene_json
from .scene_model import AABB, ScenePointCloud
from .seeding import derive_seed

GRID = 1.0 / 32.0
WALL_T = 0.125
WALL_H = 2.5

# Labels as they appear in the synthetic "source dataset"; a few differ from
# the canonical vocabulary on purpose so label alignment has work to do.
LABEL_MAP = {
    "night stand": "nightstand",
    "sofa chair": "armchair",
    "television": "tv",
    "trash bin": "bin",
}

VOCABULARY = sorted(
    {
        "floor", "wall", "table", "chair", "cup", "book", "laptop", "lamp", "bed", "nightstand",
        "dresser", "cabinet", "vase", "counter", "sink", "basket", "bin", "umbrella", "plant",
        "sofa", "armchair", "coffee table", "tv", "painting", "mirror", "shelf", "bookshelf",
        "stool", "bench", "rug", "monitor", "desk", "pillow", "bowl", "clock",
    }
    | set(LABEL_MAP)
)

_BASE_COLORS = {
    "floor": (150, 120, 90), "wall": (230, 230, 225), "table": (120, 80, 40), "chair": (90, 60, 30),
    "bed": (200, 200, 220), "sofa": (60, 80, 140), "tv": (20, 20, 20), "television": (20, 20, 20),
}


@dataclass
class _Box:
    label: str
    lo: tuple
    hi: tuple


def _q(v: float) -> float:
    return round(v / GRID) * GRID


@dataclass
class _Room:
    width: float
    depth: float
    rng: np.random.Generator
    boxes: list = field(default_factory=list)
    regions: list = field(default_factory=list)  # occupied XY rectangles incl. clearance

    def add(self, label, lo, hi):
        self.boxes.append(_Box(label, tuple(_q(v) for v in lo), tuple(_q(v) for v in hi)))

    def free(self, x0, y0, x1, y1, clearance=0.25) -> bool:
        if x0 < WALL_T + 0.0625 or y0 < 0.0625 or x1 > self.width - 0.0625 or y1 > self.depth - WALL_T - 0.0625:
            return False
        for rx0, ry0, rx1, ry1 in self.regions:
            if x0 < rx1 + clearance and rx0 < x1 + clearance and y0 < ry1 + clearance and ry0 < y1 + clearance:
                return False
        return True

    def place(self, w, d, tries=40):
        """Find a free spot for a w x d footprint; returns its lower corner."""
        for _ in range(tries):
            x0 = _q(self.rng.uniform(WALL_T + 0.0625, max(WALL_T + 0.0625, self.width - w - 0.0625)))
            y0 = _q(self.rng.uniform(0.0625, max(0.0625, self.depth - d - WALL_T - 0.0625)))
            if self.free(x0, y0, x0 + w, y0 + d):
                self.regions.append((x0, y0, x0 + w, y0 + d))
                return x0, y0
        return None

    def pick(self, options):
        return options[int(self.rng.integers(len(options)))]

    def size(self, lo, hi):
        return _q(self.rng.uniform(lo, hi))


# -- furniture modules -------------------------------------------------------
# Each returns the number of objects it added (0 when it did not fit).


def _dining(room: _Room) -> int:
    tw, td, th = room.size(1.0, 1.5), room.size(0.75, 1.0), 0.75
    n_chairs = int(room.rng.integers(0, 4))
    cw = 0.5
    span_w = max(tw, n_chairs * (cw + 0.125))
    spot = room.place(span_w, td + 0.0625 + cw)
    if spot is None:
        return 0
    x0, y0 = spot
    ty0 = y0 + cw + 0.0625
    room.add("table", (x0, ty0, 0.0), (x0 + tw, ty0 + td, th))
    count = 1
    chair_label = room.pick(["chair", "chair", "stool"])
    for k in range(n_chairs):
        cx = x0 + k * (cw + 0.125)
        room.add(chair_label, (cx, y0, 0.0), (cx + cw, y0 + cw, 0.875))
        count += 1
    # tabletop items, sometimes stacked
    items = int(room.rng.integers(0, 4))
    # the second slot sits 0.5 m from the first: close, but not adjacent
    slots = [(x0 + 0.125, ty0 + 0.125), (x0 + 0.625, ty0 + 0.125), (x0 + tw - 0.375, ty0 + td - 0.375)]
    for k in range(items):
        sx, sy = slots[k]
        label = room.pick(["cup", "book", "laptop", "bowl", "vase"])
        if label == "book" and room.rng.random() < 0.5:
            room.add("book", (sx, sy, th), (sx + 0.25, sy + 0.1875, th + 0.0625))
            room.add("cup", (sx + 0.0625, sy + 0.03125, th + 0.0625), (sx + 0.1875, sy + 0.15625, th + 0.1875))
            count += 2
        else:
            room.add(label, (sx, sy, th), (sx + 0.1875, sy + 0.1875, th + 0.15625))
            count += 1
    if room.rng.random() < 0.5:
        lx = _q(x0 + tw / 2 - 0.1875)
        ly = _q(ty0 + td / 2 - 0.1875)
        room.add("lamp", (lx, ly, 1.75), (lx + 0.375, ly + 0.375, 2.0))
        count += 1
    return count


def _bed(room: _Room) -> int:
    bw, bd, ns = room.size(1.5, 2.0), 2.0, 0.5
    gap = room.pick([0.0625, 0.125])
    spot = room.place(bw + 2 * (ns + gap), bd)
    if spot is None:
        return 0
    x0, y0 = spot
    room.add("bed", (x0 + ns + gap, y0, 0.0), (x0 + ns + gap + bw, y0 + bd, 0.5))
    left = room.pick(["night stand", "nightstand"])
    right = room.pick(["night stand", "nightstand", "dresser"])
    room.add(left, (x0, y0 + bd - ns, 0.0), (x0 + ns, y0 + bd, 0.5))
    rx = x0 + ns + gap + bw + gap
    room.add(right, (rx, y0 + bd - ns, 0.0), (rx + ns, y0 + bd, 0.5))
    count = 3
    if room.rng.random() < 0.6:
        room.add("lamp", (x0 + 0.125, y0 + bd - 0.375, 0.5), (x0 + 0.375, y0 + bd - 0.125, 0.875))
        count += 1
    if room.rng.random() < 0.5:
        room.add("pillow", (x0 + ns + gap + 0.25, y0 + bd - 0.5, 0.5), (x0 + ns + gap + 0.75, y0 + bd - 0.1875, 0.625))
        count += 1
    return count


def _cabinet(room: _Room) -> int:
    w, d, h = room.size(0.75, 1.25), 0.5, room.size(0.75, 1.25)
    spot = room.place(w, d)
    if spot is None:
        return 0
    x0, y0 = spot
    room.add("cabinet", (x0, y0, 0.0), (x0 + w, y0 + d, h))
    count = 1
    if room.rng.random() < 0.7:
        room.add("book", (x0 + 0.125, y0 + 0.125, 0.125), (x0 + 0.375, y0 + 0.3125, 0.375))
        count += 1
    if room.rng.random() < 0.5:
        room.add(room.pick(["vase", "clock", "plant"]), (x0 + 0.125, y0 + 0.125, h), (x0 + 0.3125, y0 + 0.3125, h + 0.25))
        count += 1
    return count


def _counter(room: _Room) -> int:
    w, d, h = room.size(1.25, 2.0), 0.625, 0.875
    spot = room.place(w, d)
    if spot is None:
        return 0
    x0, y0 = spot
    room.add("counter", (x0, y0, 0.0), (x0 + w, y0 + d, h))
    room.add("sink", (x0 + 0.25, y0 + 0.125, h - 0.1875), (x0 + 0.75, y0 + 0.5, h + 0.0625))
    return 2


def _basket(room: _Room) -> int:
    spot = room.place(0.4375, 0.4375)
    if spot is None:
        return 0
    x0, y0 = spot
    label = room.pick(["basket", "trash bin", "bucket"])
    room.add(label, (x0, y0, 0.0), (x0 + 0.4375, y0 + 0.4375, 0.375))
    room.add(room.pick(["umbrella", "plant"]), (x0 + 0.15625, y0 + 0.15625, 0.09375), (x0 + 0.28125, y0 + 0.28125, 1.125))
    return 2


def _sofa(room: _Room) -> int:
    sw, sd = room.size(1.75, 2.25), 0.875
    spot = room.place(sw, sd + 0.375 + 0.5)
    if spot is None:
        return 0
    x0, y0 = spot
    room.add("sofa", (x0, y0 + 0.875, 0.0), (x0 + sw, y0 + 0.875 + sd, 0.8125))
    room.add("coffee table", (x0 + 0.25, y0, 0.0), (x0 + sw - 0.25, y0 + 0.5, 0.4375))
    count = 2
    if room.rng.random() < 0.5:
        spot2 = room.place(0.75, 0.75)
        if spot2 is not None:
            ax, ay = spot2
            room.add("sofa chair", (ax, ay, 0.0), (ax + 0.75, ay + 0.75, 0.8125))
            count += 1
    return count


def _standing(room: _Room) -> int:
    label = room.pick(["lamp", "bookshelf", "plant", "bench", "rug"])
    dims = {"lamp": (0.375, 0.375, 1.5), "bookshelf": (0.875, 0.375, 1.75), "plant": (0.4375, 0.4375, 0.875),
            "bench": (1.25, 0.4375, 0.4375), "rug": (1.5, 1.0, 0.03125)}[label]
    spot = room.place(dims[0], dims[1])
    if spot is None:
        return 0
    x0, y0 = spot
    room.add(label, (x0, y0, 0.0), (x0 + dims[0], y0 + dims[1], dims[2]))
    return 1


def _wall_items(room: _Room, walls: list) -> int:
    """Items hung on the back wall (y = depth) or on the left wall (x = 0)."""
    count = 0
    n = int(room.rng.integers(1, 4))
    used: list = []
    for _ in range(n):
        label = room.pick(["painting", "painting", "television", "tv", "mirror", "shelf", "clock"])
        w = {"painting": 0.875, "television": 1.25, "tv": 1.25, "mirror": 0.625, "shelf": 1.0, "clock": 0.375}[label]
        h = {"painting": 0.625, "television": 0.75, "tv": 0.75, "mirror": 0.875, "shelf": 0.1875, "clock": 0.375}[label]
        thick = 0.25 if label == "shelf" else 0.0625
        z0 = _q(room.rng.uniform(1.0, 1.75))
        wall = room.pick(walls)
        gap = room.pick([0.0, 0.03125])
        if wall == "back":
            x0 = _q(room.rng.uniform(WALL_T + 0.25, max(WALL_T + 0.25, room.width - w - 0.25)))
            if any(abs(x0 - u) < 1.25 for kind, u in used if kind == "back"):
                continue
            used.append(("back", x0))
            y1 = room.depth - WALL_T - gap
            room.add(label, (x0, y1 - thick, z0), (x0 + w, y1, z0 + h))
            if label == "shelf" and room.rng.random() < 0.7:
                room.add(room.pick(["book", "plant", "vase"]), (x0 + 0.25, y1 - 0.1875, z0 + h), (x0 + 0.5, y1 - 0.0625, z0 + h + 0.25))
                count += 1
        else:
            y0 = _q(room.rng.uniform(0.25, max(0.25, room.depth - WALL_T - w - 0.25)))
            if any(abs(y0 - u) < 1.25 for kind, u in used if kind == "left"):
                continue
            used.append(("left", y0))
            x0 = WALL_T + gap
            room.add(label, (x0, y0, z0), (x0 + thick, y0 + w, z0 + h))
        count += 1
    return count


_MODULES = [_dining, _bed, _cabinet, _counter, _basket, _sofa, _standing, _standing]


def _room_type(labels: set) -> str:
    if "bed" in labels:
        return "bedroom"
    if "counter" in labels:
        return "kitchen"
    if "sofa" in labels:
        return "living room"
    if "table" in labels:
        return "dining room"
    return "room"


def _sample_box_surface(lo, hi, density, rng) -> np.ndarray:
    lo, hi = np.asarray(lo), np.asarray(hi)
    ext = hi - lo
    corners = np.array([[lo[0] if i & 1 == 0 else hi[0], lo[1] if i & 2 == 0 else hi[1], lo[2] if i & 4 == 0 else hi[2]] for i in range(8)])
    faces = []  # (fixed axis, value, area)
    for axis in range(3):
        a, b = [k for k in range(3) if k != axis]
        area = ext[a] * ext[b]
        faces += [(axis, lo[axis], area), (axis, hi[axis], area)]
    areas = np.array([f[2] for f in faces])
    total = areas.sum()
    n = max(24, int(total * density))
    if total <= 0:
        return corners
    which = rng.choice(len(faces), size=n, p=areas / total)
    pts = lo + rng.random((n, 3)) * ext
    for k, (axis, value, _) in enumerate(faces):
        pts[which == k, axis] = value
    pts = np.clip(pts, lo, hi)
    return np.vstack([corners, pts])


def synthetic_scene(
    seed: int,
    index: int = 0,
    min_objects: int = 4,
    max_objects: int = 12,
    density: float = 60.0,
) -> ScenePointCloud:
    """One seeded room with between ``min_objects`` and ``max_objects`` non-floor objects."""
    rng = np.random.default_rng(derive_seed(seed, "synthetic-scene", index))
    for _attempt in range(50):
        width = _q(rng.uniform(4.5, 8.0))
        depth = _q(rng.uniform(3.5, min(width, 6.0)))
        room = _Room(width, depth, rng)
        target = int(rng.integers(min_objects, max_objects + 1))
        walls = ["back"] + (["left"] if rng.random() < 0.6 else [])
        room.add("floor", (0.0, 0.0, -0.0625), (width, depth, 0.0))
        room.add("wall", (0.0, depth - WALL_T, 0.0), (width, depth, WALL_H))
        if "left" in walls:
            room.add("wall", (0.0, 0.0, 0.0), (WALL_T, depth - WALL_T - 0.03125, WALL_H))
        count = len(walls)
        if rng.random() < 0.8 and count < target:
            count += _wall_items(room, walls)
        order = rng.permutation(len(_MODULES))
        for m in order:
            if count >= target:
                break
            count += _MODULES[m](room)
        while count < target:
            added = _standing(room)
            if not added:
                break
            count += added
        if min_objects <= count <= max_objects:
            break
    else:
        raise RuntimeError(f"could not lay out synthetic scene {index}")
    return _points_from_boxes(f"synth_{seed}_{index:04d}", room.boxes, rng, density)


def _points_from_boxes(scene_id: str, boxes: list, rng, density: float) -> ScenePointCloud:
    xyz, rgb, inst, sem = [], [], [], []
    instances = {}
    vocab = {lab: i for i, lab in enumerate(VOCABULARY)}
    for iid, box in enumerate(boxes):
        pts = _sample_box_surface(box.lo, box.hi, density, rng)
        base = np.array(_BASE_COLORS.get(box.label, (128, 128, 128)))
        col = np.clip(base + rng.integers(-12, 13, size=(len(pts), 3)), 0, 255)
        xyz.append(pts)
        rgb.append(col)
        inst.append(np.full(len(pts), iid))
        sem.append(np.full(len(pts), vocab.get(box.label, len(vocab))))
        instances[iid] = box.label
    labels = {b.label for b in boxes}
    return ScenePointCloud(
        scene_id=scene_id,
        xyz=np.vstack(xyz),
        rgb=np.vstack(rgb),
        instance_ids=np.concatenate(inst),
        semantic_ids=np.concatenate(sem),
        instances=instances,
        room_type=_room_type({LABEL_MAP.get(l, l) for l in labels}),
        source_dataset="synthetic",
    )


def scene_from_boxes(scene_id: str, boxes: list[tuple[str, tuple, tuple]], seed: int = 0, density: float = 60.0, room_type=None) -> ScenePointCloud:
    """Point cloud for explicit ``(label, min_corner, max_corner)`` boxes; instance ids follow list order."""
    rng = np.random.default_rng(seed)
    scene = _points_from_boxes(scene_id, [_Box(l, tuple(lo), tuple(hi)) for l, lo, hi in boxes], rng, density)
    return scene.replace(room_type=room_type) if room_type is not None else scene


def synthetic_suite(count: int = 100, seed: int = 0, **kw) -> list[ScenePointCloud]:
    return [synthetic_scene(seed, i, **kw) for i in range(count)]


# -- cameras -----------------------------------------------------------------


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera 4x4 for a camera at ``eye`` facing ``target`` (x right, y down, z forward)."""
    eye, target, up = (np.asarray(v, dtype=float) for v in (eye, target, up))
    f = target - eye
    f /= np.linalg.norm(f)
    right = np.cross(f, up)
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    rot = np.vstack([right, down, f])
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = -rot @ eye
    return m


def synthetic_cameras(scene: ScenePointCloud, views: int = 12, width: int = 160, height: int = 120) -> list[dict]:
    """Cameras on a ring around the room center, in the file schema of the camera loader."""
    lo, hi = scene.xyz.min(axis=0), scene.xyz.max(axis=0)
    cx, cy = (lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2
    radius = 0.35 * min(hi[0] - lo[0], hi[1] - lo[1])
    cams = []
    for k in range(views):
        ang = 2 * math.pi * k / views
        eye = (cx + radius * math.cos(ang), cy + radius * math.sin(ang), 1.6)
        # look across the room, past the center
        tgt = (cx - 1.5 * radius * math.cos(ang), cy - 1.5 * radius * math.sin(ang), 0.5)
        ext = look_at(eye, tgt)
        cams.append(
            {
                "image": f"{scene.scene_id}/view_{k:02d}.jpg",
                "fx": 110.0, "fy": 110.0, "cx": width / 2, "cy": height / 2,
                "width": width, "height": height,
                "extrinsics": [float(v) for v in ext.ravel()],
            }
        )
    return cams


def write_suite(out_dir, count: int = 100, seed: int = 0, views: int = 12) -> list[Path]:
    """Write scenes, cameras and the label map for a synthetic suite."""
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    (out / "cameras").mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        scene = synthetic_scene(seed, i)
        path = out / "scenes" / f"{scene.scene_id}.json"
        save_scene_json(scene, path)
        (out / "cameras" / f"{scene.scene_id}.json").write_text(
            json.dumps(synthetic_cameras(scene, views), indent=1) + "\n", encoding="utf-8"
        )
        paths.append(path)
    identity = {lab: lab for lab in VOCABULARY if lab not in LABEL_MAP}
    (out / "label_map.json").write_text(json.dumps({**identity, **LABEL_MAP}, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return paths
