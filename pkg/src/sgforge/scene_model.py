"""Core domain types shared by every pipeline stage.

Units: meters for lengths, radians for angles. Degrees appear only in
serialized graph files.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import DataError

Vec3 = tuple[float, float, float]


# ---------------------------------------------------------------------------
# Relations
# ---------------------------------------------------------------------------


class RelationCategory(str, enum.Enum):
    IN_CONTACT_VERTICAL = "in-contact-vertical"
    NON_CONTACT_VERTICAL = "non-contact-vertical"
    HORIZONTAL = "horizontal"
    MULTI_OBJECT = "multi-object"


class RelationType(str, enum.Enum):
    SUPPORTED_BY = "supported-by"
    EMBEDDED_INTO = "embedded-into"
    PLACED_IN = "placed-in"
    INSIDE = "inside"

    HANGING_ON = "hanging-on"
    AFFIXED_ON = "affixed-on"
    MOUNTED_ON = "mounted-on"
    ABOVE = "above"
    BELOW = "below"
    HIGHER_THAN = "higher-than"
    LOWER_THAN = "lower-than"

    NEAR_LEFT_OF = "near-left-of"
    FAR_LEFT_OF = "far-left-of"
    NEAR_RIGHT_OF = "near-right-of"
    FAR_RIGHT_OF = "far-right-of"
    BEHIND = "behind"
    IN_FRONT_OF = "in-front-of"
    CLOSE_TO = "close-to"
    ADJACENT_TO = "adjacent-to"
    BESIDES = "besides"
    NEXT_TO = "next-to"

    BETWEEN = "between"
    ALIGNED = "aligned"

    @property
    def category(self) -> RelationCategory:
        return _CATEGORY[self]

    @property
    def table_type(self) -> str:
        """Name in the 21-entry relation taxonomy, where near and far variants
        of left and right are one type each."""
        return _TABLE_TYPE.get(self, self.value)

    @classmethod
    def parse(cls, text: str) -> "RelationType":
        try:
            return cls(text.strip().lower().replace("_", "-").replace(" ", "-"))
        except ValueError:
            raise ValueError(f"unknown relation type {text!r}") from None

    def __str__(self) -> str:
        return self.value


R = RelationType
_CATEGORY = {
    **{r: RelationCategory.IN_CONTACT_VERTICAL for r in (R.SUPPORTED_BY, R.EMBEDDED_INTO, R.PLACED_IN, R.INSIDE)},
    **{
        r: RelationCategory.NON_CONTACT_VERTICAL
        for r in (R.HANGING_ON, R.AFFIXED_ON, R.MOUNTED_ON, R.ABOVE, R.BELOW, R.HIGHER_THAN, R.LOWER_THAN)
    },
    **{
        r: RelationCategory.HORIZONTAL
        for r in (
            R.NEAR_LEFT_OF, R.FAR_LEFT_OF, R.NEAR_RIGHT_OF, R.FAR_RIGHT_OF, R.BEHIND,
            R.IN_FRONT_OF, R.CLOSE_TO, R.ADJACENT_TO, R.BESIDES, R.NEXT_TO,
        )
    },
    **{r: RelationCategory.MULTI_OBJECT for r in (R.BETWEEN, R.ALIGNED)},
}

_TABLE_TYPE = {
    R.NEAR_LEFT_OF: "left-of",
    R.FAR_LEFT_OF: "left-of",
    R.NEAR_RIGHT_OF: "right-of",
    R.FAR_RIGHT_OF: "right-of",
}
TABLE_TYPES = tuple(dict.fromkeys(_TABLE_TYPE.get(r, r.value) for r in R))

# Relations whose converse is emitted alongside them.
MIRROR = {
    R.ABOVE: R.BELOW,
    R.BELOW: R.ABOVE,
    R.HIGHER_THAN: R.LOWER_THAN,
    R.LOWER_THAN: R.HIGHER_THAN,
    R.NEAR_LEFT_OF: R.NEAR_RIGHT_OF,
    R.NEAR_RIGHT_OF: R.NEAR_LEFT_OF,
    R.FAR_LEFT_OF: R.FAR_RIGHT_OF,
    R.FAR_RIGHT_OF: R.FAR_LEFT_OF,
    R.BEHIND: R.IN_FRONT_OF,
    R.IN_FRONT_OF: R.BEHIND,
}

LEFT_OF = frozenset({R.NEAR_LEFT_OF, R.FAR_LEFT_OF})
RIGHT_OF = frozenset({R.NEAR_RIGHT_OF, R.FAR_RIGHT_OF})
PROXIMITY_RELATIONS = (R.CLOSE_TO, R.ADJACENT_TO, R.BESIDES, R.NEXT_TO)


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def _interval_overlap(lo1: float, hi1: float, lo2: float, hi2: float) -> float:
    return max(0.0, min(hi1, hi2) - max(lo1, lo2))


def _interval_gap(lo1: float, hi1: float, lo2: float, hi2: float) -> float:
    return max(0.0, lo2 - hi1, lo1 - hi2)


def _axis_fraction(lo: float, hi: float, olo: float, ohi: float) -> float:
    # Share of [lo, hi] covered by [olo, ohi]; a zero-length interval counts
    # as fully covered when it lies inside the other one.
    extent = hi - lo
    if extent <= 0.0:
        return 1.0 if olo <= lo <= ohi else 0.0
    return _interval_overlap(lo, hi, olo, ohi) / extent


@dataclass(frozen=True)
class AABB:
    min_corner: Vec3
    max_corner: Vec3

    def __post_init__(self):
        lo = tuple(float(v) for v in self.min_corner)
        hi = tuple(float(v) for v in self.max_corner)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("AABB corners must be 3-vectors")
        if not all(math.isfinite(v) for v in lo + hi):
            raise ValueError("AABB corners must be finite")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"AABB min {lo} exceeds max {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @classmethod
    def from_points(cls, xyz: np.ndarray) -> "AABB":
        return cls(tuple(xyz.min(axis=0)), tuple(xyz.max(axis=0)))

    @property
    def center(self) -> Vec3:
        return tuple((a + b) / 2.0 for a, b in zip(self.min_corner, self.max_corner))

    @property
    def size(self) -> Vec3:
        return tuple(b - a for a, b in zip(self.min_corner, self.max_corner))

    @property
    def volume(self) -> float:
        sx, sy, sz = self.size
        return sx * sy * sz

    @property
    def footprint_area(self) -> float:
        sx, sy, _ = self.size
        return sx * sy

    def contains_point(self, p: Sequence[float]) -> bool:
        return all(a <= v <= b for a, v, b in zip(self.min_corner, p, self.max_corner))

    def translated(self, offset: Sequence[float]) -> "AABB":
        return AABB(
            tuple(a + o for a, o in zip(self.min_corner, offset)),
            tuple(b + o for b, o in zip(self.max_corner, offset)),
        )

    def scaled(self, s: float) -> "AABB":
        return AABB(tuple(a * s for a in self.min_corner), tuple(b * s for b in self.max_corner))

    def union(self, other: "AABB") -> "AABB":
        return AABB(
            tuple(min(a, b) for a, b in zip(self.min_corner, other.min_corner)),
            tuple(max(a, b) for a, b in zip(self.max_corner, other.max_corner)),
        )

    # -- pairwise measures ---------------------------------------------------

    def containment_in(self, other: "AABB") -> float:
        """Fraction of this box's volume lying inside ``other``.

        Degenerate axes are handled per axis, so a flat box falls back to
        its footprint area and a point to a membership test.
        """
        frac = 1.0
        for k in range(3):
            frac *= _axis_fraction(self.min_corner[k], self.max_corner[k], other.min_corner[k], other.max_corner[k])
        return frac

    def footprint_fraction_in(self, other: "AABB") -> float:
        """Fraction of this box's XY footprint covered by ``other``'s footprint."""
        frac = 1.0
        for k in range(2):
            frac *= _axis_fraction(self.min_corner[k], self.max_corner[k], other.min_corner[k], other.max_corner[k])
        return frac

    def footprint_overlap_area(self, other: "AABB") -> float:
        return _interval_overlap(
            self.min_corner[0], self.max_corner[0], other.min_corner[0], other.max_corner[0]
        ) * _interval_overlap(self.min_corner[1], self.max_corner[1], other.min_corner[1], other.max_corner[1])

    def footprints_overlap(self, other: "AABB") -> bool:
        """True when the XY rectangles share interior (touching edges do not count)."""
        return all(
            min(self.max_corner[k], other.max_corner[k]) > max(self.min_corner[k], other.min_corner[k])
            for k in range(2)
        )

    def xy_gap(self, other: "AABB") -> float:
        gx = _interval_gap(self.min_corner[0], self.max_corner[0], other.min_corner[0], other.max_corner[0])
        gy = _interval_gap(self.min_corner[1], self.max_corner[1], other.min_corner[1], other.max_corner[1])
        return math.hypot(gx, gy)

    def z_overlap(self, other: "AABB") -> float:
        return _interval_overlap(self.min_corner[2], self.max_corner[2], other.min_corner[2], other.max_corner[2])

    def footprint_within(self, other: "AABB") -> bool:
        return all(
            other.min_corner[k] <= self.min_corner[k] and self.max_corner[k] <= other.max_corner[k] for k in range(2)
        )


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointRecord:
    x: float
    y: float
    z: float
    r: int
    g: int
    b: int
    instance_id: int
    semantic_id: int


def _frozen(arr: np.ndarray, dtype, shape_tail: tuple) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    if out.ndim == 1 and shape_tail:
        out = out.reshape((-1,) + shape_tail)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ScenePointCloud:
    """An annotated scan stored column-wise.

    ``xyz`` is (N, 3) float64, ``rgb`` is (N, 3) int64, the id columns are
    (N,) int64. Arrays are copied and made read-only on construction.
    """

    scene_id: str
    xyz: np.ndarray
    rgb: np.ndarray
    instance_ids: np.ndarray
    semantic_ids: np.ndarray
    instances: Mapping[int, str]
    room_type: Optional[str] = None
    source_dataset: str = "unknown"

    def __post_init__(self):
        object.__setattr__(self, "xyz", _frozen(self.xyz, np.float64, (3,)))
        object.__setattr__(self, "rgb", _frozen(self.rgb, np.int64, (3,)))
        object.__setattr__(self, "instance_ids", _frozen(self.instance_ids, np.int64, ()))
        object.__setattr__(self, "semantic_ids", _frozen(self.semantic_ids, np.int64, ()))
        n = len(self.xyz)
        if self.rgb.shape != (n, 3) or self.instance_ids.shape != (n,) or self.semantic_ids.shape != (n,):
            raise ValueError("point columns have inconsistent lengths")
        object.__setattr__(
            self, "instances", MappingProxyType({int(k): str(v) for k, v in sorted(self.instances.items())})
        )

    @classmethod
    def from_rows(cls, scene_id: str, rows, instances: Mapping[int, str], **kw) -> "ScenePointCloud":
        """Build from an (N, 8) table of ``x y z r g b instance_id semantic_id``."""
        table = np.asarray(rows, dtype=np.float64).reshape(-1, 8)
        return cls(
            scene_id=scene_id,
            xyz=table[:, 0:3],
            rgb=np.rint(table[:, 3:6]).astype(np.int64),
            instance_ids=np.rint(table[:, 6]).astype(np.int64),
            semantic_ids=np.rint(table[:, 7]).astype(np.int64),
            instances=instances,
            **kw,
        )

    def __len__(self) -> int:
        return len(self.xyz)

    def point(self, i: int) -> PointRecord:
        x, y, z = (float(v) for v in self.xyz[i])
        r, g, b = (int(v) for v in self.rgb[i])
        return PointRecord(x, y, z, r, g, b, int(self.instance_ids[i]), int(self.semantic_ids[i]))

    def rows(self) -> np.ndarray:
        return np.column_stack([self.xyz, self.rgb, self.instance_ids, self.semantic_ids]).astype(np.float64)

    def select(self, mask_or_index) -> "ScenePointCloud":
        """Subset of points; the instance table is kept whole."""
        return ScenePointCloud(
            scene_id=self.scene_id,
            xyz=self.xyz[mask_or_index],
            rgb=self.rgb[mask_or_index],
            instance_ids=self.instance_ids[mask_or_index],
            semantic_ids=self.semantic_ids[mask_or_index],
            instances=dict(self.instances),
            room_type=self.room_type,
            source_dataset=self.source_dataset,
        )

    def replace(self, **changes) -> "ScenePointCloud":
        fields = dict(
            scene_id=self.scene_id,
            xyz=self.xyz,
            rgb=self.rgb,
            instance_ids=self.instance_ids,
            semantic_ids=self.semantic_ids,
            instances=dict(self.instances),
            room_type=self.room_type,
            source_dataset=self.source_dataset,
        )
        fields.update(changes)
        return ScenePointCloud(**fields)

    def instance_points(self, instance_id: int) -> np.ndarray:
        return self.xyz[self.instance_ids == instance_id]


@dataclass(frozen=True)
class Violation:
    invariant: str
    ids: tuple
    detail: str

    def __str__(self) -> str:
        shown = ", ".join(str(i) for i in self.ids[:10])
        more = f" (+{len(self.ids) - 10} more)" if len(self.ids) > 10 else ""
        return f"{self.invariant}: {self.detail} [{shown}{more}]"


def validate_scene(scene: ScenePointCloud) -> list[Violation]:
    """Check the point-cloud invariants. Never raises.

    Point-level problems are aggregated into one violation per invariant;
    ``ids`` holds point indices for those and instance ids otherwise.
    """
    out: list[Violation] = []
    n = len(scene)
    if n < 1:
        out.append(Violation("non_empty", (), "scene has no points"))
        return out

    bad = np.flatnonzero(~np.isfinite(scene.xyz).all(axis=1))
    if bad.size:
        out.append(Violation("finite_coordinates", tuple(int(i) for i in bad), "non-finite coordinates at points"))

    bad = np.flatnonzero(((scene.rgb < 0) | (scene.rgb > 255)).any(axis=1))
    if bad.size:
        out.append(Violation("color_range", tuple(int(i) for i in bad), "color channel outside 0-255 at points"))

    bad = np.flatnonzero((scene.instance_ids < 0) | (scene.semantic_ids < 0))
    if bad.size:
        out.append(Violation("non_negative_ids", tuple(int(i) for i in bad), "negative id at points"))

    present = np.unique(scene.instance_ids)
    unknown = sorted(int(i) for i in present if int(i) not in scene.instances)
    if unknown:
        out.append(Violation("instance_declared", tuple(unknown), "points reference undeclared instance ids"))

    # Every point of an instance carries the same semantic id.
    order = np.lexsort((scene.semantic_ids, scene.instance_ids))
    inst = scene.instance_ids[order]
    sem = scene.semantic_ids[order]
    split = np.flatnonzero(np.diff(inst)) + 1
    mixed = [int(g[0]) for g, s in zip(np.split(inst, split), np.split(sem, split)) if s[0] != s[-1]]
    if mixed:
        out.append(Violation("semantic_consistent", tuple(mixed), "instances with mixed semantic ids"))
    return out


# ---------------------------------------------------------------------------
# Graph types
# ---------------------------------------------------------------------------

FLOOR_LEVEL = -1


@dataclass(frozen=True)
class ObjectNode:
    """One object instance. ``level`` is None until levels are assigned."""

    id: int
    label: str
    bbox: AABB
    point_count: int = 0
    level: Optional[int] = None

    @property
    def centroid(self) -> Vec3:
        return self.bbox.center

    @property
    def size(self) -> Vec3:
        return self.bbox.size

    def with_level(self, level: Optional[int]) -> "ObjectNode":
        return ObjectNode(self.id, self.label, self.bbox, self.point_count, level)


def node_from_instance(scene: ScenePointCloud, instance_id: int) -> ObjectNode:
    instance_id = int(instance_id)
    if instance_id not in scene.instances:
        raise DataError(f"unknown instance id {instance_id}")
    pts = scene.instance_points(instance_id)
    if len(pts) == 0:
        raise DataError(f"instance {instance_id} has no points")
    return ObjectNode(instance_id, scene.instances[instance_id], AABB.from_points(pts), len(pts))


def nodes_from_scene(scene: ScenePointCloud) -> list[ObjectNode]:
    """One node per instance that owns at least one point, sorted by id."""
    if len(scene) == 0:
        return []
    order = np.argsort(scene.instance_ids, kind="stable")
    ids = scene.instance_ids[order]
    xyz = scene.xyz[order]
    starts = np.flatnonzero(np.r_[True, np.diff(ids) != 0])
    mins = np.minimum.reduceat(xyz, starts, axis=0)
    maxs = np.maximum.reduceat(xyz, starts, axis=0)
    counts = np.diff(np.r_[starts, len(ids)])
    nodes = []
    for k, s in enumerate(starts):
        iid = int(ids[s])
        if iid not in scene.instances:
            raise DataError(f"unknown instance id {iid}")
        nodes.append(ObjectNode(iid, scene.instances[iid], AABB(tuple(mins[k]), tuple(maxs[k])), int(counts[k])))
    return nodes


@dataclass(frozen=True)
class EdgeGeometry:
    distance: float
    theta_h: float
    theta_v: float
    proximity: Optional[str] = None  # "adjacent" | "close" | None, horizontal edges only


def edge_geometry(source: ObjectNode, target: ObjectNode, proximity: Optional[str] = None) -> EdgeGeometry:
    """Geometry of the displacement from ``target`` (the anchor) to ``source``."""
    (sx, sy, sz), (tx, ty, tz) = source.centroid, target.centroid
    dx, dy, dz = sx - tx, sy - ty, sz - tz
    return EdgeGeometry(
        distance=math.sqrt(dx * dx + dy * dy + dz * dz),
        theta_h=math.atan2(dy, dx),
        theta_v=math.atan2(dz, math.hypot(dx, dy)),
        proximity=proximity,
    )


@dataclass(frozen=True, order=True)
class Edge:
    """Directed relation ``source <relation> target``: the source is the object
    being described, the target is its anchor."""

    source: int
    target: int
    relation: RelationType
    geom: EdgeGeometry = field(compare=False)

    @property
    def key(self) -> tuple[int, int, str]:
        return (self.source, self.target, self.relation.value)


@dataclass(frozen=True)
class MultiRelation:
    kind: RelationType  # BETWEEN or ALIGNED
    anchors: tuple[int, ...]
    target: Optional[int] = None
    axis: Optional[str] = None  # "X" | "Y" for aligned

    def __post_init__(self):
        object.__setattr__(self, "anchors", tuple(int(a) for a in self.anchors))
        if self.kind is RelationType.BETWEEN:
            if self.target is None or len(self.anchors) != 2:
                raise ValueError("between needs a target and exactly 2 anchors")
        elif self.kind is RelationType.ALIGNED:
            if len(self.anchors) < 3 or self.axis not in ("X", "Y"):
                raise ValueError("aligned needs >= 3 members and an axis of X or Y")
        else:
            raise ValueError(f"{self.kind} is not a multi-object relation")

    @property
    def sort_key(self) -> tuple:
        return (self.kind.value, -1 if self.target is None else self.target, self.anchors, self.axis or "")


@dataclass(frozen=True)
class SceneGraph:
    scene_id: str
    nodes: tuple[ObjectNode, ...]
    edges: tuple[Edge, ...]
    multi: tuple[MultiRelation, ...] = ()
    config_digest: str = ""
    seed: int = 0
    room_type: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=lambda e: e.key)))
        object.__setattr__(self, "multi", tuple(sorted(self.multi, key=lambda m: m.sort_key)))

    def node(self, node_id: int) -> ObjectNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def node_map(self) -> dict[int, ObjectNode]:
        return {n.id: n for n in self.nodes}

    def relation_multiset(self) -> Counter:
        """Relations as a multiset of hashable tuples (geometry excluded)."""
        counts: Counter = Counter(e.key for e in self.edges)
        counts.update(("multi", m.kind.value, m.target, m.anchors, m.axis) for m in self.multi)
        return counts


def validate_graph(graph: SceneGraph) -> list[Violation]:
    out: list[Violation] = []
    ids = [n.id for n in graph.nodes]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        out.append(Violation("unique_node_ids", tuple(dup), "duplicate node ids"))
    nodes = graph.node_map
    dangling = sorted({e.key for e in graph.edges if e.source not in nodes or e.target not in nodes})
    if dangling:
        out.append(Violation("edge_endpoints", tuple(dangling), "edges reference missing nodes"))
    loops = sorted({e.key for e in graph.edges if e.source == e.target})
    if loops:
        out.append(Violation("no_self_edges", tuple(loops), "self edges"))
    gaps = []
    for e in graph.edges:
        if e.source in nodes and e.target in nodes:
            ls, lt = nodes[e.source].level, nodes[e.target].level
            if ls is None or lt is None or abs(ls - lt) > 1:
                gaps.append(e.key)
    if gaps:
        out.append(Violation("level_gap", tuple(gaps), "edges spanning more than one level"))
    parents: dict[int, int] = {}
    multi_parent = set()
    for e in graph.edges:
        if e.relation.category is RelationCategory.IN_CONTACT_VERTICAL:
            if e.source in parents:
                multi_parent.add(e.source)
            parents[e.source] = e.target
    if multi_parent:
        out.append(Violation("single_parent", tuple(sorted(multi_parent)), "nodes with several in-contact parents"))
    for m in graph.multi:
        members = m.anchors + ((m.target,) if m.target is not None else ())
        if any(i not in nodes for i in members):
            out.append(Violation("multi_endpoints", members, "multi-object relation references missing nodes"))
    return out
