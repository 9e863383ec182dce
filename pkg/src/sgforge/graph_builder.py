"""Scene graph construction from object boxes.

Passes, in order:

1. one node per instance (box center as centroid);
2. in-contact vertical pass over all ordered pairs; every non-floor node
   keeps at most one in-contact parent;
3. nodes left without a parent are "hangable" and get a non-contact
   vertical pass against every other non-floor node (above/below and
   higher/lower are emitted together with their mirror edge);
4. levels: floor -1, then parent + 1 down every support chain; a hangable
   node takes the level of its first supported non-contact anchor
   (precedence order, then anchor id) or 0; edges spanning more than one
   level are dropped;
5. horizontal pass over every ordered pair of siblings (same parent);
6. multi-object pass (between, aligned);
7. class-conditioned refinement of relation names.

Edges read ``source <relation> target``: the source is the described
object, the target its anchor.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

from .errors import ConfigError, DataError
from .scene_model import (
    FLOOR_LEVEL,
    LEFT_OF,
    MIRROR,
    RIGHT_OF,
    AABB,
    Edge,
    EdgeGeometry,
    MultiRelation,
    ObjectNode,
    RelationCategory,
    RelationType,
    SceneGraph,
    ScenePointCloud,
    edge_geometry,
    nodes_from_scene,
)

R = RelationType

DEFAULT_CONTAINERS = frozenset(
    {"basket", "bin", "bowl", "box", "bucket", "trash can", "vase", "pot", "sink", "bathtub", "crate"}
)


@dataclass(frozen=True)
class GraphConfig:
    eps_contact_m: float = 0.05
    footprint_overlap_min: float = 0.3
    containment_inside: float = 0.95
    containment_embedded: float = 0.5
    container_labels: frozenset = DEFAULT_CONTAINERS
    wall_labels: frozenset = frozenset({"wall"})
    floor_labels: frozenset = frozenset({"floor"})
    hang_gap_m: float = 0.10
    above_overlap_min: float = 0.2
    higher_min_dz_m: float = 0.3
    higher_max_xy_m: float = 2.0
    near_max_m: float = 1.5
    close_max_m: float = 0.5
    adjacent_gap_m: float = 0.2
    aligned_delta_floor_m: float = 0.10
    aligned_delta_scale: float = 0.02
    # "no-in-contact": hangable = no in-contact parent.
    # "no-horizontal": additionally nodes that have no siblings.
    hangable_rule: str = "no-in-contact"
    seed: int = 0

    _LENGTHS = (
        "eps_contact_m", "hang_gap_m", "higher_min_dz_m", "higher_max_xy_m", "near_max_m",
        "close_max_m", "adjacent_gap_m", "aligned_delta_floor_m",
    )

    def __post_init__(self):
        for name in ("container_labels", "wall_labels", "floor_labels"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        numeric = self._LENGTHS + (
            "footprint_overlap_min", "containment_inside", "containment_embedded",
            "above_overlap_min", "aligned_delta_scale",
        )
        for name in numeric:
            if not getattr(self, name) > 0:
                raise ConfigError(f"graph threshold {name} must be > 0")
        if not self.containment_inside > self.containment_embedded:
            raise ConfigError("containment_inside must exceed containment_embedded")
        if self.hangable_rule not in ("no-in-contact", "no-horizontal"):
            raise ConfigError(f"unknown hangable_rule {self.hangable_rule!r}")

    def scaled(self, s: float) -> "GraphConfig":
        """Copy with every length threshold multiplied by ``s``."""
        changes = {name: getattr(self, name) * s for name in self._LENGTHS}
        return GraphConfig(**{**self.to_dict(raw=True), **changes})

    def to_dict(self, raw: bool = False) -> dict:
        d = {k: v for k, v in asdict(self).items()}
        if not raw:
            for k in ("container_labels", "wall_labels", "floor_labels"):
                d[k] = sorted(d[k])
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Predicates
# ---------------------------------------------------------------------------


def vertical_in_contact(target: ObjectNode, anchor: ObjectNode, cfg: GraphConfig) -> Optional[RelationType]:
    t, a = target.bbox, anchor.bbox
    c = t.containment_in(a)
    tvol, avol = t.volume, a.volume
    if c >= cfg.containment_inside and tvol < avol:
        return R.INSIDE
    if cfg.containment_embedded <= c < cfg.containment_inside:
        return R.EMBEDDED_INTO
    if (
        anchor.label in cfg.container_labels
        and t.footprint_within(a)
        and a.min_corner[2] <= t.min_corner[2] <= a.max_corner[2]
    ):
        return R.PLACED_IN
    gap = t.min_corner[2] - a.max_corner[2]
    if (
        abs(gap) <= cfg.eps_contact_m
        and t.min_corner[2] >= a.max_corner[2] - cfg.eps_contact_m
        and t.footprint_fraction_in(a) >= cfg.footprint_overlap_min
    ):
        return R.SUPPORTED_BY
    return None


def _smaller_footprint_overlap(t: AABB, a: AABB) -> float:
    small, big = (t, a) if t.footprint_area <= a.footprint_area else (a, t)
    return small.footprint_fraction_in(big)


def vertical_non_contact(target: ObjectNode, anchor: ObjectNode, cfg: GraphConfig) -> Optional[RelationType]:
    """Non-contact relation of a hangable ``target`` to ``anchor``.

    Never yields affixed-on or mounted-on; those only come from refinement.
    """
    t, a = target.bbox, anchor.bbox
    if anchor.label in cfg.wall_labels and t.xy_gap(a) <= cfg.hang_gap_m and t.z_overlap(a) > 0.0:
        return R.HANGING_ON
    if _smaller_footprint_overlap(t, a) >= cfg.above_overlap_min:
        if t.min_corner[2] >= a.max_corner[2] + cfg.eps_contact_m:
            return R.ABOVE
        if a.min_corner[2] >= t.max_corner[2] + cfg.eps_contact_m:
            return R.BELOW
    if not t.footprints_overlap(a):
        (tx, ty, tz), (ax, ay, az) = t.center, a.center
        if math.hypot(tx - ax, ty - ay) <= cfg.higher_max_xy_m:
            dz = tz - az
            if dz >= cfg.higher_min_dz_m:
                return R.HIGHER_THAN
            if dz <= -cfg.higher_min_dz_m:
                return R.LOWER_THAN
    return None


def horizontal_sector(dx: float, dy: float) -> Optional[str]:
    """Quadrant of the displacement (dx, dy) with 90-degree sectors centered on the axes.

    right (-45, 45], front (45, 135], left (135, 180] U (-180, -135],
    behind (-135, -45]. Decided by component comparisons rather than
    atan2 so that negating the displacement always lands in the opposite
    sector.
    """
    if dx == 0.0 and dy == 0.0:
        return None
    if dx > 0 and -dx < dy <= dx:
        return "right"
    if dy > 0 and -dy <= dx < dy:
        return "front"
    if dx < 0 and dx <= dy < -dx:
        return "left"
    return "behind"


def proximity_grade(target: ObjectNode, anchor: ObjectNode, cfg: GraphConfig) -> Optional[str]:
    if target.bbox.xy_gap(anchor.bbox) <= cfg.adjacent_gap_m:
        return "adjacent"
    (tx, ty, _), (ax, ay, _) = target.centroid, anchor.centroid
    if math.hypot(tx - ax, ty - ay) <= cfg.close_max_m:
        return "close"
    return None


def horizontal(target: ObjectNode, anchor: ObjectNode, cfg: GraphConfig) -> Optional[tuple[RelationType, EdgeGeometry]]:
    """Directional relation of ``target`` seen from ``anchor`` in the room frame (+X right, +Y front)."""
    (tx, ty, _), (ax, ay, _) = target.centroid, anchor.centroid
    dx, dy = tx - ax, ty - ay
    r = math.hypot(dx, dy)
    if r < 1e-9:
        return None
    sector = horizontal_sector(dx, dy)
    near = r <= cfg.near_max_m
    rel = {
        "right": R.NEAR_RIGHT_OF if near else R.FAR_RIGHT_OF,
        "left": R.NEAR_LEFT_OF if near else R.FAR_LEFT_OF,
        "front": R.IN_FRONT_OF,
        "behind": R.BEHIND,
    }[sector]
    return rel, edge_geometry(target, anchor, proximity_grade(target, anchor, cfg))


# ---------------------------------------------------------------------------
# Passes
# ---------------------------------------------------------------------------

_NON_CONTACT_RANK = {R.HANGING_ON: 0, R.ABOVE: 1, R.BELOW: 1, R.HIGHER_THAN: 2, R.LOWER_THAN: 2}


def in_contact_pass(nodes: list[ObjectNode], cfg: GraphConfig) -> dict[int, tuple[int, RelationType]]:
    """Best in-contact parent per node: highest footprint overlap, then smaller
    |z-gap|, then smaller anchor id."""
    parents: dict[int, tuple[int, RelationType]] = {}
    for t in nodes:
        if t.label in cfg.floor_labels:
            continue
        best = None
        for a in nodes:
            if a.id == t.id:
                continue
            rel = vertical_in_contact(t, a, cfg)
            if rel is None:
                continue
            key = (-t.bbox.footprint_fraction_in(a.bbox), abs(t.bbox.min_corner[2] - a.bbox.max_corner[2]), a.id)
            if best is None or key < best[0]:
                best = (key, a.id, rel)
        if best is not None:
            parents[t.id] = (best[1], best[2])
    return parents


def hangable_nodes(nodes: list[ObjectNode], parents: Mapping[int, tuple[int, RelationType]], cfg: GraphConfig) -> list[int]:
    out = []
    child_count: dict[int, int] = {}
    for p, _ in parents.values():
        child_count[p] = child_count.get(p, 0) + 1
    for n in nodes:
        if n.label in cfg.floor_labels:
            continue
        if n.id not in parents:
            out.append(n.id)
        elif cfg.hangable_rule == "no-horizontal" and child_count[parents[n.id][0]] < 2:
            out.append(n.id)
    return out


def non_contact_pass(nodes: list[ObjectNode], hangable: Iterable[int], cfg: GraphConfig) -> set[tuple[int, int, RelationType]]:
    by_id = {n.id: n for n in nodes}
    out: set[tuple[int, int, RelationType]] = set()
    for h in hangable:
        t = by_id[h]
        for a in nodes:
            if a.id == h or a.label in cfg.floor_labels:
                continue
            rel = vertical_non_contact(t, a, cfg)
            if rel is None:
                continue
            out.add((h, a.id, rel))
            if rel in MIRROR:
                out.add((a.id, h, MIRROR[rel]))
    return out


def _check_cycles(parents: Mapping[int, tuple[int, RelationType]]) -> None:
    for start in parents:
        seen = [start]
        cur = start
        while cur in parents:
            cur = parents[cur][0]
            if cur in seen:
                cycle = seen[seen.index(cur):] + [cur]
                raise DataError("cycle in in-contact relations: " + " -> ".join(str(c) for c in cycle))
            seen.append(cur)


def assign_levels(
    nodes: list[ObjectNode],
    parents: Mapping[int, tuple[int, RelationType]],
    non_contact: Iterable[tuple[int, int, RelationType]],
    cfg: GraphConfig,
) -> dict[int, int]:
    """Hierarchy levels. Raises DataError on an in-contact cycle."""
    _check_cycles(parents)
    ids = [n.id for n in nodes]
    floors = {n.id for n in nodes if n.label in cfg.floor_labels}

    def root_of(i: int) -> int:
        while i in parents:
            i = parents[i][0]
        return i

    def depth(i: int) -> int:
        d = 0
        while i in parents:
            i = parents[i][0]
            d += 1
        return d

    levels: dict[int, int] = {}
    for i in ids:
        if root_of(i) in floors:
            levels[i] = FLOOR_LEVEL + depth(i)

    roots = [i for i in ids if i not in parents and i not in floors]
    candidates: dict[int, list] = {r: [] for r in roots}
    for s, t, rel in non_contact:
        if s in candidates and t in levels and rel in _NON_CONTACT_RANK:
            candidates[s].append((_NON_CONTACT_RANK[rel], t))
    for r in roots:
        levels[r] = levels[min(candidates[r])[1]] if candidates[r] else 0
    for i in ids:
        if i not in levels:
            levels[i] = levels[root_of(i)] + depth(i)
    return levels


def sibling_groups(parents: Mapping[int, tuple[int, RelationType]]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for child, (parent, _) in sorted(parents.items()):
        groups.setdefault(parent, []).append(child)
    return groups


def horizontal_pass(nodes: list[ObjectNode], parents, cfg: GraphConfig) -> list[Edge]:
    by_id = {n.id: n for n in nodes}
    edges = []
    for members in sibling_groups(parents).values():
        for t in members:
            for a in members:
                if t == a:
                    continue
                hit = horizontal(by_id[t], by_id[a], cfg)
                if hit is not None:
                    edges.append(Edge(t, a, hit[0], hit[1]))
    return edges


def scene_xy_diagonal(nodes: Iterable[ObjectNode]) -> float:
    box = None
    for n in nodes:
        box = n.bbox if box is None else box.union(n.bbox)
    if box is None:
        return 0.0
    sx, sy, _ = box.size
    return math.hypot(sx, sy)


def aligned_groups(values: list[tuple[float, int]], delta: float) -> list[tuple[int, ...]]:
    """Maximal runs of >= 3 items whose coordinates span less than ``delta``."""
    vals = sorted(values)
    groups = []
    last_end = -1
    j = 0
    for i in range(len(vals)):
        j = max(j, i)
        while j + 1 < len(vals) and vals[j + 1][0] - vals[i][0] < delta:
            j += 1
        if j - i + 1 >= 3 and j > last_end:
            groups.append(tuple(sorted(v[1] for v in vals[i : j + 1])))
            last_end = j
    return groups


def multi_object(nodes: list[ObjectNode], parents, edges: Iterable[Edge], cfg: GraphConfig) -> list[MultiRelation]:
    by_id = {n.id: n for n in nodes}
    out: list[MultiRelation] = []

    lefts: dict[int, list] = {}
    rights: dict[int, list] = {}
    for e in edges:
        if e.relation in LEFT_OF or e.relation in RIGHT_OF:
            (sx, sy, _), (tx, ty, _) = by_id[e.source].centroid, by_id[e.target].centroid
            entry = (math.hypot(sx - tx, sy - ty), e.source)
            (lefts if e.relation in LEFT_OF else rights).setdefault(e.target, []).append(entry)
    for target in sorted(set(lefts) & set(rights)):
        left = min(lefts[target])[1]
        right = min(rights[target])[1]
        out.append(MultiRelation(R.BETWEEN, (left, right), target=target))

    delta = max(cfg.aligned_delta_floor_m, cfg.aligned_delta_scale * scene_xy_diagonal(nodes))
    for members in sibling_groups(parents).values():
        if len(members) < 3:
            continue
        for axis, k in (("X", 0), ("Y", 1)):
            vals = [(by_id[m].centroid[k], m) for m in members]
            for group in aligned_groups(vals, delta):
                out.append(MultiRelation(R.ALIGNED, group, axis=axis))
    return out


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------

RefinementMap = Mapping[tuple[str, RelationType, str], RelationType]


def check_refinement_map(rules: RefinementMap) -> dict:
    out = {}
    for (tl, rel, al), new in rules.items():
        rel, new = RelationType(rel), RelationType(new)
        if rel.category is not new.category:
            raise ConfigError(
                f"refinement ({tl}, {rel}, {al}) -> {new} crosses categories "
                f"({rel.category.value} -> {new.category.value})"
            )
        if rel.category is RelationCategory.MULTI_OBJECT:
            raise ConfigError("multi-object relations cannot be refined")
        out[(tl, rel, al)] = new
    return out


def load_refinement_map(path: Union[str, Path]) -> dict:
    """Read ``[{"target", "relation", "anchor", "replacement"}, ...]``."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"refinement map {path} does not exist")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        rules = {
            (d["target"], RelationType.parse(d["relation"]), d["anchor"]): RelationType.parse(d["replacement"])
            for d in doc
        }
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"refinement map {path}: {exc}") from None
    return check_refinement_map(rules)


def default_refinement_map() -> dict:
    return load_refinement_map(Path(__file__).parent / "data" / "refinement_map.json")


def refine(graph: SceneGraph, rules: RefinementMap) -> SceneGraph:
    if not rules:
        return graph
    labels = {n.id: n.label for n in graph.nodes}
    edges = []
    for e in graph.edges:
        new = rules.get((labels[e.source], e.relation, labels[e.target]))
        edges.append(Edge(e.source, e.target, new, e.geom) if new is not None else e)
    return SceneGraph(graph.scene_id, graph.nodes, tuple(edges), graph.multi, graph.config_digest, graph.seed, graph.room_type)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def build_graph_from_nodes(
    scene_id: str,
    nodes: list[ObjectNode],
    cfg: GraphConfig,
    refinement: Optional[RefinementMap] = None,
    room_type: Optional[str] = None,
    seed: Optional[int] = None,
) -> SceneGraph:
    nodes = sorted(nodes, key=lambda n: n.id)
    if not any(n.label in cfg.floor_labels for n in nodes):
        raise DataError(f"{scene_id}: no floor")
    by_id = {n.id: n for n in nodes}

    parents = in_contact_pass(nodes, cfg)
    hang = hangable_nodes(nodes, parents, cfg)
    non_contact = non_contact_pass(nodes, hang, cfg)
    levels = assign_levels(nodes, parents, non_contact, cfg)

    edges = [Edge(c, p, rel, edge_geometry(by_id[c], by_id[p])) for c, (p, rel) in parents.items()]
    for s, t, rel in sorted(non_contact, key=lambda x: (x[0], x[1], x[2].value)):
        if abs(levels[s] - levels[t]) <= 1:
            edges.append(Edge(s, t, rel, edge_geometry(by_id[s], by_id[t])))
    horiz = horizontal_pass(nodes, parents, cfg)
    edges.extend(horiz)
    multi = multi_object(nodes, parents, horiz, cfg)

    graph = SceneGraph(
        scene_id=scene_id,
        nodes=tuple(n.with_level(levels[n.id]) for n in nodes),
        edges=tuple(edges),
        multi=tuple(multi),
        config_digest=cfg.digest(),
        seed=cfg.seed if seed is None else seed,
        room_type=room_type,
    )
    return refine(graph, refinement or {})


def build_scene_graph(
    scene: ScenePointCloud, cfg: GraphConfig, refinement: Optional[RefinementMap] = None, seed: Optional[int] = None
) -> SceneGraph:
    return build_graph_from_nodes(scene.scene_id, nodes_from_scene(scene), cfg, refinement, scene.room_type, seed)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _r(v: float) -> float:
    # 10 decimals survive the degree/radian and center/size round trips, so
    # dumping a loaded graph reproduces the file byte for byte
    return round(float(v), 10) + 0.0


def graph_to_dict(graph: SceneGraph) -> dict:
    return {
        "scene_id": graph.scene_id,
        "seed": graph.seed,
        "config_digest": graph.config_digest,
        "room_type": graph.room_type,
        "nodes": [
            {
                "id": n.id,
                "label": n.label,
                "centroid": [_r(v) for v in n.centroid],
                "size": [_r(v) for v in n.size],
                "level": n.level,
            }
            for n in graph.nodes
        ],
        "edges": [
            {
                "source": e.source,
                "target": e.target,
                "relation": e.relation.value,
                "distance": _r(e.geom.distance),
                "theta_h_deg": _r(math.degrees(e.geom.theta_h)),
                "theta_v_deg": _r(math.degrees(e.geom.theta_v)),
                "proximity": e.geom.proximity,
            }
            for e in graph.edges
        ],
        "multi": [
            {"kind": m.kind.value, "target": m.target, "anchors": list(m.anchors), "axis": m.axis}
            for m in graph.multi
        ],
    }


def graph_from_dict(doc: Mapping) -> SceneGraph:
    try:
        nodes = []
        for d in doc["nodes"]:
            c, s = d["centroid"], d["size"]
            lo = tuple(ci - si / 2.0 for ci, si in zip(c, s))
            hi = tuple(ci + si / 2.0 for ci, si in zip(c, s))
            nodes.append(ObjectNode(int(d["id"]), d["label"], AABB(lo, hi), 0, d.get("level")))
        edges = [
            Edge(
                int(d["source"]),
                int(d["target"]),
                RelationType(d["relation"]),
                EdgeGeometry(
                    float(d["distance"]),
                    math.radians(d["theta_h_deg"]),
                    math.radians(d["theta_v_deg"]),
                    d.get("proximity"),
                ),
            )
            for d in doc["edges"]
        ]
        multi = [
            MultiRelation(RelationType(d["kind"]), tuple(d["anchors"]), d.get("target"), d.get("axis"))
            for d in doc.get("multi", [])
        ]
        return SceneGraph(
            scene_id=doc["scene_id"],
            nodes=tuple(nodes),
            edges=tuple(edges),
            multi=tuple(multi),
            config_digest=doc.get("config_digest", ""),
            seed=int(doc.get("seed", 0)),
            room_type=doc.get("room_type"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed scene graph: {exc}") from None


def dumps_graph(graph: SceneGraph) -> str:
    """JSON with one line per node, edge and multi relation (diff-friendly)."""
    doc = graph_to_dict(graph)
    one = lambda v: json.dumps(v, separators=(", ", ": "))
    lines = ["{"]
    head = [k for k in doc if not isinstance(doc[k], list)]
    for k in head:
        lines.append(f"{one(k)}: {one(doc[k])},")
    lists = [k for k in doc if isinstance(doc[k], list)]
    for n, k in enumerate(lists):
        tail = "," if n < len(lists) - 1 else ""
        if not doc[k]:
            lines.append(f"{one(k)}: []{tail}")
            continue
        lines.append(f"{one(k)}: [")
        lines.extend(one(item) + ("," if i < len(doc[k]) - 1 else "") for i, item in enumerate(doc[k]))
        lines.append("]" + tail)
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_graph(graph: SceneGraph, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_graph(graph), encoding="utf-8")


def load_graph(path: Union[str, Path]) -> SceneGraph:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: JSON parse error at line {exc.lineno} column {exc.colno}") from None
    return graph_from_dict(doc)
