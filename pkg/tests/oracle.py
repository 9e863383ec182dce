"""Brute-force reference evaluator for scene graph construction.

Written from the documented rules only, in plain scalar Python: boxes come
straight from the scene's points, every predicate is tested on every ordered
pair, and nothing is imported from the graph builder. Tests compare the
package's output against this.
"""

from __future__ import annotations

import math
from collections import namedtuple

Box = namedtuple("Box", "id label lo hi")

DEFAULTS = dict(
    eps=0.05,
    fp_min=0.3,
    inside=0.95,
    embedded=0.5,
    containers={"basket", "bin", "bowl", "box", "bucket", "trash can", "vase", "pot", "sink", "bathtub", "crate"},
    walls={"wall"},
    floors={"floor"},
    hang_gap=0.10,
    above_min=0.2,
    higher_dz=0.3,
    higher_xy=2.0,
    near=1.5,
    close=0.5,
    adjacent=0.2,
    delta_floor=0.10,
    delta_scale=0.02,
)


def boxes_from_scene(scene) -> list[Box]:
    lo, hi = {}, {}
    for row in scene.rows().tolist():
        x, y, z, _, _, _, inst, _ = row
        inst = int(inst)
        if inst not in lo:
            lo[inst] = [x, y, z]
            hi[inst] = [x, y, z]
        else:
            for k, v in enumerate((x, y, z)):
                lo[inst][k] = min(lo[inst][k], v)
                hi[inst][k] = max(hi[inst][k], v)
    return [Box(i, scene.instances[i], tuple(lo[i]), tuple(hi[i])) for i in sorted(lo)]


def center(b):
    return tuple((b.lo[k] + b.hi[k]) / 2 for k in range(3))


def overlap1(a0, a1, b0, b1):
    return max(0.0, min(a1, b1) - max(a0, b0))


def cover(t0, t1, a0, a1):
    """Share of [t0, t1] inside [a0, a1]; a point counts as 1 when inside."""
    if t1 - t0 <= 0:
        return 1.0 if a0 <= t0 <= a1 else 0.0
    return overlap1(t0, t1, a0, a1) / (t1 - t0)


def containment(t, a):
    vol = 1.0
    for k in range(3):
        vol *= t.hi[k] - t.lo[k]
    if vol > 0:
        inter = 1.0
        for k in range(3):
            inter *= overlap1(t.lo[k], t.hi[k], a.lo[k], a.hi[k])
        return inter / vol
    return cover(t.lo[0], t.hi[0], a.lo[0], a.hi[0]) * cover(t.lo[1], t.hi[1], a.lo[1], a.hi[1]) * cover(
        t.lo[2], t.hi[2], a.lo[2], a.hi[2]
    )


def footprint_frac(t, a):
    area = (t.hi[0] - t.lo[0]) * (t.hi[1] - t.lo[1])
    if area > 0:
        return overlap1(t.lo[0], t.hi[0], a.lo[0], a.hi[0]) * overlap1(t.lo[1], t.hi[1], a.lo[1], a.hi[1]) / area
    return cover(t.lo[0], t.hi[0], a.lo[0], a.hi[0]) * cover(t.lo[1], t.hi[1], a.lo[1], a.hi[1])


def volume(b):
    return (b.hi[0] - b.lo[0]) * (b.hi[1] - b.lo[1]) * (b.hi[2] - b.lo[2])


def xy_gap(a, b):
    gx = max(0.0, b.lo[0] - a.hi[0], a.lo[0] - b.hi[0])
    gy = max(0.0, b.lo[1] - a.hi[1], a.lo[1] - b.hi[1])
    return math.hypot(gx, gy)


def in_contact(t, a, p):
    c = containment(t, a)
    if c >= p["inside"] and volume(t) < volume(a):
        return "inside"
    if p["embedded"] <= c < p["inside"]:
        return "embedded-into"
    within = a.lo[0] <= t.lo[0] and t.hi[0] <= a.hi[0] and a.lo[1] <= t.lo[1] and t.hi[1] <= a.hi[1]
    if a.label in p["containers"] and within and a.lo[2] <= t.lo[2] <= a.hi[2]:
        return "placed-in"
    g = t.lo[2] - a.hi[2]
    if abs(g) <= p["eps"] and t.lo[2] >= a.hi[2] - p["eps"] and footprint_frac(t, a) >= p["fp_min"]:
        return "supported-by"
    return None


def non_contact(t, a, p):
    if a.label in p["walls"] and xy_gap(t, a) <= p["hang_gap"] and overlap1(t.lo[2], t.hi[2], a.lo[2], a.hi[2]) > 0:
        return "hanging-on"
    ta = (t.hi[0] - t.lo[0]) * (t.hi[1] - t.lo[1])
    aa = (a.hi[0] - a.lo[0]) * (a.hi[1] - a.lo[1])
    small, big = (t, a) if ta <= aa else (a, t)
    if footprint_frac(small, big) >= p["above_min"]:
        if t.lo[2] >= a.hi[2] + p["eps"]:
            return "above"
        if a.lo[2] >= t.hi[2] + p["eps"]:
            return "below"
    interior = all(min(t.hi[k], a.hi[k]) > max(t.lo[k], a.lo[k]) for k in range(2))
    if not interior:
        (tx, ty, tz), (ax, ay, az) = center(t), center(a)
        if math.hypot(tx - ax, ty - ay) <= p["higher_xy"]:
            if tz - az >= p["higher_dz"]:
                return "higher-than"
            if tz - az <= -p["higher_dz"]:
                return "lower-than"
    return None


MIRRORS = {"above": "below", "below": "above", "higher-than": "lower-than", "lower-than": "higher-than"}
RANK = {"hanging-on": 0, "above": 1, "below": 1, "higher-than": 2, "lower-than": 2}


def direction(t, a, p):
    (tx, ty, _), (ax, ay, _) = center(t), center(a)
    dx, dy = tx - ax, ty - ay
    r = math.hypot(dx, dy)
    if r < 1e-9:
        return None
    # sectors: right (-45, 45], front (45, 135], left (135, 180] U (-180, -135], behind (-135, -45]
    if dx > 0 and abs(dy) <= dx and dy != -dx:
        side = "right"
    elif dy > 0 and abs(dx) <= dy and dx != dy:
        side = "front"
    elif dx < 0 and abs(dy) <= -dx and dy != -dx:
        side = "left"
    else:
        side = "behind"
    if side in ("left", "right"):
        return ("near-" if r <= p["near"] else "far-") + side + "-of"
    return "in-front-of" if side == "front" else "behind"


def build(boxes: list[Box], params: dict | None = None, refinement: dict | None = None) -> dict:
    """Returns {"edges": set of (source, target, relation), "levels": {id: level},
    "between": set of (target, left, right), "aligned": set of (axis, members)}."""
    p = dict(DEFAULTS, **(params or {}))
    byid = {b.id: b for b in boxes}
    floors = [b.id for b in boxes if b.label in p["floors"]]

    parent = {}
    for t in boxes:
        if t.label in p["floors"]:
            continue
        best = None
        for a in boxes:
            if a.id == t.id:
                continue
            rel = in_contact(t, a, p)
            if rel is None:
                continue
            key = (-footprint_frac(t, a), abs(t.lo[2] - a.hi[2]), a.id)
            if best is None or key < best[0]:
                best = (key, a.id, rel)
        if best:
            parent[t.id] = (best[1], best[2])

    hang = [b.id for b in boxes if b.label not in p["floors"] and b.id not in parent]
    nc = set()
    for h in hang:
        for a in boxes:
            if a.id == h or a.label in p["floors"]:
                continue
            rel = non_contact(byid[h], a, p)
            if rel:
                nc.add((h, a.id, rel))
                if rel in MIRRORS:
                    nc.add((a.id, h, MIRRORS[rel]))

    def chain(i):
        steps = 0
        while i in parent:
            i = parent[i][0]
            steps += 1
            if steps > len(boxes):
                raise ValueError("cycle")
        return i, steps

    level = {}
    for b in boxes:
        root, d = chain(b.id)
        if root in floors:
            level[b.id] = -1 + d
    for h in hang:
        opts = sorted((RANK[r], t) for s, t, r in nc if s == h and t in level)
        level[h] = level[opts[0][1]] if opts else 0
    for b in boxes:
        if b.id not in level:
            root, d = chain(b.id)
            level[b.id] = level[root] + d

    edges = {(c, pa, rel) for c, (pa, rel) in parent.items()}
    edges |= {(s, t, r) for s, t, r in nc if abs(level[s] - level[t]) <= 1}

    siblings = {}
    for c, (pa, _) in parent.items():
        siblings.setdefault(pa, []).append(c)
    horiz = set()
    for group in siblings.values():
        for t in group:
            for a in group:
                if t != a:
                    rel = direction(byid[t], byid[a], p)
                    if rel:
                        horiz.add((t, a, rel))
    edges |= horiz

    between = set()
    for tgt in byid:
        lefts = sorted(
            (math.dist(center(byid[s])[:2], center(byid[tgt])[:2]), s) for s, t, r in horiz if t == tgt and r.endswith("left-of")
        )
        rights = sorted(
            (math.dist(center(byid[s])[:2], center(byid[tgt])[:2]), s) for s, t, r in horiz if t == tgt and r.endswith("right-of")
        )
        if lefts and rights:
            between.add((tgt, lefts[0][1], rights[0][1]))

    xs = [v for b in boxes for v in (b.lo[0], b.hi[0])]
    ys = [v for b in boxes for v in (b.lo[1], b.hi[1])]
    diag = math.hypot(max(xs) - min(xs), max(ys) - min(ys)) if boxes else 0.0
    delta = max(p["delta_floor"], p["delta_scale"] * diag)
    aligned = set()
    for group in siblings.values():
        if len(group) < 3:
            continue
        for axis, k in (("X", 0), ("Y", 1)):
            vals = sorted((center(byid[m])[k], m) for m in group)
            # every maximal window of consecutive sorted values spanning < delta
            windows = []
            for i in range(len(vals)):
                j = i
                while j + 1 < len(vals) and vals[j + 1][0] - vals[i][0] < delta:
                    j += 1
                windows.append((i, j))
            for i, j in windows:
                if j - i + 1 < 3:
                    continue
                if any(i2 <= i and j <= j2 and (i2, j2) != (i, j) for i2, j2 in windows):
                    continue
                aligned.add((axis, tuple(sorted(m for _, m in vals[i : j + 1]))))

    if refinement:
        lab = {b.id: b.label for b in boxes}
        edges = {(s, t, refinement.get((lab[s], r, lab[t]), r)) for s, t, r in edges}

    return {"edges": edges, "levels": level, "between": between, "aligned": aligned}
