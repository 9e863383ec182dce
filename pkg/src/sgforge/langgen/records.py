"""Selection layer: choose which relations of a graph become sentences and
wrap the sentences as corpus records.

Every choice draws from a seed derived from the root seed, the scene id and
the ids involved, so a scene's records do not depend on which other scenes
run alongside it.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

from ..corpus import LanguageRecord
from ..scene_model import Edge, MultiRelation, RelationType, SceneGraph
from ..seeding import derive_seed, py_rng
from .prompts import REFERRAL_KINDS, RephraseRequest, SceneSample, build_scene_prompt, draft_scene_caption
from .rephrase import RephraseClient, rephrase_many
from .templates import ClusterKind, TemplatePool, classify_star, gen_multi, gen_pairwise, gen_star, order_star

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LangConfig:
    referrals_per_scene: int = 10
    star_per_scene: int = 2
    scene_captions_per_scene: int = 1
    scene_sample: SceneSample = field(default_factory=SceneSample)
    max_in_flight: int = 4
    # room structure: used as anchors, never described as targets
    structural_labels: tuple = ("floor", "wall", "ceiling")

    def __post_init__(self):
        for name in ("referrals_per_scene", "star_per_scene", "scene_captions_per_scene"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


@dataclass(frozen=True)
class Candidate:
    """One referral that could be written: a pairwise edge (possibly voiced
    through a proximity synonym) or a multi-object relation."""

    template: str  # "pairwise" | "multi"
    relation: RelationType
    target: int
    anchors: tuple
    multi: Optional[MultiRelation] = None

    @property
    def key(self) -> tuple:
        return (self.template, self.relation.value, self.target, self.anchors)


def referral_candidates(graph: SceneGraph, pool: TemplatePool, seed: int, skip_targets=()) -> list[Candidate]:
    labels = {n.id: n.label for n in graph.nodes}
    out = []
    for e in graph.edges:
        if labels[e.source] in skip_targets:
            continue
        out.append(Candidate("pairwise", e.relation, e.source, (e.target,)))
        grade = e.geom.proximity
        if grade and pool.proximity_synonyms.get(grade):
            syn = py_rng(seed, graph.scene_id, "proximity", e.source, e.target).choice(pool.proximity_synonyms[grade])
            out.append(Candidate("pairwise", syn, e.source, (e.target,)))
    for m in graph.multi:
        if m.kind is RelationType.BETWEEN:
            out.append(Candidate("multi", m.kind, m.target, m.anchors, m))
        else:
            # aligned has no single referent; the first member stands in as target
            out.append(Candidate("multi", m.kind, m.anchors[0], m.anchors[1:], m))
    return sorted({c for c in out if labels[c.target] not in skip_targets}, key=lambda c: c.key)


def select_stratified(cands: list[Candidate], n: int, seed: int, scene_id: str) -> list[Candidate]:
    """Round-robin over relation types in a seeded order, drawing from each
    type's seeded shuffle, so rare relation types are not crowded out."""
    groups: dict[RelationType, list[Candidate]] = defaultdict(list)
    for c in cands:
        groups[c.relation].append(c)
    rng = py_rng(seed, scene_id, "referral-select")
    order = sorted(groups, key=lambda r: list(RelationType).index(r))
    rng.shuffle(order)
    for r in order:
        rng.shuffle(groups[r])
    picked: list[Candidate] = []
    depth = 0
    while len(picked) < n and any(depth < len(groups[r]) for r in order):
        for r in order:
            if depth < len(groups[r]) and len(picked) < n:
                picked.append(groups[r][depth])
        depth += 1
    return picked


def render_candidate(c: Candidate, graph: SceneGraph, pool: TemplatePool, seed: int) -> str:
    labels = {n.id: n.label for n in graph.nodes}
    if c.multi is not None:
        return gen_multi(c.multi, labels, pool, seed)
    return gen_pairwise((labels[c.target], c.relation, labels[c.anchors[0]]), pool, seed)


def referral_records(
    graph: SceneGraph, pool: TemplatePool, n: int, root_seed: int, skip_targets=()
) -> list[LanguageRecord]:
    cands = referral_candidates(graph, pool, root_seed, skip_targets)
    out = []
    for c in select_stratified(cands, n, root_seed, graph.scene_id):
        s = derive_seed(root_seed, graph.scene_id, "referral", *c.key)
        out.append(
            LanguageRecord(
                scene_id=graph.scene_id,
                kind="object_referral",
                text=render_candidate(c, graph, pool, s),
                source="template",
                seed=s,
                target_id=c.target,
                anchor_ids=c.anchors,
                relation=c.relation,
                template=c.template,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Star references
# ---------------------------------------------------------------------------


def star_targets(graph: SceneGraph, skip_targets=()) -> dict[int, dict[int, list[Edge]]]:
    """Targets with out-edges to at least 3 distinct anchors, grouped by anchor."""
    labels = {n.id: n.label for n in graph.nodes}
    by_target: dict[int, dict[int, list[Edge]]] = defaultdict(lambda: defaultdict(list))
    for e in graph.edges:
        if labels[e.source] in skip_targets:
            continue
        by_target[e.source][e.target].append(e)
    return {t: dict(anchors) for t, anchors in sorted(by_target.items()) if len(anchors) >= 3}


def star_records(
    graph: SceneGraph, pool: TemplatePool, n: int, root_seed: int, skip_targets=()
) -> list[LanguageRecord]:
    if n == 0:
        return []
    eligible = star_targets(graph, skip_targets)
    if len(eligible) < n:
        log.warning(
            "%s: %d star references requested but only %d targets have 3 distinct anchors",
            graph.scene_id, n, len(eligible),
        )
    rng = py_rng(root_seed, graph.scene_id, "star-select")
    targets = sorted(eligible)
    rng.shuffle(targets)
    labels = {nd.id: nd.label for nd in graph.nodes}
    out = []
    for t in targets[:n]:
        anchors = rng.sample(sorted(eligible[t]), 3)
        edges = [rng.choice(sorted(eligible[t][a], key=lambda e: e.key)) for a in anchors]
        triplets = order_star([(e.relation, e.target) for e in edges])
        rels = [r for r, _ in triplets]
        ids = tuple(a for _, a in triplets)
        s = derive_seed(root_seed, graph.scene_id, "star", t, *ids, *(r.value for r in rels))
        text = gen_star(labels[t], [(r, labels[a]) for r, a in triplets], pool, s)
        # TwoSame orders the repeated relation first, so rels[0] is the dominant one in every family
        out.append(
            LanguageRecord(
                scene_id=graph.scene_id,
                kind="object_referral",
                text=text,
                source="template",
                seed=s,
                target_id=t,
                anchor_ids=ids,
                relation=rels[0],
                template="star",
            )
        )
    return out


def star_family(record: LanguageRecord, graph: SceneGraph) -> ClusterKind:
    by_key = {(e.source, e.target): e.relation for e in graph.edges}
    return classify_star([by_key[(record.target_id, a)] for a in record.anchor_ids])


# ---------------------------------------------------------------------------
# Scene captions
# ---------------------------------------------------------------------------


def scene_caption_drafts(graph: SceneGraph, cfg: LangConfig, root_seed: int) -> list[tuple[LanguageRecord, dict]]:
    out = []
    if not graph.nodes:
        return out
    for i in range(cfg.scene_captions_per_scene):
        s = derive_seed(root_seed, graph.scene_id, "scene-caption", i)
        prompt = build_scene_prompt(graph, cfg.scene_sample, s)
        rec = LanguageRecord(
            scene_id=graph.scene_id,
            kind="scene_caption",
            text=draft_scene_caption(prompt),
            source="template",
            seed=s,
            template=f"scene-{i}",
        )
        out.append((rec, prompt.payload))
    return out


# ---------------------------------------------------------------------------
# Whole scene
# ---------------------------------------------------------------------------


def referral_request(rec: LanguageRecord, graph: SceneGraph, root_seed: int) -> RephraseRequest:
    labels = {n.id: n.label for n in graph.nodes}
    kind = py_rng(root_seed, rec.record_id, "prompt-kind").choice(REFERRAL_KINDS)
    return RephraseRequest(
        kind,
        text=rec.text,
        target_label=labels[rec.target_id],
        anchor_labels=tuple(labels[a] for a in rec.anchor_ids),
    )


def _derived(rec: LanguageRecord, source: str, text: str, flags: tuple) -> LanguageRecord:
    return LanguageRecord(
        scene_id=rec.scene_id,
        kind=rec.kind,
        text=text,
        source=source,
        seed=rec.seed,
        target_id=rec.target_id,
        anchor_ids=rec.anchor_ids,
        relation=rec.relation,
        flags=flags,
        template=rec.template,
    )


def scene_language(
    graph: SceneGraph,
    pool: TemplatePool,
    cfg: LangConfig,
    root_seed: int,
    client: Optional[RephraseClient] = None,
) -> list[LanguageRecord]:
    """Template referrals, star references and scene captions for one graph.

    With a client, each referral also gets a rephrased record and each scene
    caption a summary record; the template records are kept alongside.
    """
    skip = cfg.structural_labels
    referrals = referral_records(graph, pool, cfg.referrals_per_scene, root_seed, skip)
    referrals += star_records(graph, pool, cfg.star_per_scene, root_seed, skip)
    captions = scene_caption_drafts(graph, cfg, root_seed)
    records = referrals + [rec for rec, _ in captions]
    if client is None:
        return sorted(records, key=lambda r: r.record_id)

    reqs = [referral_request(r, graph, root_seed) for r in referrals]
    reqs += [RephraseRequest("scene-summary", text=rec.text, scene_graph=payload) for rec, payload in captions]
    results = rephrase_many(reqs, client, cfg.max_in_flight)
    for rec, res in zip(referrals, results):
        records.append(_derived(rec, "rephrased", res.text, res.flags))
    for (rec, _), res in zip(captions, results[len(referrals):]):
        records.append(_derived(rec, "summary", res.text, res.flags))
    return sorted(records, key=lambda r: r.record_id)

