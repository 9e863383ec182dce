"""Prompt texts for the rephrase and summary clients, and scene-caption payloads."""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from string import Template
from typing import Optional, Sequence

from ..scene_model import SceneGraph
from .templates import join_list, load_default_pool, render

PROMPT_FILES = {
    "referral-simple": "referral_simple.txt",
    "referral-subject-locked": "referral_subject_locked.txt",
    "referral-enriched": "referral_enriched.txt",
    "scene-summary": "scene_summary.txt",
    "caption-summary": "caption_summary.txt",
}
REFERRAL_KINDS = ("referral-simple", "referral-subject-locked", "referral-enriched")


@lru_cache(maxsize=None)
def prompt_text(kind: str) -> str:
    if kind not in PROMPT_FILES:
        raise ValueError(f"unknown prompt kind {kind!r}")
    path = resources.files("sgforge.langgen").joinpath("data/prompts/" + PROMPT_FILES[kind])
    return path.read_text(encoding="utf-8")


@dataclass(frozen=True)
class RephraseRequest:
    kind: str
    text: str = ""
    target_label: Optional[str] = None
    anchor_labels: tuple = ()
    scene_graph: Optional[dict] = None  # scene-summary payload

    def __post_init__(self):
        if self.kind not in PROMPT_FILES:
            raise ValueError(f"unknown request kind {self.kind!r}")
        object.__setattr__(self, "anchor_labels", tuple(self.anchor_labels))
        if self.kind == "scene-summary":
            if self.scene_graph is None:
                raise ValueError("scene-summary requests need a scene graph payload")
        elif not self.text:
            raise ValueError(f"{self.kind} requests need text")
        if self.kind in ("referral-subject-locked", "referral-enriched", "caption-summary") and not self.target_label:
            raise ValueError(f"{self.kind} requests need a target label")
        if self.kind == "referral-subject-locked" and not self.anchor_labels:
            raise ValueError("referral-subject-locked requests need anchor labels")

    @property
    def is_referral(self) -> bool:
        return self.kind in REFERRAL_KINDS


def build_prompt(req: RephraseRequest) -> str:
    fields = {
        "caption": req.text,
        "target": req.target_label or "",
        "anchors": ", ".join(req.anchor_labels),
        "scene_graph": json.dumps(req.scene_graph, ensure_ascii=False) if req.scene_graph is not None else "",
    }
    return Template(prompt_text(req.kind)).substitute(fields)


# ---------------------------------------------------------------------------
# Scene caption payload
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneSample:
    max_nodes: int = 30
    max_edges: int = 20

    def __post_init__(self):
        if self.max_nodes < 0 or self.max_edges < 0:
            raise ValueError("sample sizes must be >= 0")


@dataclass(frozen=True)
class ScenePrompt:
    payload: dict
    # (source id, relation, target id) of the sampled edges, same order as payload["relation"]
    edges: tuple = field(default=())

    @property
    def prompt(self) -> str:
        return build_prompt(RephraseRequest("scene-summary", scene_graph=self.payload))


def relation_phrase(relation) -> str:
    """Canonical (first) surface phrase, used where no seeded choice is wanted."""
    return load_default_pool().lexicon[relation][0]


def build_scene_prompt(graph: SceneGraph, sample: SceneSample, seed: int) -> ScenePrompt:
    if not graph.nodes:
        raise ValueError("scene prompt needs a non-empty graph")
    rng = random.Random(seed)
    labels = {n.id: n.label for n in graph.nodes}
    counts = Counter(labels.values())

    ids = [n.id for n in graph.nodes]
    if sample.max_nodes < len(ids):
        chosen = set(rng.sample(ids, sample.max_nodes))
    else:
        chosen = set(ids)
    eligible = [e for e in graph.edges if e.source in chosen and e.target in chosen]
    k = min(sample.max_edges, len(eligible))
    picked = sorted(rng.sample(eligible, k), key=lambda e: e.key) if k else []

    payload = {
        "scene_type": graph.room_type or "room",
        "object_count": {lab: counts[lab] for lab in sorted(counts)},
        "relation": [[labels[e.source], relation_phrase(e.relation), labels[e.target]] for e in picked],
    }
    return ScenePrompt(payload, tuple(e.key for e in picked))


def plural(label: str) -> str:
    if label.endswith(("s", "x", "ch", "sh")):
        return label + "es"
    if label.endswith("y") and label[-2:-1] not in "aeiou":
        return label[:-1] + "ies"
    return label + "s"


def count_phrase(counts: dict, skip: Sequence[str] = ()) -> str:
    parts = []
    for lab, n in counts.items():
        if lab in skip:
            continue
        parts.append(f"a {lab}" if n == 1 else f"{n} {plural(lab)}")
    return join_list(parts) if parts else "nothing"


def draft_scene_caption(prompt: ScenePrompt, skip_labels: Sequence[str] = ("floor",), max_relations: int = 3) -> str:
    """Plain template description of a scene payload, used when no summarizer runs."""
    p = prompt.payload
    out = [render("This {scene} has {objects}.", scene=p["scene_type"], objects=count_phrase(p["object_count"], skip_labels))]
    for src, phrase, tgt in p["relation"][:max_relations]:
        other = f"other {tgt}" if src == tgt else tgt
        out.append(render("The {s} is {p} the {t}.", s=src, p=phrase, t=other))
    return " ".join(out)
