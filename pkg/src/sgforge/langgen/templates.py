"""Template pools and the template-based sentence generators."""

from __future__ import annotations

import enum
import json
import random
import re
import string
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from ..errors import ConfigError
from ..scene_model import MultiRelation, RelationCategory, RelationType

PAIRWISE_SLOTS = {"target", "relation", "anchor"}
BETWEEN_SLOTS = {"target", "relation", "anchor1", "anchor2"}
ALIGNED_SLOTS = {"members", "relation"}
STAR_SLOTS = {
    "AllSame": {"target", "relation1", "anchor1", "anchor2", "anchor3"},
    "TwoSame": {"target", "relation1", "relation2", "anchor1", "anchor2", "anchor3"},
    "AllDistinct": {"target", "relation1", "relation2", "relation3", "anchor1", "anchor2", "anchor3"},
}


class ClusterKind(str, enum.Enum):
    ALL_SAME = "AllSame"
    TWO_SAME = "TwoSame"
    ALL_DISTINCT = "AllDistinct"


def slots_of(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name}


@dataclass(frozen=True)
class TemplatePool:
    pairwise: tuple
    between: tuple
    aligned: tuple
    star: Mapping[ClusterKind, tuple]
    lexicon: Mapping[RelationType, tuple]
    proximity_synonyms: Mapping[str, tuple]

    def __post_init__(self):
        problems = []
        for t in self.pairwise:
            if slots_of(t) != PAIRWISE_SLOTS:
                problems.append(f"pairwise template {t!r} has slots {sorted(slots_of(t))}")
        for t in self.between:
            if slots_of(t) != BETWEEN_SLOTS:
                problems.append(f"between template {t!r} has slots {sorted(slots_of(t))}")
        for t in self.aligned:
            if slots_of(t) != ALIGNED_SLOTS:
                problems.append(f"aligned template {t!r} has slots {sorted(slots_of(t))}")
        for kind in ClusterKind:
            if not self.star.get(kind):
                problems.append(f"no star templates for {kind.value}")
            for t in self.star.get(kind, ()):
                if slots_of(t) != STAR_SLOTS[kind.value]:
                    problems.append(f"star {kind.value} template {t!r} has slots {sorted(slots_of(t))}")
        missing = [r.value for r in RelationType if not self.lexicon.get(r)]
        if missing:
            problems.append(f"relations without surface phrases: {missing}")
        if not self.pairwise or not self.between or not self.aligned:
            problems.append("pairwise, between and aligned pools must be non-empty")
        if problems:
            raise ConfigError("invalid template pool: " + "; ".join(problems))

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TemplatePool":
        try:
            return cls(
                pairwise=tuple(doc["pairwise"]),
                between=tuple(doc["multi"]["between"]),
                aligned=tuple(doc["multi"]["aligned"]),
                star={ClusterKind(k): tuple(v) for k, v in doc["star"].items()},
                lexicon={RelationType(k): tuple(v) for k, v in doc["lexicon"].items()},
                proximity_synonyms={
                    k: tuple(RelationType(r) for r in v) for k, v in doc.get("proximity_synonyms", {}).items()
                },
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"invalid template pool: {exc}") from None


def load_pool(path: Optional[Union[str, Path]] = None) -> TemplatePool:
    if path is None:
        text = resources.files("sgforge.langgen").joinpath("data/templates.json").read_text(encoding="utf-8")
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"template pool {path} does not exist")
        text = path.read_text(encoding="utf-8")
    try:
        return TemplatePool.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"template pool: JSON parse error at line {exc.lineno}") from None


@lru_cache(maxsize=1)
def load_default_pool() -> TemplatePool:
    return load_pool()


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_ARTICLE = re.compile(r"\b([Aa]) (?=[aeiouAEIOU])")


def render(template: str, **slots: str) -> str:
    text = template.format(**slots)
    text = _ARTICLE.sub(lambda m: m.group(1) + "n ", text)
    return text[:1].upper() + text[1:]


def phrase(pool: TemplatePool, relation: RelationType, rng: random.Random) -> str:
    return rng.choice(pool.lexicon[relation])


ORDINALS = ("first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth")


def disambiguate(labels: Sequence[str]) -> list[str]:
    """Prefix repeated labels with ordinals ("first chair", "second chair")."""
    totals = Counter(labels)
    seen: Counter = Counter()
    out = []
    for lab in labels:
        if totals[lab] > 1:
            out.append(f"{ORDINALS[min(seen[lab], len(ORDINALS) - 1)]} {lab}")
            seen[lab] += 1
        else:
            out.append(lab)
    return out


def join_list(items: Sequence[str]) -> str:
    if len(items) == 1:
        return items[0]
    return ", ".join(items[:-1]) + " and " + items[-1]


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def gen_pairwise(
    triplet: tuple[str, RelationType, str],
    pool: TemplatePool,
    seed: int,
    template_index: Optional[int] = None,
) -> str:
    target, relation, anchor = triplet
    relation = RelationType(relation)
    if relation.category is RelationCategory.MULTI_OBJECT:
        raise ValueError(f"{relation.value} needs gen_multi")
    rng = random.Random(seed)
    idx = rng.randrange(len(pool.pairwise)) if template_index is None else template_index
    rel = phrase(pool, relation, rng)
    anchor_np = f"other {anchor}" if anchor == target else anchor
    return render(pool.pairwise[idx], target=target, relation=rel, anchor=anchor_np)


def gen_multi(
    rel: MultiRelation,
    labels: Mapping[int, str],
    pool: TemplatePool,
    seed: int,
    template_index: Optional[int] = None,
) -> str:
    """Sentence for a between or aligned relation; ``labels`` maps node id to label."""
    rng = random.Random(seed)
    if rel.kind is RelationType.BETWEEN:
        a1, a2 = (labels[a] for a in rel.anchors)
        if a1 == a2:
            n1, n2 = f"one {a1}", f"the other {a2}"
        else:
            n1, n2 = a1, a2
        idx = rng.randrange(len(pool.between)) if template_index is None else template_index
        return render(
            pool.between[idx],
            target=labels[rel.target],
            relation=phrase(pool, rel.kind, rng),
            anchor1=n1,
            anchor2=n2,
        )
    if rel.kind is RelationType.ALIGNED:
        names = ["the " + n for n in disambiguate([labels[a] for a in rel.anchors])]
        idx = rng.randrange(len(pool.aligned)) if template_index is None else template_index
        return render(pool.aligned[idx], members=join_list(names), relation=phrase(pool, rel.kind, rng))
    raise ValueError(f"{rel.kind} is not a multi-object relation")


def classify_star(relations: Sequence[RelationType]) -> ClusterKind:
    if len(relations) != 3:
        raise ValueError("star references take exactly 3 relations")
    distinct = len(set(relations))
    return {1: ClusterKind.ALL_SAME, 2: ClusterKind.TWO_SAME, 3: ClusterKind.ALL_DISTINCT}[distinct]


def order_star(anchor_triplets: Sequence[tuple[RelationType, str]]) -> list[tuple[RelationType, str]]:
    """Put the repeated relation first for the two-same family; keep order otherwise."""
    rels = [r for r, _ in anchor_triplets]
    if classify_star(rels) is ClusterKind.TWO_SAME:
        common = Counter(rels).most_common(1)[0][0]
        pair = [t for t in anchor_triplets if t[0] == common]
        rest = [t for t in anchor_triplets if t[0] != common]
        return pair + rest
    return list(anchor_triplets)


def gen_star(
    target: str,
    anchor_triplets: Sequence[tuple[RelationType, str]],
    pool: TemplatePool,
    seed: int,
    template_index: Optional[int] = None,
) -> str:
    """Sentence relating ``target`` to three anchors given as ``(relation, anchor_label)``."""
    triplets = order_star([(RelationType(r), a) for r, a in anchor_triplets])
    kind = classify_star([r for r, _ in triplets])
    rng = random.Random(seed)
    family = pool.star[kind]
    idx = rng.randrange(len(family)) if template_index is None else template_index
    names = disambiguate([a for _, a in triplets])
    names = [f"other {n}" if n == target else n for n in names]
    slots = {"target": target, "anchor1": names[0], "anchor2": names[1], "anchor3": names[2]}
    if kind is ClusterKind.ALL_SAME:
        slots["relation1"] = phrase(pool, triplets[0][0], rng)
    elif kind is ClusterKind.TWO_SAME:
        slots["relation1"] = phrase(pool, triplets[0][0], rng)
        slots["relation2"] = phrase(pool, triplets[2][0], rng)
    else:
        for k in range(3):
            slots[f"relation{k + 1}"] = phrase(pool, triplets[k][0], rng)
    return render(family[idx], **slots)
