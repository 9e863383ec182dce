"""Language records, JSONL shards, deterministic merging and corpus statistics."""

from __future__ import annotations

import hashlib
import json
import os
import statistics
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import jsonschema

from .errors import DataError
from .scene_model import TABLE_TYPES, RelationType

KINDS = ("object_caption", "object_referral", "scene_caption")
SOURCES = ("template", "rephrased", "summary")


def record_id_for(scene_id: str, kind: str, source: str, ids: Sequence, seed: int) -> str:
    key = json.dumps([scene_id, kind, source, list(ids), int(seed)], separators=(",", ":"))
    return hashlib.sha256(key.encode("utf-8")).hexdigest()[:20]


@dataclass(frozen=True)
class LanguageRecord:
    scene_id: str
    kind: str
    text: str
    source: str
    seed: int
    target_id: Optional[int] = None
    anchor_ids: tuple = ()
    relation: Optional[RelationType] = None
    flags: tuple = ()
    record_id: str = ""
    # extra record-kind detail, e.g. "pairwise" / "multi" / "star" for referrals
    template: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown record kind {self.kind!r}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown record source {self.source!r}")
        object.__setattr__(self, "anchor_ids", tuple(int(a) for a in self.anchor_ids))
        object.__setattr__(self, "flags", tuple(self.flags))
        if self.relation is not None and not isinstance(self.relation, RelationType):
            object.__setattr__(self, "relation", RelationType(self.relation))
        if self.kind == "object_referral" and (self.target_id is None or self.relation is None):
            raise ValueError("object_referral records need a target and a relation")
        if not self.record_id:
            ids = [self.target_id, *self.anchor_ids, self.relation.value if self.relation else None, self.template]
            object.__setattr__(self, "record_id", record_id_for(self.scene_id, self.kind, self.source, ids, self.seed))

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "scene_id": self.scene_id,
            "kind": self.kind,
            "target_id": self.target_id,
            "anchor_ids": list(self.anchor_ids),
            "relation": self.relation.value if self.relation else None,
            "template": self.template,
            "text": self.text,
            "source": self.source,
            "flags": list(self.flags),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LanguageRecord":
        return cls(
            scene_id=d["scene_id"],
            kind=d["kind"],
            text=d["text"],
            source=d["source"],
            seed=int(d["seed"]),
            target_id=d.get("target_id"),
            anchor_ids=tuple(d.get("anchor_ids", ())),
            relation=RelationType(d["relation"]) if d.get("relation") else None,
            flags=tuple(d.get("flags", ())),
            record_id=d["record_id"],
            template=d.get("template"),
        )


def _dump_line(rec: LanguageRecord) -> str:
    return json.dumps(rec.to_dict(), ensure_ascii=False, separators=(",", ":"))


def _sorted_unique(records: Iterable[LanguageRecord]) -> list[LanguageRecord]:
    seen: dict[str, LanguageRecord] = {}
    for rec in records:
        prior = seen.get(rec.record_id)
        if prior is not None:
            raise DataError(
                f"duplicate record_id {rec.record_id}: {prior.scene_id}/{prior.kind}/{prior.text!r} "
                f"and {rec.scene_id}/{rec.kind}/{rec.text!r}"
            )
        seen[rec.record_id] = rec
    return [seen[k] for k in sorted(seen)]


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise DataError(f"{path}: write failed: {exc}") from None


def write_records(records: Iterable[LanguageRecord], shard_path: Union[str, Path]) -> int:
    """Write records as JSONL sorted by record_id; returns the count."""
    rows = _sorted_unique(records)
    atomic_write(Path(shard_path), "".join(_dump_line(r) + "\n" for r in rows))
    return len(rows)


def read_records(path: Union[str, Path]) -> list[LanguageRecord]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"{path}: cannot read: {exc}") from None
    out = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(LanguageRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise DataError(f"{path}:{n}: bad record: {exc}") from None
    return out


def merge_shards(paths: Iterable[Union[str, Path]], out_path: Union[str, Path]) -> int:
    """Merge shards into one corpus sorted by record_id. Output bytes do not
    depend on shard order or count."""
    records = []
    for p in paths:
        records.extend(read_records(p))
    return write_records(records, out_path)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def token_count(text: str) -> int:
    return len(text.split())


def stats(records: Iterable[LanguageRecord]) -> dict:
    by_kind_source: Counter = Counter()
    relations: Counter = Counter()
    types: Counter = Counter()
    lengths: dict[str, Counter] = {}
    raw_lengths: dict[str, list[int]] = {}
    scenes = set()
    total = 0
    for rec in records:
        total += 1
        scenes.add(rec.scene_id)
        by_kind_source[(rec.kind, rec.source)] += 1
        if rec.relation is not None:
            relations[rec.relation.value] += 1
            types[rec.relation.table_type] += 1
        n = token_count(rec.text)
        lengths.setdefault(rec.source, Counter())[n] += 1
        raw_lengths.setdefault(rec.source, []).append(n)

    counts: dict[str, dict[str, int]] = {}
    for (kind, source), n in sorted(by_kind_source.items()):
        counts.setdefault(kind, {})[source] = n
    return {
        "total_records": total,
        "scene_count": len(scenes),
        "counts": counts,
        "counts_by_kind": {k: sum(v.values()) for k, v in counts.items()},
        "relation_histogram": {t: types.get(t, 0) for t in TABLE_TYPES},
        "relation_histogram_detailed": {r.value: relations.get(r.value, 0) for r in RelationType},
        "length_histogram": {
            src: {str(k): v for k, v in sorted(h.items())} for src, h in sorted(lengths.items())
        },
        "length_summary": {
            src: {
                "count": len(v),
                "mean": round(statistics.fmean(v), 6),
                "median": float(statistics.median(v)),
            }
            for src, v in sorted(raw_lengths.items())
        },
    }


STATS_SCHEMA = {
    "type": "object",
    "required": [
        "total_records", "scene_count", "counts", "counts_by_kind",
        "relation_histogram", "relation_histogram_detailed", "length_histogram", "length_summary",
    ],
    "properties": {
        "total_records": {"type": "integer", "minimum": 0},
        "scene_count": {"type": "integer", "minimum": 0},
        "counts": {
            "type": "object",
            "propertyNames": {"enum": list(KINDS)},
            "additionalProperties": {
                "type": "object",
                "propertyNames": {"enum": list(SOURCES)},
                "additionalProperties": {"type": "integer", "minimum": 0},
            },
        },
        "counts_by_kind": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
        "relation_histogram": {
            "type": "object",
            "required": list(TABLE_TYPES),
            "propertyNames": {"enum": list(TABLE_TYPES)},
            "additionalProperties": {"type": "integer", "minimum": 0},
        },
        "relation_histogram_detailed": {
            "type": "object",
            "required": [r.value for r in RelationType],
            "propertyNames": {"enum": [r.value for r in RelationType]},
            "additionalProperties": {"type": "integer", "minimum": 0},
        },
        "length_histogram": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "propertyNames": {"pattern": "^[0-9]+$"},
                "additionalProperties": {"type": "integer", "minimum": 1},
            },
        },
        "length_summary": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["count", "mean", "median"],
                "properties": {
                    "count": {"type": "integer"},
                    "mean": {"type": "number"},
                    "median": {"type": "number"},
                },
            },
        },
    },
}


def stats_table(report: dict) -> str:
    lines = [
        f"records: {report['total_records']}",
        f"scenes:  {report['scene_count']}",
        "",
        f"{'kind':<18}{'source':<12}{'count':>8}",
    ]
    for kind, per in report["counts"].items():
        for source, n in per.items():
            lines.append(f"{kind:<18}{source:<12}{n:>8}")
    lines += ["", f"{'relation':<16}{'count':>8}"]
    for rel, n in report["relation_histogram"].items():
        lines.append(f"{rel:<16}{n:>8}")
    lines += ["", f"{'source':<12}{'n':>8}{'mean len':>10}{'median':>8}"]
    for src, s in report["length_summary"].items():
        lines.append(f"{src:<12}{s['count']:>8}{s['mean']:>10.2f}{s['median']:>8.1f}")
    return "\n".join(lines) + "\n"


def validate_stats(report: dict) -> None:
    try:
        jsonschema.validate(report, STATS_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise DataError(f"stats report does not match its schema: {exc.message}") from None


def write_stats(report: dict, json_path: Union[str, Path], text_path: Optional[Union[str, Path]] = None) -> None:
    validate_stats(report)
    atomic_write(Path(json_path), json.dumps(report, indent=1, sort_keys=True) + "\n")
    if text_path is not None:
        atomic_write(Path(text_path), stats_table(report))
