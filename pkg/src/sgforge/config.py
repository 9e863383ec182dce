"""Run configuration: one TOML (or JSON) file, SGF_ environment overrides,
then command-line flags, in increasing precedence."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .caption import CaptionConfig
from .errors import ConfigError
from .graph_builder import GraphConfig
from .ingest import IngestConfig
from .langgen.prompts import SceneSample
from .langgen.records import LangConfig

ENV_PREFIX = "SGF_"
TOP_LEVEL = ("seed", "out", "jobs")
REPHRASE_CHOICES = ("none", "stub", "http")
CAPTIONER_CHOICES = ("stub", "http")


@dataclass(frozen=True)
class ClientConfig:
    rephrase: str = "none"
    rephrase_url: Optional[str] = None
    rephrase_stub_mode: str = "identity"
    captioner: str = "stub"
    captioner_url: Optional[str] = None
    scorer_url: Optional[str] = None
    summarizer_url: Optional[str] = None
    timeout_s: float = 30.0

    def __post_init__(self):
        if self.rephrase not in REPHRASE_CHOICES:
            raise ConfigError(f"rephrase must be one of {REPHRASE_CHOICES}, got {self.rephrase!r}")
        if self.captioner not in CAPTIONER_CHOICES:
            raise ConfigError(f"captioner must be one of {CAPTIONER_CHOICES}, got {self.captioner!r}")
        if self.rephrase == "http" and not self.rephrase_url:
            raise ConfigError("rephrase = http needs clients.rephrase_url")
        if self.captioner == "http" and not (self.captioner_url and self.scorer_url and self.summarizer_url):
            raise ConfigError("captioner = http needs captioner_url, scorer_url and summarizer_url")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "out"
    jobs: int = 1
    ingest: IngestConfig = field(default_factory=IngestConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    lang: LangConfig = field(default_factory=LangConfig)
    caption: CaptionConfig = field(default_factory=CaptionConfig)
    clients: ClientConfig = field(default_factory=ClientConfig)
    template_pool: Optional[str] = None
    refinement_map: Optional[str] = None
    cameras: Optional[str] = None

    def __post_init__(self):
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out": self.out,
            "jobs": self.jobs,
            "template_pool": self.template_pool,
            "refinement_map": self.refinement_map,
            "cameras": self.cameras,
            "ingest": {**dataclasses.asdict(self.ingest), "floor_labels": sorted(self.ingest.floor_labels)},
            "graph": self.graph.to_dict(),
            "lang": {
                **{k: v for k, v in dataclasses.asdict(self.lang).items() if k != "scene_sample"},
                "structural_labels": list(self.lang.structural_labels),
                "max_nodes": self.lang.scene_sample.max_nodes,
                "max_edges": self.lang.scene_sample.max_edges,
            },
            "caption": {**dataclasses.asdict(self.caption), "skip_labels": list(self.caption.skip_labels)},
            "clients": dataclasses.asdict(self.clients),
        }

    def digest(self) -> str:
        """Hash of everything that can change outputs (not out dir or worker count)."""
        d = self.to_dict()
        for k in ("out", "jobs"):
            d.pop(k)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def check_paths(self) -> None:
        for what, p in (
            ("label map", self.ingest.label_map_path),
            ("template pool", self.template_pool),
            ("refinement map", self.refinement_map),
            ("camera directory", self.cameras),
        ):
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{what} {p} does not exist")


SECTIONS = ("ingest", "graph", "lang", "caption", "clients")
_TOP_PATHS = ("template_pool", "refinement_map", "cameras")


def _build(section: str, cls, values: Mapping[str, Any]):
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def config_from_dict(doc: Mapping[str, Any]) -> RunConfig:
    known = set(TOP_LEVEL) | set(_TOP_PATHS) | set(SECTIONS)
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    seed = int(doc.get("seed", 0))
    ingest = dict(doc.get("ingest", {}))
    ingest.setdefault("seed", seed)
    graph = dict(doc.get("graph", {}))
    graph.setdefault("seed", seed)
    lang = dict(doc.get("lang", {}))
    sample = SceneSample(int(lang.pop("max_nodes", SceneSample.max_nodes)), int(lang.pop("max_edges", SceneSample.max_edges)))
    if "structural_labels" in lang:
        lang["structural_labels"] = tuple(lang["structural_labels"])
    caption = dict(doc.get("caption", {}))
    if "skip_labels" in caption:
        caption["skip_labels"] = tuple(caption["skip_labels"])
    return RunConfig(
        seed=seed,
        out=str(doc.get("out", "out")),
        jobs=int(doc.get("jobs", 1)),
        ingest=_build("ingest", IngestConfig, ingest),
        graph=_build("graph", GraphConfig, graph),
        lang=_build("lang", LangConfig, {**lang, "scene_sample": sample}),
        caption=_build("caption", CaptionConfig, caption),
        clients=_build("clients", ClientConfig, dict(doc.get("clients", {}))),
        template_pool=doc.get("template_pool"),
        refinement_map=doc.get("refinement_map"),
        cameras=doc.get("cameras"),
    )


def read_config_file(path: Union[str, Path]) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_env_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_overrides(environ: Mapping[str, str]) -> dict:
    """Map SGF_SEED, SGF_JOBS, SGF_GRAPH_NEAR_MAX_M, ... onto config keys."""
    out: dict = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        value = _parse_env_value(environ[name])
        if key in TOP_LEVEL or key in _TOP_PATHS:
            out[key] = value
            continue
        for section in SECTIONS:
            if key.startswith(section + "_"):
                out.setdefault(section, {})[key[len(section) + 1:]] = value
                break
        else:
            raise ConfigError(f"environment variable {name} does not name a config key")
    return out


def merge(base: Mapping, extra: Mapping) -> dict:
    out = {k: (dict(v) if isinstance(v, Mapping) else v) for k, v in base.items()}
    for k, v in extra.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    doc = read_config_file(path) if path else {}
    doc = merge(doc, env_overrides(os.environ if environ is None else environ))
    if overrides:
        doc = merge(doc, overrides)
    cfg = config_from_dict(doc)
    cfg.check_paths()
    return cfg
