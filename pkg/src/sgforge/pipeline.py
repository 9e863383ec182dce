"""Batch stages over directories of scenes.

Output layout under the run directory::

    scenes/<id>.json            normalized scenes that passed the filter
    ingest_report.json          per-scene preprocessing report, rejections
    graphs/<id>.json            scene graphs
    shards/referrals/<id>.jsonl referral and scene-caption records
    shards/captions/<id>.jsonl  object-caption records
    captions_audit/<id>.json    selected caption candidates per object
    corpus.jsonl                merged corpus
    stats.json, stats.txt       corpus statistics
    manifest.json               inputs, config digest, seeds, output digests

Scenes are independent, so each stage maps a worker over scenes. Results are
written per scene and merged in sorted order, so the output does not depend on
the worker count.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, TypeVar, Union

import numpy as np

from . import __version__
from .caption import caption_scene, http_clients, load_cameras, stub_clients
from .config import RunConfig
from .corpus import atomic_write, merge_shards, read_records, stats, write_records, write_stats
from .errors import DataError
from .graph_builder import (
    build_scene_graph,
    default_refinement_map,
    dumps_graph,
    load_graph,
    load_refinement_map,
)
from .ingest import load_label_map, load_scene, preprocess, save_scene_json
from .langgen.records import scene_language
from .langgen.rephrase import make_client
from .langgen.templates import load_pool
from .seeding import derive_seed

log = logging.getLogger(__name__)

T = TypeVar("T")
SCENE_SUFFIXES = (".json", ".ply")


def pmap(fn: Callable[..., T], items: Sequence, jobs: int) -> list[T]:
    """Ordered map, in-process for one job, over worker processes otherwise."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def scene_files(path: Union[str, Path], suffixes: Iterable[str] = SCENE_SUFFIXES) -> list[Path]:
    path = Path(path)
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise DataError(f"input {path} does not exist")
    return sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() in tuple(suffixes))


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fresh_dir(path: Path, pattern: str) -> Path:
    """Create ``path`` and drop stale stage outputs matching ``pattern`` from an earlier run."""
    path.mkdir(parents=True, exist_ok=True)
    for old in path.glob(pattern):
        old.unlink()
    return path


def _write_json(path: Path, doc) -> None:
    atomic_write(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def _ingest_one(args) -> dict:
    path, cfg, label_map, out = args
    scene = load_scene(path)
    seed = derive_seed(cfg.seed, scene.scene_id, "subsample")
    res = preprocess(scene, cfg.ingest, label_map, seed)
    rep = {"input": str(path), **res.report()}
    if res.decision.keep:
        save_scene_json(res.scene, Path(out) / "scenes" / f"{res.scene.scene_id}.json")
    return rep


def run_ingest(cfg: RunConfig, input_path: Union[str, Path], out: Union[str, Path]) -> dict:
    out = Path(out)
    files = scene_files(input_path)
    label_map = load_label_map(cfg.ingest.label_map_path) if cfg.ingest.label_map_path else {}
    fresh_dir(out / "scenes", "*.json")
    reports = pmap(_ingest_one, [(p, cfg, label_map, str(out)) for p in files], cfg.jobs)
    ids = [r["scene_id"] for r in reports]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise DataError(f"duplicate scene ids across inputs: {dup}")
    reports.sort(key=lambda r: r["scene_id"])
    doc = {
        "scenes": reports,
        "kept": [r["scene_id"] for r in reports if r["keep"]],
        "rejected": [{"scene_id": r["scene_id"], "rule": r["rule"], "value": r["value"]} for r in reports if not r["keep"]],
    }
    _write_json(out / "ingest_report.json", doc)
    for r in doc["rejected"]:
        log.info("rejected %s: %s = %s", r["scene_id"], r["rule"], r["value"])
    return doc


def _refinement(cfg: RunConfig) -> dict:
    return load_refinement_map(cfg.refinement_map) if cfg.refinement_map else default_refinement_map()


def _graph_one(args) -> str:
    path, cfg, refinement, out = args
    scene = load_scene(path)
    seed = derive_seed(cfg.seed, scene.scene_id, "graph")
    graph = build_scene_graph(scene, cfg.graph, refinement, seed)
    target = Path(out) / "graphs" / f"{scene.scene_id}.json"
    atomic_write(target, dumps_graph(graph))
    return str(target)


def run_build_graph(cfg: RunConfig, scenes_path: Union[str, Path], out: Union[str, Path]) -> list[str]:
    out = Path(out)
    fresh_dir(out / "graphs", "*.json")
    refinement = _refinement(cfg)
    files = scene_files(scenes_path)
    return pmap(_graph_one, [(p, cfg, refinement, str(out)) for p in files], cfg.jobs)


def _lang_one(args) -> str:
    path, cfg, out = args
    graph = load_graph(path)
    pool = load_pool(cfg.template_pool)
    c = cfg.clients
    client = make_client(c.rephrase, c.rephrase_url, c.rephrase_stub_mode, c.timeout_s)
    records = scene_language(graph, pool, cfg.lang, cfg.seed, client)
    target = Path(out) / "shards" / "referrals" / f"{graph.scene_id}.jsonl"
    write_records(records, target)
    return str(target)


def run_gen_lang(cfg: RunConfig, graphs_path: Union[str, Path], out: Union[str, Path]) -> list[str]:
    out = Path(out)
    load_pool(cfg.template_pool)  # fail on a bad pool before any worker starts
    fresh_dir(out / "shards" / "referrals", "*.jsonl")
    files = scene_files(graphs_path, (".json",))
    return pmap(_lang_one, [(p, cfg, str(out)) for p in files], cfg.jobs)


def _transforms(out: Path) -> dict[str, np.ndarray]:
    report = out / "ingest_report.json"
    if not report.exists():
        return {}
    doc = json.loads(report.read_text(encoding="utf-8"))
    return {r["scene_id"]: np.array(r["transform"], dtype=np.float64).reshape(4, 4) for r in doc["scenes"]}


def _caption_one(args) -> tuple[str, int, int]:
    path, cfg, cameras_dir, transform, out = args
    scene = load_scene(path)
    cam_file = Path(cameras_dir) / f"{scene.scene_id}.json"
    if not cam_file.exists():
        log.warning("%s: no camera file, skipped", scene.scene_id)
        return ("", 0, 0)
    cameras = load_cameras(cam_file)
    if transform is not None:
        # camera files are in the raw scan frame; scenes were normalized by ``transform``
        inv = np.linalg.inv(transform)
        cameras = [c.composed(inv) for c in cameras]
    c = cfg.clients
    clients = stub_clients() if c.captioner == "stub" else http_clients(
        c.captioner_url, c.scorer_url, c.summarizer_url, c.timeout_s
    )
    records, audit = caption_scene(scene, cameras, clients, cfg.caption, cfg.seed)
    target = Path(out) / "shards" / "captions" / f"{scene.scene_id}.jsonl"
    write_records(records, target)
    _write_json(Path(out) / "captions_audit" / f"{scene.scene_id}.json", audit)
    client_failures = sum(1 for a in audit if a.get("skipped") == "client-error")
    return (str(target), len(records), client_failures)


def run_captions(
    cfg: RunConfig, scenes_path: Union[str, Path], cameras_dir: Union[str, Path], out: Union[str, Path]
) -> list[tuple[str, int, int]]:
    out = Path(out)
    fresh_dir(out / "shards" / "captions", "*.jsonl")
    fresh_dir(out / "captions_audit", "*.json")
    transforms = _transforms(out)
    items = []
    for p in scene_files(scenes_path, (".json", ".ply")):
        sid = p.stem
        items.append((p, cfg, str(cameras_dir), transforms.get(sid), str(out)))
    return pmap(_caption_one, items, cfg.jobs)


def shard_paths(out: Union[str, Path]) -> list[Path]:
    return sorted(Path(out).glob("shards/*/*.jsonl"))


def run_merge(out: Union[str, Path]) -> int:
    out = Path(out)
    return merge_shards(shard_paths(out), out / "corpus.jsonl")


def run_stats(corpus: Union[str, Path], json_path: Union[str, Path], text_path: Optional[Union[str, Path]] = None) -> dict:
    corpus = Path(corpus)
    report = stats(read_records(corpus)) if corpus.stat().st_size else stats([])
    write_stats(report, json_path, text_path)
    return report


def write_manifest(cfg: RunConfig, inputs: Sequence[Path], out: Union[str, Path]) -> dict:
    out = Path(out)
    outputs = sorted(
        p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json" and not p.name.startswith(".")
    )
    doc = {
        "version": __version__,
        "config": cfg.to_dict() | {"out": None, "jobs": None},
        "config_digest": cfg.digest(),
        "graph_config_digest": cfg.graph.digest(),
        "seed": cfg.seed,
        "inputs": [{"path": str(p), "sha256": sha256_file(p)} for p in inputs],
        "graphs": sorted(p.stem for p in (out / "graphs").glob("*.json")),
        "outputs": [{"path": str(p.relative_to(out)), "sha256": sha256_file(p)} for p in outputs],
    }
    _write_json(out / "manifest.json", doc)
    return doc


def run_all(cfg: RunConfig, input_path: Union[str, Path], out: Union[str, Path], cameras: Optional[Union[str, Path]] = None) -> dict:
    out = Path(out)
    inputs = scene_files(input_path)
    ingest = run_ingest(cfg, input_path, out)
    run_build_graph(cfg, out / "scenes", out)
    run_gen_lang(cfg, out / "graphs", out)
    cameras = cameras or cfg.cameras
    if cameras:
        run_captions(cfg, out / "scenes", cameras, out)
    n = run_merge(out)
    report = run_stats(out / "corpus.jsonl", out / "stats.json", out / "stats.txt")
    write_manifest(cfg, inputs, out)
    return {"scenes_in": len(inputs), "scenes_kept": len(ingest["kept"]), "records": n, "stats": report}
