"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 client error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import CAPTIONER_CHOICES, REPHRASE_CHOICES, RunConfig, load_config
from .errors import ClientError, ConfigError, DataError, SGFError

log = logging.getLogger("sgforge")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are configuration errors
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, input_help: Optional[str] = None) -> None:
    p.add_argument("--config", help="TOML or JSON run configuration")
    if input_help:
        p.add_argument("--input", required=True, help=input_help)
    p.add_argument("--out", help="output directory (default from config, else ./out)")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sgforge", description="Point clouds to scene graphs to scene-language corpora.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="subsample, normalize, relabel and filter scenes")
    _common(p, "scene file or directory of .json/.ply scenes")

    p = sub.add_parser("build-graph", help="build a scene graph per scene")
    _common(p, "normalized scene file or directory")

    p = sub.add_parser("gen-lang", help="generate referral and scene-caption shards from graphs")
    _common(p, "graph file or directory")
    p.add_argument("--rephrase", choices=REPHRASE_CHOICES)

    p = sub.add_parser("caption-objects", help="caption objects from posed views")
    _common(p, "normalized scene file or directory")
    p.add_argument("--cameras", help="directory of <scene_id>.json camera files")
    p.add_argument("--captioner", choices=CAPTIONER_CHOICES)

    p = sub.add_parser("stats", help="corpus statistics")
    _common(p, "corpus JSONL file")

    p = sub.add_parser("run-all", help="every stage, then merge, stats and manifest")
    _common(p, "scene file or directory of raw scenes")
    p.add_argument("--cameras", help="directory of <scene_id>.json camera files")
    p.add_argument("--rephrase", choices=REPHRASE_CHOICES)
    p.add_argument("--captioner", choices=CAPTIONER_CHOICES)

    p = sub.add_parser("synth", help="write a seeded synthetic scene suite with cameras")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", type=int, default=12)
    p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _config(args) -> RunConfig:
    overrides: dict = {}
    for key in ("seed", "jobs", "out"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "cameras", None):
        overrides["cameras"] = args.cameras
    clients = {k: getattr(args, k) for k in ("rephrase", "captioner") if getattr(args, k, None)}
    if clients:
        overrides["clients"] = clients
    return load_config(args.config, overrides)


def _emit(doc) -> None:
    print(json.dumps(doc, indent=1, sort_keys=True))


def cmd_ingest(args) -> int:
    from .pipeline import run_ingest

    cfg = _config(args)
    doc = run_ingest(cfg, args.input, cfg.out)
    _emit({"kept": len(doc["kept"]), "rejected": doc["rejected"]})
    return 0


def cmd_build_graph(args) -> int:
    from .pipeline import run_build_graph

    cfg = _config(args)
    paths = run_build_graph(cfg, args.input, cfg.out)
    _emit({"graphs": len(paths)})
    return 0


def cmd_gen_lang(args) -> int:
    from .pipeline import run_gen_lang, run_merge

    cfg = _config(args)
    shards = run_gen_lang(cfg, args.input, cfg.out)
    n = run_merge(cfg.out)
    _emit({"shards": len(shards), "records": n})
    return 0


def cmd_caption_objects(args) -> int:
    from .pipeline import run_captions, run_merge

    cfg = _config(args)
    if not cfg.cameras:
        raise ConfigError("caption-objects needs --cameras (or cameras in the config)")
    results = run_captions(cfg, args.input, cfg.cameras, cfg.out)
    captioned = sum(r[1] for r in results)
    failures = sum(r[2] for r in results)
    n = run_merge(cfg.out)
    _emit({"captions": captioned, "client_failures": failures, "records": n})
    if failures and not captioned:
        raise ClientError(f"all {failures} objects failed at the caption clients")
    return 0


def cmd_stats(args) -> int:
    from .corpus import stats_table
    from .pipeline import run_stats

    _config(args)  # validates --config and SGF_ overrides
    corpus = Path(args.input)
    out = Path(args.out) if args.out else corpus.parent
    if not corpus.is_file():
        raise DataError(f"{corpus}: cannot read corpus")
    report = run_stats(corpus, out / "stats.json", out / "stats.txt")
    sys.stdout.write(stats_table(report))
    return 0


def cmd_run_all(args) -> int:
    from .pipeline import run_all

    cfg = _config(args)
    result = run_all(cfg, args.input, cfg.out, cfg.cameras)
    _emit({k: v for k, v in result.items() if k != "stats"})
    return 0


def cmd_synth(args) -> int:
    from .synthetic import write_suite

    paths = write_suite(args.out, args.count, args.seed, args.views)
    _emit({"scenes": len(paths), "out": str(args.out)})
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "build-graph": cmd_build_graph,
    "gen-lang": cmd_gen_lang,
    "caption-objects": cmd_caption_objects,
    "stats": cmd_stats,
    "run-all": cmd_run_all,
    "synth": cmd_synth,
    "serve": cmd_serve,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SGFError as exc:
        print(f"sgforge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
