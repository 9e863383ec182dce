"""FastAPI application.

The batch CLI runs the core in-process; this service exposes the same
functions per request for interactive use, and hosts stub endpoints that
answer in the rephrase and vision client wire formats.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..caption import StubCaptioner, StubScorer, StubSummarizer
from ..corpus import LanguageRecord, stats
from ..errors import ConfigError, SGFError
from ..graph_builder import GraphConfig, build_scene_graph, default_refinement_map, graph_from_dict, graph_to_dict
from ..ingest import IngestConfig, preprocess, scene_from_dict
from ..langgen.prompts import RephraseRequest, SceneSample, build_scene_prompt
from ..langgen.records import LangConfig, scene_language
from ..langgen.rephrase import StubRephraseClient
from ..langgen.templates import load_default_pool
from ..scene_model import validate_graph
from ..seeding import derive_seed
from . import schemas


def create_app() -> FastAPI:
    app = FastAPI(title="sgforge", version=__version__)

    @app.exception_handler(SGFError)
    async def _sgf_error(request: Request, exc: SGFError):
        status = 400 if isinstance(exc, ConfigError) else 422
        return JSONResponse(status_code=status, content={"error": type(exc).__name__, "detail": str(exc)})

    @app.get("/health", response_model=schemas.Health)
    def health():
        return schemas.Health(version=__version__)

    @app.post("/graph", response_model=schemas.GraphResponse)
    def graph(req: schemas.GraphRequest):
        scene = scene_from_dict(req.scene, "request")
        transform = None
        if req.preprocess:
            res = preprocess(scene, IngestConfig(seed=req.seed), req.label_map, derive_seed(req.seed, scene.scene_id, "subsample"))
            scene, transform = res.scene, [float(v) for v in res.transform.ravel()]
        try:
            cfg = GraphConfig(**{"seed": req.seed, **req.graph_config})
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        g = build_scene_graph(scene, cfg, default_refinement_map(), derive_seed(req.seed, scene.scene_id, "graph"))
        return schemas.GraphResponse(
            graph=graph_to_dict(g), transform=transform, violations=[str(v) for v in validate_graph(g)]
        )

    @app.post("/language", response_model=schemas.RecordsResponse)
    def language(req: schemas.LanguageRequest):
        g = graph_from_dict(req.graph)
        cfg = LangConfig(req.referrals_per_scene, req.star_per_scene, req.scene_captions_per_scene)
        client = StubRephraseClient() if req.rephrase == "stub" else None
        records = scene_language(g, load_default_pool(), cfg, req.seed, client)
        return schemas.RecordsResponse(records=[r.to_dict() for r in records])

    @app.post("/scene-prompt", response_model=schemas.ScenePromptResponse)
    def scene_prompt(req: schemas.ScenePromptRequest):
        g = graph_from_dict(req.graph)
        if not g.nodes:
            raise HTTPException(422, "graph has no nodes")
        p = build_scene_prompt(g, SceneSample(req.max_nodes, req.max_edges), req.seed)
        return schemas.ScenePromptResponse(payload=p.payload, prompt=p.prompt)

    @app.post("/stats")
    def corpus_stats(req: schemas.StatsRequest):
        try:
            records = [LanguageRecord.from_dict(d) for d in req.records]
        except (KeyError, ValueError, TypeError) as exc:
            raise HTTPException(422, f"bad record: {exc}") from None
        return stats(records)

    # -- stub clients -------------------------------------------------------

    @app.post("/stub/rephrase", response_model=schemas.TextWire)
    def stub_rephrase(req: schemas.RephraseWire):
        # identity stub: echoes the text field
        return schemas.TextWire(text=StubRephraseClient().complete(RephraseRequest("referral-simple", text=req.text)))

    @app.post("/stub/vision")
    def stub_vision(req: schemas.VisionWire):
        ref = req.image_crop_ref or {}
        image, rect = str(ref.get("image", "")), tuple(ref.get("rect", (0, 0, 0, 0)))
        if req.task == "caption":
            return {"text": StubCaptioner().caption(image, rect, req.label or "object")}
        if req.task == "score":
            return {"score": StubScorer().score(image, rect, req.texts[0] if req.texts else "")}
        if not req.texts:
            raise HTTPException(422, "summarize needs texts")
        return {"text": StubSummarizer().summarize(req.prompt or "", req.texts, req.target or "")}

    return app
