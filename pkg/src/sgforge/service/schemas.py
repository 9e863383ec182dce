"""Request and response models."""

from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field


class Health(BaseModel):
    status: str = "ok"
    version: str


class GraphRequest(BaseModel):
    scene: dict[str, Any] = Field(description="canonical JSON scene")
    preprocess: bool = Field(False, description="subsample, normalize and relabel before building")
    label_map: dict[str, str] = Field(default_factory=dict)
    graph_config: dict[str, Any] = Field(default_factory=dict)
    seed: int = 0


class GraphResponse(BaseModel):
    graph: dict[str, Any]
    transform: Optional[list[float]] = None
    violations: list[str] = Field(default_factory=list)


class LanguageRequest(BaseModel):
    graph: dict[str, Any]
    seed: int = 0
    referrals_per_scene: int = Field(10, ge=0)
    star_per_scene: int = Field(2, ge=0)
    scene_captions_per_scene: int = Field(1, ge=0)
    rephrase: Literal["none", "stub"] = "none"


class RecordsResponse(BaseModel):
    records: list[dict[str, Any]]


class ScenePromptRequest(BaseModel):
    graph: dict[str, Any]
    max_nodes: int = Field(30, ge=0)
    max_edges: int = Field(20, ge=0)
    seed: int = 0


class ScenePromptResponse(BaseModel):
    payload: dict[str, Any]
    prompt: str


class StatsRequest(BaseModel):
    records: list[dict[str, Any]]


class RephraseWire(BaseModel):
    kind: str
    prompt: str = ""
    text: str


class TextWire(BaseModel):
    text: str


class VisionWire(BaseModel):
    task: Literal["caption", "score", "summarize"]
    image_crop_ref: Optional[dict[str, Any]] = None
    label: Optional[str] = None
    texts: list[str] = Field(default_factory=list)
    prompt: Optional[str] = None
    target: Optional[str] = None
