"""Text generation from scene graphs: templates, prompts, rephrasing and record selection."""

from .prompts import RephraseRequest, SceneSample, ScenePrompt, build_prompt, build_scene_prompt
from .records import LangConfig, scene_language
from .rephrase import HttpRephraseClient, RephraseResult, StubRephraseClient, make_client, rephrase
from .templates import ClusterKind, TemplatePool, classify_star, gen_multi, gen_pairwise, gen_star, load_pool
