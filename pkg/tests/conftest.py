from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sgforge.graph_builder import GraphConfig, build_scene_graph, default_refinement_map  # noqa: E402
from sgforge.synthetic import scene_from_boxes, synthetic_suite  # noqa: E402

SPEC_BOXES = [
    ("floor", (0.0, 0.0, 0.0), (4.0, 4.0, 0.05)),
    ("table", (1.0, 1.0, 0.05), (2.0, 2.0, 0.8)),
    ("cup", (1.4, 1.4, 0.8), (1.6, 1.6, 0.9)),
    ("chair", (2.5, 1.2, 0.05), (3.0, 1.7, 0.9)),
]


@pytest.fixture(scope="session")
def spec_scene():
    """Floor, table, cup on the table and a chair to the right of the table."""
    return scene_from_boxes("spec", SPEC_BOXES, seed=1)


@pytest.fixture(scope="session")
def suite():
    return synthetic_suite(100, 0)


@pytest.fixture(scope="session")
def refinement():
    return default_refinement_map()


@pytest.fixture(scope="session")
def suite_graphs(suite, refinement):
    cfg = GraphConfig()
    return [build_scene_graph(s, cfg, refinement) for s in suite]
