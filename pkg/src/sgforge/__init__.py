"""Scene-graph and scene-language corpus generation for annotated indoor point clouds."""

__version__ = "0.1.0"
