"""Robust incremental rotation averaging on epipolar-geometry graphs."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DidNotConverge,
    DisconnectedStructure,
    EmptyIntersection,
    NearPiAmbiguity,
    NoAlignmentPath,
    NoValidSeed,
    ParseError,
    RotavgError,
    Stalled,
)
from .graph import EpipolarGraph, load_graph, load_rotations, save_graph, save_rotations  # noqa: E402
from .so3 import UnitRotation, angular_distance  # noqa: E402
from .pipelines import RunConfig, run_pipeline  # noqa: E402
from .metrics import align_and_score  # noqa: E402

__all__ = [
    "ConfigError", "DidNotConverge", "DisconnectedStructure", "EmptyIntersection", "NearPiAmbiguity",
    "NoAlignmentPath", "NoValidSeed", "ParseError", "RotavgError", "Stalled",
    "EpipolarGraph", "load_graph", "load_rotations", "save_graph", "save_rotations",
    "UnitRotation", "angular_distance", "RunConfig", "run_pipeline", "align_and_score",
]
