"""Connected dominating sets used as the global alignment reference.

Two extractors:

* :func:`traditional_cds`, the greedy white/gray/black colouring that grows
  a tree from the highest-degree vertex by repeatedly blackening the gray
  vertex covering most white vertices;
* :func:`task_specific_cds`, which grows the set with the incremental
  estimator (most reliable vertex first) and stops as soon as the registered
  set dominates the graph, so rotations come for free.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .engine import EngineConfig, IncrementalResult, IncrementalState, run_incremental
from .errors import TooLarge
from .graph import EpipolarGraph, Registration, is_connected, largest_component

log = logging.getLogger(__name__)


class Color(Enum):
    WHITE = 0
    GRAY = 1
    BLACK = 2


@dataclass
class ReferenceSet:
    members: list[int]
    rotations: Registration = field(default_factory=dict)
    connected: bool = True
    dominating: bool = True
    e_ref: float | None = None
    algorithm: str = ""
    gauge: int | None = None
    engine: IncrementalResult | None = field(default=None, repr=False)

    @property
    def n_ref(self) -> int:
        return len(self.members)


def is_connected_dominating(g: EpipolarGraph, s: Iterable[int], vertices: Iterable[int] | None = None) -> bool:
    """``s`` induces a connected subgraph and every vertex is in or next to it."""
    s = set(s)
    if not s:
        return False
    universe = set(range(g.n_vertices)) if vertices is None else set(vertices)
    if not s <= universe or not is_connected(g, s):
        return False
    covered = set(s)
    for v in s:
        covered.update(g.neighbors[v].tolist())
    return universe <= covered


def traditional_cds(
    g: EpipolarGraph,
    weighting: str = "none",
    weights: Mapping[tuple[int, int], float] | None = None,
    vertices: Iterable[int] | None = None,
    rng: np.random.Generator | None = None,
) -> ReferenceSet:
    """Greedy colouring CDS.

    ``weighting="degree"`` scores a vertex by the summed weights of its edges
    to white vertices (``weights`` keyed by ``(i, j)``, ``i < j``; missing
    entries count as 1).  Ties go to the lowest index, or follow a random
    permutation when ``rng`` is given.
    """
    if weighting not in ("none", "degree"):
        raise ValueError(f"unknown weighting {weighting!r}")
    universe = sorted(set(vertices)) if vertices is not None else largest_component(g)
    inside = set(universe)
    rank = {v: k for k, v in enumerate(universe)}
    if rng is not None:
        perm = rng.permutation(len(universe))
        rank = {v: int(perm[k]) for k, v in enumerate(universe)}

    def w(a: int, b: int) -> float:
        if weighting == "none" or weights is None:
            return 1.0
        return float(weights.get((min(a, b), max(a, b)), 1.0))

    color = {v: Color.WHITE for v in universe}

    def white_score(v: int) -> float:
        return sum(w(v, u) for u in g.neighbors[v].tolist() if u in inside and color[u] is Color.WHITE)

    def pick(pool: Iterable[int]) -> int:
        return max(pool, key=lambda v: (white_score(v), -rank[v]))

    black: list[int] = []

    def blacken(v: int) -> None:
        color[v] = Color.BLACK
        black.append(v)
        for u in g.neighbors[v].tolist():
            if u in inside and color[u] is Color.WHITE:
                color[u] = Color.GRAY

    if len(universe) == 1:
        blacken(universe[0])
    elif universe:
        blacken(pick(universe))
    while any(c is Color.WHITE for c in color.values()):
        gray = [v for v in universe if color[v] is Color.GRAY]
        blacken(pick(gray))
    members = sorted(black)
    return ReferenceSet(
        members=members,
        connected=is_connected(g, members) if members else False,
        dominating=is_connected_dominating(g, members, universe),
        algorithm="traditional",
    )


class DominationTracker:
    """Termination predicate: true once the registered set dominates ``vertices``.

    Keeps a per-vertex count of registered closed neighbours, updated only
    for newly registered vertices (O(degree) per step).
    """

    def __init__(self, g: EpipolarGraph, vertices: Iterable[int]):
        self.g = g
        self.inside = np.zeros(g.n_vertices, dtype=bool)
        self.inside[list(vertices)] = True
        self.hits = np.zeros(g.n_vertices, dtype=np.int64)
        self.missing = int(self.inside.sum())
        self._seen = 0

    def _mark(self, v: int) -> None:
        if self.inside[v]:
            if self.hits[v] == 0:
                self.missing -= 1
            self.hits[v] += 1

    def __call__(self, state: IncrementalState) -> bool:
        for v in state.order[self._seen:]:
            self._mark(v)
            for u in self.g.neighbors[v].tolist():
                self._mark(u)
        self._seen = len(state.order)
        return self.missing == 0


def task_specific_cds(
    g: EpipolarGraph,
    config: EngineConfig | None = None,
    vertices: Iterable[int] | None = None,
) -> ReferenceSet:
    """Grow a CDS with the incremental estimator; rotations are in the seed's frame."""
    config = config or EngineConfig()
    universe = sorted(set(vertices)) if vertices is not None else largest_component(g)
    tracker = DominationTracker(g, universe)
    res = run_incremental(g, config, termination=tracker, vertices=universe)
    members = sorted(res.registration)
    return ReferenceSet(
        members=members,
        rotations=res.registration,
        connected=is_connected(g, members),
        dominating=is_connected_dominating(g, members, universe),
        algorithm="task-specific",
        gauge=res.state.gauge if res.state else None,
        engine=res,
    )


def brute_force_min_cds(g: EpipolarGraph, vertices: Iterable[int] | None = None) -> list[int]:
    """Smallest CDS by exhaustive search (lexicographically first among minima)."""
    universe = sorted(set(vertices)) if vertices is not None else list(range(g.n_vertices))
    if len(universe) > 16:
        raise TooLarge(f"brute force limited to 16 vertices, got {len(universe)}")
    for size in range(1, len(universe) + 1):
        for combo in itertools.combinations(universe, size):
            if is_connected_dominating(g, combo, universe):
                return list(combo)
    raise ValueError("graph is not connected")
