"""Community-seeded clustering with per-cluster incremental estimation.

Communities come from modularity maximisation; each community contributes a
seed triplet.  Unassigned vertices are then absorbed one at a time: every
cluster scores its frontier with the same reward as the single-cluster
engine, and the best (vertex, cluster) pair over all clusters wins.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable

import networkx as nx
from networkx.algorithms.community import greedy_modularity_communities, louvain_communities

from .engine import (
    TIE_TOL,
    CandidateCache,
    EngineConfig,
    IncrementalState,
    SeedResult,
    TraceRecord,
    accept,
    global_optimize,
    select_nbv,
    select_seed,
    state_from_seed,
)
from .errors import NoValidSeed, Stalled
from .graph import EpipolarGraph, Registration, largest_component

log = logging.getLogger(__name__)

MIN_COMMUNITY_SIZE = 10


def to_networkx(g: EpipolarGraph, vertices: Iterable[int]) -> nx.Graph:
    vs = set(vertices)
    G = nx.Graph()
    G.add_nodes_from(sorted(vs))
    G.add_edges_from((i, j) for i, j in g.edges.tolist() if i in vs and j in vs)
    return G


def detect_communities(
    g: EpipolarGraph,
    vertices: Iterable[int],
    rng_seed: int = 0,
    n_clusters: int | None = None,
    min_size: int = MIN_COMMUNITY_SIZE,
) -> list[list[int]]:
    """Modularity communities, small ones merged into their largest neighbour.

    Louvain (resolution 1.0) by default; ``n_clusters`` switches to greedy
    agglomeration cut at that many communities.
    """
    G = to_networkx(g, vertices)
    if n_clusters is not None:
        comms = greedy_modularity_communities(G, resolution=1.0, cutoff=n_clusters, best_n=n_clusters)
    else:
        comms = louvain_communities(G, resolution=1.0, seed=rng_seed)
    comms = sorted((sorted(c) for c in comms), key=lambda c: c[0])

    while len(comms) > 1:
        small = [k for k, c in enumerate(comms) if len(c) < min_size]
        if not small:
            break
        k = min(small, key=lambda k: (len(comms[k]), comms[k][0]))
        owner = {v: idx for idx, c in enumerate(comms) for v in c}
        adjacent = {owner[u] for v in comms[k] for u in G.neighbors(v)} - {k}
        if not adjacent:
            break
        target = max(adjacent, key=lambda a: (len(comms[a]), -comms[a][0]))
        comms[target] = sorted(comms[target] + comms[k])
        del comms[k]
        comms.sort(key=lambda c: c[0])
    return comms


def community_seeds(
    g: EpipolarGraph,
    rng_seed: int = 0,
    theta_th: float = 3.0,
    vertices: Iterable[int] | None = None,
    n_clusters: int | None = None,
    min_size: int = MIN_COMMUNITY_SIZE,
) -> list[SeedResult]:
    """One seed triplet per community that contains a valid one."""
    vertices = sorted(set(vertices)) if vertices is not None else largest_component(g)
    seeds = []
    for comm in detect_communities(g, vertices, rng_seed, n_clusters, min_size):
        try:
            seeds.append(select_seed(g, theta_th, comm))
        except NoValidSeed:
            log.info("community of %d vertices has no valid triplet; dissolved", len(comm))
    if not seeds:
        raise NoValidSeed("no community yields a valid seed triplet")
    return seeds


@dataclass
class ClusterState:
    clusters: list[IncrementalState]
    assignment: dict[int, int] = field(default_factory=dict)
    trace: list[TraceRecord] = field(default_factory=list)

    @property
    def local_frames(self) -> list[Registration]:
        return [c.registration() for c in self.clusters]

    def members(self, cid: int) -> list[int]:
        return sorted(self.clusters[cid].order)

    def assignment_json(self) -> str:
        return json.dumps({str(v): c for v, c in sorted(self.assignment.items())}, sort_keys=False)


def grow_clusters(
    g: EpipolarGraph,
    seeds: list[SeedResult],
    config: EngineConfig | None = None,
    vertices: Iterable[int] | None = None,
) -> ClusterState:
    """Absorb every vertex of ``vertices`` into one of the seeded clusters."""
    config = config or EngineConfig()
    vertices = sorted(set(vertices)) if vertices is not None else largest_component(g)
    seen: set[int] = set()
    for s in seeds:
        if seen & set(s.triplet):
            raise ValueError("seeds must be vertex-disjoint")
        seen |= set(s.triplet)

    states = [state_from_seed(g, s, vertices, config) for s in seeds]
    unassigned = set(vertices) - seen
    for st in states:
        st.remaining = unassigned  # shared: a vertex leaves every cluster's pool at once
    caches = [CandidateCache(g, st, config.use_cache) for st in states]
    cs = ClusterState(states)
    for cid, s in enumerate(seeds):
        for v in s.triplet:
            cs.assignment[v] = cid

    step = 0
    while unassigned:
        best = None
        best_cid = -1
        for cid, st in enumerate(states):
            pool = sorted(st.frontier(g))
            cands = [c for c in (caches[cid].get(p) for p in pool) if c is not None]
            if not cands:
                continue
            c = select_nbv(cands)
            if best is None or c.reward > best.reward + TIE_TOL:
                best, best_cid = c, cid
        if best is None:
            raise Stalled(f"{len(unassigned)} vertices have no edge into any cluster")
        step += 1
        st = states[best_cid]
        n_global = st.last_global_size
        rec = accept(g, st, best, config, step, cluster=best_cid)
        cs.trace.append(rec)
        cs.assignment[best.p] = best_cid
        for cid, cache in enumerate(caches):
            if cid != best_cid:
                cache.drop(best.p)
        if st.last_global_size != n_global:
            caches[best_cid].clear()
        else:
            caches[best_cid].registered(best.p)

    for st in states:
        if len(st.order) >= 3:
            global_optimize(g, st, config.global_max_iterations)
    return cs
