"""End-to-end solvers: plain incremental, clustered with reference alignment, and a baseline."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import networkx as nx
import numpy as np

from .align import (
    AlignmentRotation,
    edge_induced_estimates,
    estimate_cluster_alignment,
    global_align_and_optimize,
)
from .cds import ReferenceSet, task_specific_cds, traditional_cds
from .clusters import MIN_COMMUNITY_SIZE, community_seeds, grow_clusters
from .engine import EngineConfig, TraceRecord, inlier_edges, run_incremental, triplet_deviations
from .errors import ConfigError, NoValidSeed
from .graph import Edge, EpipolarGraph, Registration, largest_component, triplet_array
from .so3 import UnitRotation

log = logging.getLogger(__name__)

MODES = ("ira", "irav4", "irav3plus-ref", "spanning-tree")


@dataclass
class RunConfig:
    mode: str = "irav4"
    theta_th: float = 3.0
    global_rate: float = 0.05
    clusters: str | int = "auto"
    rng_seed: int = 0
    freeze_reference: bool = False
    min_community_size: int = MIN_COMMUNITY_SIZE
    n_cds: int = 3  # randomized traditional CDSs unioned for irav3plus-ref
    local_max_iterations: int = 20
    global_max_iterations: int = 100

    def __post_init__(self):
        if self.mode == "spanning-tree-baseline":
            self.mode = "spanning-tree"
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if not (self.theta_th > 0 and math.isfinite(self.theta_th)):
            raise ConfigError("theta_th must be a positive number of degrees")
        if not self.global_rate > 0:
            raise ConfigError("global_rate must be positive")
        if self.clusters != "auto":
            try:
                self.clusters = int(self.clusters)
            except (TypeError, ValueError):
                raise ConfigError(f"clusters must be 'auto' or a positive integer, got {self.clusters!r}")
            if self.clusters < 1:
                raise ConfigError("clusters must be at least 1")
        if self.min_community_size < 1 or self.n_cds < 1:
            raise ConfigError("min_community_size and n_cds must be positive")

    def engine(self) -> EngineConfig:
        return EngineConfig(
            theta_th=self.theta_th,
            global_rate=self.global_rate,
            local_max_iterations=self.local_max_iterations,
            global_max_iterations=self.global_max_iterations,
        )

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class PipelineResult:
    rotations: Registration
    inliers: set[Edge] | None
    final_cost: float
    mode: str
    reference_size: int | None = None
    clusters: list[dict] = field(default_factory=list)
    assignment: dict[int, int] = field(default_factory=dict)
    trace: list[TraceRecord] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    reference: ReferenceSet | None = field(default=None, repr=False)

    def summary(self) -> dict:
        out = {
            "mode": self.mode,
            "n_registered": len(self.rotations),
            "final_cost": self.final_cost,
            "n_inliers": None if self.inliers is None else len(self.inliers),
        }
        if self.reference_size is not None:
            out["reference_size"] = self.reference_size
        if self.clusters:
            out["n_clusters"] = len(self.clusters)
            out["clusters"] = self.clusters
        return out


# ---------------------------------------------------------------------------
# baseline

def triplet_support(g: EpipolarGraph, theta_th: float = 3.0) -> np.ndarray:
    """Per-edge count of triangles through it that pass the chaining check."""
    t = triplet_array(g)
    counts = np.zeros(g.n_edges, dtype=np.int64)
    if len(t) == 0:
        return counts
    ok = t[triplet_deviations(g, t) < theta_th]
    n = g.n_vertices
    keys = g.edges[:, 0] * n + g.edges[:, 1]
    for a, b in ((0, 1), (1, 2), (0, 2)):
        np.add.at(counts, np.searchsorted(keys, ok[:, a] * n + ok[:, b]), 1)
    return counts


def spanning_tree_chain(g: EpipolarGraph, theta_th: float = 3.0, vertices=None) -> Registration:
    """Chain measurements along a maximum-support spanning tree (BFS from the lowest vertex)."""
    vertices = sorted(set(vertices)) if vertices is not None else largest_component(g)
    inside = set(vertices)
    w = triplet_support(g, theta_th)
    G = nx.Graph()
    G.add_nodes_from(vertices)
    for k, (i, j) in enumerate(g.edges.tolist()):
        if i in inside and j in inside:
            G.add_edge(i, j, weight=int(w[k]))
    tree = nx.maximum_spanning_tree(G, weight="weight")
    root = vertices[0]
    rots: Registration = {root: UnitRotation.identity()}
    for parent, child in nx.bfs_edges(tree, root, sort_neighbors=sorted):
        rots[child] = g.measurement(parent, child) @ rots[parent]
    return dict(sorted(rots.items()))


# ---------------------------------------------------------------------------
# pipelines

def _inlier_pairs(g: EpipolarGraph, rots: Registration, theta_th: float) -> set[Edge]:
    est = np.tile([1.0, 0.0, 0.0, 0.0], (g.n_vertices, 1))
    mask = np.zeros(g.n_vertices, dtype=bool)
    for v, r in rots.items():
        est[v] = r.q
        mask[v] = True
    idx = inlier_edges(g, est, mask, theta_th)
    return {(int(g.edges[k, 0]), int(g.edges[k, 1])) for k in idx.tolist()}


def _run_ira(g: EpipolarGraph, cfg: RunConfig, vertices: list[int]) -> PipelineResult:
    res = run_incremental(g, cfg.engine(), vertices=vertices)
    return PipelineResult(res.registration, res.inliers, res.final_cost, "ira", trace=res.trace)


def _run_spanning_tree(g: EpipolarGraph, cfg: RunConfig, vertices: list[int]) -> PipelineResult:
    rots = spanning_tree_chain(g, cfg.theta_th, vertices)
    return PipelineResult(rots, _inlier_pairs(g, rots, cfg.theta_th), float("nan"), "spanning-tree")


def randomized_reference(g: EpipolarGraph, cfg: RunConfig, vertices: list[int]) -> ReferenceSet:
    """Union of randomized traditional CDSs, rotations from the incremental engine.

    The engine runs on the sub-EG induced by the union.  Coverage-driven CDSs
    are often triangle-free; when the union holds no valid seed the engine is
    seeded on the whole component and then admits only union members.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    wanted: set[int] = set()
    for _ in range(cfg.n_cds):
        wanted |= set(traditional_cds(g, vertices=vertices, rng=rng).members)
    try:
        res = run_incremental(g, cfg.engine(), vertices=sorted(wanted))
    except NoValidSeed:
        log.info("CDS union (%d vertices) has no valid triplet; seeding on the component", len(wanted))

        def only_members(p: int, state) -> bool:
            return p in wanted

        def done(state) -> bool:
            return wanted <= set(state.order)

        res = run_incremental(g, cfg.engine(), candidate_filter=only_members, termination=done, vertices=vertices)
    return ReferenceSet(
        members=sorted(res.registration),
        rotations=res.registration,
        algorithm="traditional+engine",
        gauge=res.state.gauge,
        engine=res,
    )


def _run_clustered(g: EpipolarGraph, cfg: RunConfig, vertices: list[int]) -> PipelineResult:
    ecfg = cfg.engine()
    timings = {}
    t0 = time.perf_counter()
    n_clusters = None if cfg.clusters == "auto" else int(cfg.clusters)
    seeds = community_seeds(g, cfg.rng_seed, cfg.theta_th, vertices, n_clusters, cfg.min_community_size)
    cs = grow_clusters(g, seeds, ecfg, vertices)
    timings["clusters"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if cfg.mode == "irav4":
        ref = task_specific_cds(g, ecfg, vertices)
    else:
        ref = randomized_reference(g, cfg, vertices)
    timings["reference"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    frames = cs.local_frames
    alignments: list[AlignmentRotation] = []
    info = []
    for cid, frame in enumerate(frames):
        a = estimate_cluster_alignment(g, frame, ref.rotations, cfg.theta_th, cid)
        alignments.append(a)
        info.append({
            "cluster": cid,
            "size": len(frame),
            "common_vertices": len(set(frame) & set(ref.rotations)),
            "cross_edges": len(edge_induced_estimates(g, frame, ref.rotations, cid)),
            "support": a.support,
            "source": a.source,
            "alignment_angle": a.angle,
        })
    gres = global_align_and_optimize(
        g, frames, ref.rotations, alignments, cfg.theta_th,
        gauge=ref.gauge, freeze_reference=cfg.freeze_reference,
        max_iterations=cfg.global_max_iterations,
    )
    timings["alignment"] = time.perf_counter() - t0
    return PipelineResult(
        gres.rotations, gres.inlier_edges, gres.final_cost, cfg.mode,
        reference_size=ref.n_ref, clusters=info, assignment=cs.assignment,
        trace=cs.trace, timings=timings, reference=ref,
    )


def run_pipeline(g: EpipolarGraph, cfg: RunConfig | None = None) -> PipelineResult:
    """Run the configured solver on the largest connected component of ``g``."""
    cfg = cfg or RunConfig()
    vertices = largest_component(g)
    t0 = time.perf_counter()
    if cfg.mode == "spanning-tree":
        res = _run_spanning_tree(g, cfg, vertices)
    elif cfg.mode == "ira" or cfg.clusters == 1:
        res = _run_ira(g, cfg, vertices)
    else:
        res = _run_clustered(g, cfg, vertices)
    res.timings["total"] = time.perf_counter() - t0
    return res
