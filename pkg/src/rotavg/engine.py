"""Incremental rotation estimation.

A seed triplet is registered first; then, one vertex at a time, the
unregistered vertex with the largest supporting-edge reward is chained in,
locally refined, and every so often all registered rotations are jointly
re-optimised on their inlier edges.  The driver is parameterised by a
candidate filter and a termination predicate so the same machinery grows
full reconstructions, clusters and connected dominating sets.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import EmptyFrontier, NoValidSeed, Stalled
from .graph import EpipolarGraph, Registration, largest_component, triplet_array
from .so3 import UnitRotation, qconj, qmul, qrotangle
from .solver import ArrayProblem, SolveReport, solve_arrays

log = logging.getLogger(__name__)

IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])
# rewards within this of each other are ties (resolved by lowest index)
TIE_TOL = 1e-9


@dataclass
class EngineConfig:
    theta_th: float = 3.0  # degrees
    global_rate: float = 0.05
    local_max_iterations: int = 20
    global_max_iterations: int = 100
    use_cache: bool = True


@dataclass
class SeedResult:
    triplet: tuple[int, int, int]
    rotations: tuple[UnitRotation, UnitRotation, UnitRotation]
    reward: float
    deviation: float = 0.0  # chaining deviation in degrees


@dataclass
class Candidate:
    p: int
    m_star: int
    reward: float
    support_size: int
    init: UnitRotation
    support: tuple[int, ...] = ()


@dataclass
class TraceRecord:
    step: int
    chosen_vertex: int
    anchor_vertex: int
    reward: float
    support_size: int
    global_opt: bool
    cost_after: float
    self_support_only: bool = False
    cluster: int | None = None

    def to_json(self) -> str:
        d = asdict(self)
        if d["cluster"] is None:
            del d["cluster"]
        return json.dumps(d, sort_keys=True)


class IncrementalState:
    """Registered set, its rotations (in the seed's frame) and bookkeeping."""

    def __init__(self, g: EpipolarGraph, vertices: Iterable[int], theta_th: float, global_rate: float):
        self.n = g.n_vertices
        self.theta_th = float(theta_th)
        if self.theta_th <= 0:
            raise ValueError("theta_th must be positive")
        self.global_rate = float(global_rate)
        self.mask = np.zeros(self.n, dtype=bool)
        self.order: list[int] = []
        self.estimates = np.tile(IDENTITY_Q, (self.n, 1))
        self.remaining: set[int] = set(vertices)
        self.last_global_size = 0
        self.gauge: int | None = None
        self.inliers: set[int] = set()  # edge indices from the latest global pass
        self.last_cost = 0.0

    @property
    def selected(self) -> set[int]:
        return set(self.order)

    def add(self, v: int, q: np.ndarray) -> None:
        self.mask[v] = True
        self.order.append(v)
        self.estimates[v] = q
        self.remaining.discard(v)

    def registration(self) -> Registration:
        return {v: UnitRotation._trusted(self.estimates[v]) for v in sorted(self.order)}

    def frontier(self, g: EpipolarGraph) -> set[int]:
        out = set()
        for v in self.order:
            out.update(u for u in g.neighbors[v].tolist() if u in self.remaining)
        return out


# ---------------------------------------------------------------------------
# seeding

def _edge_lookup(g: EpipolarGraph, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    keys = g.edges[:, 0] * g.n_vertices + g.edges[:, 1]
    return np.searchsorted(keys, a * g.n_vertices + b)


def triplet_deviations(g: EpipolarGraph, triplets: np.ndarray) -> np.ndarray:
    """Chaining deviation ``d(R_jk, R_ik R_ij^T)`` in degrees per triplet."""
    if len(triplets) == 0:
        return np.zeros(0)
    i, j, k = triplets.T
    q_ij = g.quats[_edge_lookup(g, i, j)]
    q_ik = g.quats[_edge_lookup(g, i, k)]
    q_jk = g.quats[_edge_lookup(g, j, k)]
    chained = qmul(q_ik, qconj(q_ij))
    return np.degrees(qrotangle(qmul(qconj(q_jk), chained)))


def chaining_check(g: EpipolarGraph, t: tuple[int, int, int], theta_th: float = 3.0) -> tuple[bool, float]:
    dev = float(triplet_deviations(g, np.array([sorted(t)]))[0])
    return dev < theta_th, dev


def optimize_triplet(g: EpipolarGraph, t: tuple[int, int, int]) -> tuple[np.ndarray, SolveReport]:
    """Chain-initialise a triplet (first vertex = I) and minimise its 3 residuals."""
    i, j, k = t
    q0 = np.array([IDENTITY_Q, g.rel_quat(i, j), g.rel_quat(i, k)])
    p = ArrayProblem(
        ids=np.array([i, j, k]),
        q0=q0,
        fixed=np.array([True, False, False]),
        ti=np.array([0, 0, 1]),
        tj=np.array([1, 2, 2]),
        meas=np.array([g.rel_quat(i, j), g.rel_quat(i, k), g.rel_quat(j, k)]),
    )
    return solve_arrays(p)


def triplet_reward(g: EpipolarGraph, t: tuple[int, int, int], q: np.ndarray) -> float:
    """Sum of cos(residual angle) over the triplet's three edges."""
    i, j, k = t
    pos = {i: 0, j: 1, k: 2}
    total = 0.0
    for a, b in ((i, j), (i, k), (j, k)):
        pred = qmul(q[pos[b]], qconj(q[pos[a]]))
        total += math.cos(float(qrotangle(qmul(qconj(g.rel_quat(a, b)), pred))))
    return total


def select_seed(g: EpipolarGraph, theta_th: float = 3.0, vertices: Iterable[int] | None = None) -> SeedResult:
    """Best-rewarded triplet among those passing the chaining check.

    For a 3-cycle the optimal residuals split the chaining deviation evenly,
    so the optimised reward is ``3 cos(dev / 3)``; triplets are ranked with
    that closed form (ties: lexicographic order) and the winner is optimised.
    """
    tri = triplet_array(g)
    if vertices is not None:
        allowed = np.zeros(g.n_vertices, dtype=bool)
        allowed[list(vertices)] = True
        tri = tri[allowed[tri].all(axis=1)]
    dev = triplet_deviations(g, tri)
    ok = dev < theta_th
    if not ok.any():
        raise NoValidSeed("no triplet passes the chaining check")
    tri, dev = tri[ok], dev[ok]
    score = 3.0 * np.cos(np.radians(dev) / 3.0)
    best = int(np.flatnonzero(score >= score.max() - TIE_TOL)[0])
    t = tuple(int(x) for x in tri[best])
    q, _ = optimize_triplet(g, t)
    rots = tuple(UnitRotation._trusted(x) for x in q)
    return SeedResult(triplet=t, rotations=rots, reward=triplet_reward(g, t, q), deviation=float(dev[best]))


def state_from_seed(g: EpipolarGraph, seed: SeedResult, vertices: Iterable[int], config: EngineConfig) -> IncrementalState:
    state = IncrementalState(g, vertices, config.theta_th, config.global_rate)
    for v, r in zip(seed.triplet, seed.rotations):
        state.add(v, r.q)
    state.gauge = seed.triplet[0]
    state.last_global_size = 3
    return state


# ---------------------------------------------------------------------------
# next-best-vertex selection

def _evaluate(g: EpipolarGraph, state: IncrementalState, p: int) -> Candidate | None:
    nb = g.neighbors[p]
    sel = state.mask[nb]
    if not sel.any():
        return None
    ms = nb[sel]
    # R_p^m = R_mp R_m; by right-invariance d(R_np, R_p^m R_n^T) = d(R_p^n, R_p^m)
    pre = qmul(g.rel_into[p][sel], state.estimates[ms])
    dots = np.abs(pre @ pre.T)
    np.fill_diagonal(dots, 1.0)
    supp = dots > math.cos(math.radians(state.theta_th) / 2.0)
    cosd = np.minimum(2.0 * dots * dots - 1.0, 1.0)
    reward = np.where(supp, cosd, 0.0).sum(axis=1)
    best = int(np.flatnonzero(reward >= reward.max() - TIE_TOL)[0])
    row = supp[best]
    return Candidate(
        p=int(p),
        m_star=int(ms[best]),
        reward=float(reward[best]),
        support_size=int(row.sum()),
        init=UnitRotation._trusted(pre[best]),
        support=tuple(int(x) for x in ms[row]),
    )


def candidate_rewards(g: EpipolarGraph, state: IncrementalState, candidates: Iterable[int]) -> list[Candidate]:
    """Per-candidate best anchor, reward, support size and chained initialisation."""
    out = []
    for p in sorted(candidates):
        c = _evaluate(g, state, p)
        if c is None:
            log.debug("candidate %d has no edge into the registered set; skipped", p)
            continue
        out.append(c)
    return out


def select_nbv(rewards: Iterable[Candidate]) -> Candidate:
    best = None
    for c in rewards:
        if best is None or c.reward > best.reward + TIE_TOL or (abs(c.reward - best.reward) <= TIE_TOL and c.p < best.p):
            best = c
    if best is None:
        raise EmptyFrontier("no candidate to select")
    return best


# ---------------------------------------------------------------------------
# optimisation

def _local(g: EpipolarGraph, state: IncrementalState, p: int, init: np.ndarray, max_iterations: int):
    nb = g.neighbors[p]
    sel = state.mask[nb]
    ms = nb[sel]
    rel = g.rel_into[p][sel]
    # inliers judged against the chained initialisation
    pred = qmul(init[None, :], qconj(state.estimates[ms]))
    keep = qrotangle(qmul(qconj(rel), pred)) < math.radians(state.theta_th)
    ms, rel = ms[keep], rel[keep]
    k = len(ms)
    prob = ArrayProblem(
        ids=np.append(ms, p),
        q0=np.vstack([state.estimates[ms], init[None, :]]),
        fixed=np.append(np.ones(k, dtype=bool), False),
        ti=np.arange(k),
        tj=np.full(k, k),
        meas=rel,
        max_iterations=max_iterations,
    )
    q, report = solve_arrays(prob)
    return q[-1], report


def local_optimize(g: EpipolarGraph, state: IncrementalState, p_star: int, init: UnitRotation,
                   max_iterations: int = 20) -> UnitRotation:
    q, _ = _local(g, state, p_star, init.q, max_iterations)
    return UnitRotation._trusted(q)


def inlier_edges(g: EpipolarGraph, estimates: np.ndarray, mask: np.ndarray, theta_th: float) -> np.ndarray:
    """Indices of edges inside ``mask`` whose residual is below ``theta_th`` degrees."""
    inside = np.flatnonzero(mask[g.edges[:, 0]] & mask[g.edges[:, 1]])
    i = g.edges[inside, 0]
    j = g.edges[inside, 1]
    pred = qmul(estimates[j], qconj(estimates[i]))
    ang = qrotangle(qmul(qconj(g.quats[inside]), pred))
    return inside[ang < math.radians(theta_th)]


def optimize_on_edges(g: EpipolarGraph, estimates: np.ndarray, vertices: np.ndarray, edge_idx: np.ndarray,
                      fixed: Iterable[int], max_iterations: int = 100) -> tuple[np.ndarray, SolveReport]:
    """Jointly refine ``vertices`` on the given edges; returns updated estimates copy."""
    vertices = np.asarray(sorted(vertices), dtype=np.int64)
    pos = np.full(g.n_vertices, -1, dtype=np.int64)
    pos[vertices] = np.arange(len(vertices))
    fixed_mask = np.zeros(len(vertices), dtype=bool)
    for v in fixed:
        fixed_mask[pos[v]] = True
    prob = ArrayProblem(
        ids=vertices,
        q0=estimates[vertices],
        fixed=fixed_mask,
        ti=pos[g.edges[edge_idx, 0]],
        tj=pos[g.edges[edge_idx, 1]],
        meas=g.quats[edge_idx],
        max_iterations=max_iterations,
    )
    q, report = solve_arrays(prob)
    out = estimates.copy()
    out[vertices] = q
    return out, report


def global_optimize(g: EpipolarGraph, state: IncrementalState, max_iterations: int = 100) -> SolveReport:
    """Re-classify internal edges against current estimates and refine all rotations."""
    if len(state.order) < 3:
        raise ValueError("global optimisation needs at least 3 registered vertices")
    idx = inlier_edges(g, state.estimates, state.mask, state.theta_th)
    state.estimates, report = optimize_on_edges(
        g, state.estimates, np.asarray(state.order), idx, [state.gauge], max_iterations
    )
    state.inliers = set(idx.tolist())
    state.last_global_size = len(state.order)
    state.last_cost = report.final_cost
    return report


def global_due(state: IncrementalState) -> bool:
    return len(state.order) >= state.last_global_size * (1.0 + state.global_rate) - 1e-9


def accept(g: EpipolarGraph, state: IncrementalState, cand: Candidate, config: EngineConfig,
           step: int, cluster: int | None = None) -> TraceRecord:
    """Local refinement of the chosen vertex, registration, and cadence-driven global pass."""
    q, rep = _local(g, state, cand.p, cand.init.q, config.local_max_iterations)
    state.add(cand.p, q)
    cost = rep.final_cost
    did_global = False
    if global_due(state):
        cost = global_optimize(g, state, config.global_max_iterations).final_cost
        did_global = True
    return TraceRecord(
        step=step,
        chosen_vertex=cand.p,
        anchor_vertex=cand.m_star,
        reward=cand.reward,
        support_size=cand.support_size,
        global_opt=did_global,
        cost_after=cost,
        self_support_only=cand.support_size == 1,
        cluster=cluster,
    )


class CandidateCache:
    """Per-state memo of candidate evaluations.

    An entry depends only on the registered neighbours of the candidate, so
    registering ``v`` invalidates the candidates adjacent to ``v`` and a global
    pass invalidates everything.
    """

    def __init__(self, g: EpipolarGraph, state: IncrementalState, enabled: bool = True):
        self.g = g
        self.state = state
        self.enabled = enabled
        self.entries: dict[int, Candidate] = {}

    def get(self, p: int) -> Candidate | None:
        if self.enabled and p in self.entries:
            return self.entries[p]
        c = _evaluate(self.g, self.state, p)
        if c is not None and self.enabled:
            self.entries[p] = c
        return c

    def registered(self, v: int) -> None:
        self.entries.pop(v, None)
        for u in self.g.neighbors[v].tolist():
            self.entries.pop(u, None)

    def drop(self, v: int) -> None:
        self.entries.pop(v, None)

    def clear(self) -> None:
        self.entries.clear()


# ---------------------------------------------------------------------------
# driver

@dataclass
class IncrementalResult:
    registration: Registration
    inliers: set[tuple[int, int]]
    trace: list[TraceRecord]
    final_cost: float = 0.0
    state: IncrementalState | None = field(default=None, repr=False)

    def __iter__(self):
        return iter((self.registration, self.inliers, self.trace))


def _edge_pairs(g: EpipolarGraph, idx: Iterable[int]) -> set[tuple[int, int]]:
    return {(int(g.edges[k, 0]), int(g.edges[k, 1])) for k in idx}


def run_incremental(
    g: EpipolarGraph,
    config: EngineConfig | None = None,
    candidate_filter: Callable[[int, IncrementalState], bool] | None = None,
    termination: Callable[[IncrementalState], bool] | None = None,
    vertices: Iterable[int] | None = None,
    seed: SeedResult | None = None,
) -> IncrementalResult:
    """Seed, then grow until ``termination(state)`` or the frontier is exhausted."""
    config = config or EngineConfig()
    vertices = sorted(set(vertices)) if vertices is not None else largest_component(g)
    if seed is None:
        seed = select_seed(g, config.theta_th, vertices)
    state = state_from_seed(g, seed, vertices, config)
    cache = CandidateCache(g, state, config.use_cache)
    frontier = state.frontier(g)
    trace: list[TraceRecord] = []
    step = 0
    if termination is None:
        def termination(s: IncrementalState) -> bool:
            return not s.remaining

    while not termination(state):
        if not state.remaining:
            break
        if not frontier:
            raise Stalled(f"{len(state.remaining)} vertices unreachable from the registered set")
        pool = [p for p in sorted(frontier) if candidate_filter is None or candidate_filter(p, state)]
        if not pool:
            break
        cands = [c for c in (cache.get(p) for p in pool) if c is not None]
        choice = select_nbv(cands)
        step += 1
        n_global = state.last_global_size
        rec = accept(g, state, choice, config, step)
        trace.append(rec)
        frontier.discard(choice.p)
        frontier.update(u for u in g.neighbors[choice.p].tolist() if u in state.remaining)
        if rec.global_opt or state.last_global_size != n_global:
            cache.clear()
        else:
            cache.registered(choice.p)
        log.log(5, "step %d: vertex %d (anchor %d, reward %.4f)", step, choice.p, choice.m_star, choice.reward)

    report = global_optimize(g, state, config.global_max_iterations)
    return IncrementalResult(
        registration=state.registration(),
        inliers=_edge_pairs(g, state.inliers),
        trace=trace,
        final_cost=report.final_cost,
        state=state,
    )


def write_trace(trace: Iterable[TraceRecord], dest) -> None:
    for rec in trace:
        dest.write(rec.to_json() + "\n")
