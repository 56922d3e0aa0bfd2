"""Cluster-to-reference alignment and the final global refinement.

Frame convention: a cluster-local rotation maps to the reference frame by
right multiplication, ``R_global = R_local @ s``.  Under ``R_j = R_ij R_i``
this is exactly the gauge freedom, so ``s`` can be read off any vertex
shared with the reference (``s = R_local^T R_ref``) or chained through any
edge ``(m, p)`` with ``m`` in the reference and ``p`` in the cluster
(``s = R_p_local^T R_mp R_m_ref``).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .engine import inlier_edges, optimize_on_edges
from .errors import NoAlignmentPath
from .graph import Edge, EpipolarGraph, Registration
from .so3 import UnitRotation, qconj, qexp, qlog, qmul, qrotangle
from .solver import ArrayProblem, SolveReport, solve_arrays

log = logging.getLogger(__name__)


@dataclass
class AlignmentRotation:
    cluster: int
    s: UnitRotation
    support: int
    source: str  # "vertex" or "edge"
    anchor: tuple[int, ...] = ()  # (vertex,) or (m, p)

    @property
    def angle(self) -> float:
        return self.s.angle


@dataclass
class GlobalResult:
    rotations: Registration
    inlier_edges: set[Edge]
    final_cost: float
    aligned_cost: float = 0.0
    report: SolveReport | None = None
    stats: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# single rotation averaging

def _chordal_mean(q: np.ndarray) -> np.ndarray:
    # principal eigenvector of sum q q^T is sign-invariant
    w, v = np.linalg.eigh(q.T @ q)
    m = v[:, -1]
    return m if m[0] >= 0 else -m


def single_rotation_average(items: list[UnitRotation], mode: str = "geodesic_l1",
                            max_iterations: int = 100, tol: float = 1e-10) -> UnitRotation:
    """Chordal L2 (quaternion eigen-mean) or geodesic L1 (Weiszfeld on SO(3))."""
    if not items:
        raise ValueError("nothing to average")
    q = np.array([r.q for r in items])
    mean = _chordal_mean(q)
    if mode == "chordal_l2":
        return UnitRotation(mean)
    if mode != "geodesic_l1":
        raise ValueError(f"unknown averaging mode {mode!r}")
    for _ in range(max_iterations):
        v = qlog(qmul(qconj(mean)[None, :], q))
        d = np.linalg.norm(v, axis=1)
        keep = d > 1e-12
        if not keep.any():
            break
        n_at = int((~keep).sum())
        if n_at and np.linalg.norm((v[keep] / d[keep][:, None]).sum(axis=0)) <= n_at:
            break  # sitting on a data point that is the L1 minimiser
        w = 1.0 / d[keep]
        step = (v[keep] * w[:, None]).sum(axis=0) / w.sum()
        mean = qmul(mean, qexp(step))
        if np.linalg.norm(step) < tol:
            break
    return UnitRotation(mean)


# ---------------------------------------------------------------------------
# alignment candidates

def vertex_induced_estimates(cluster_frame: Registration, reference: Registration,
                             cluster: int = 0) -> list[AlignmentRotation]:
    out = []
    for v in sorted(set(cluster_frame) & set(reference)):
        s = cluster_frame[v].inverse() @ reference[v]
        out.append(AlignmentRotation(cluster, s, 0, "vertex", (v,)))
    return out


def edge_induced_estimates(g: EpipolarGraph, cluster_frame: Registration, reference: Registration,
                           cluster: int = 0) -> list[AlignmentRotation]:
    """One estimate per ordered pair ``(m, p)``: ``m`` in the reference, ``p`` in the cluster."""
    out = []
    for m in sorted(reference):
        for p in g.neighbors[m].tolist():
            if p == m or p not in cluster_frame:
                continue
            s = cluster_frame[p].inverse() @ g.measurement(m, p) @ reference[m]
            out.append(AlignmentRotation(cluster, s, 0, "edge", (m, p)))
    return out


def _refine(init: UnitRotation, targets: np.ndarray) -> UnitRotation:
    """Minimise sum d^2(T_e, s) over s: an anchor fixed at I, one term per target."""
    k = len(targets)
    if k == 0:
        return init
    prob = ArrayProblem(
        ids=np.array([-1, 0]),
        q0=np.array([[1.0, 0.0, 0.0, 0.0], init.q]),
        fixed=np.array([True, False]),
        ti=np.zeros(k, dtype=np.int64),
        tj=np.ones(k, dtype=np.int64),
        meas=targets,
        max_iterations=20,
    )
    q, _ = solve_arrays(prob)
    return UnitRotation._trusted(q[1])


def estimate_cluster_alignment(g: EpipolarGraph, cluster_frame: Registration, reference: Registration,
                               theta_th: float = 3.0, cluster: int = 0) -> AlignmentRotation:
    """Most-supported vertex-induced estimate, refined on its edge-induced supporters.

    Supporters of a candidate are the edge-induced estimates within
    ``theta_th`` of it.  Ranking: more supporters, then vertex- before
    edge-induced, then lower anchor.  With no shared vertex the edge-induced
    estimates compete among themselves.
    """
    verts = vertex_induced_estimates(cluster_frame, reference, cluster)
    edges = edge_induced_estimates(g, cluster_frame, reference, cluster)
    if not verts and not edges:
        raise NoAlignmentPath(f"cluster {cluster} shares neither a vertex nor an edge with the reference")
    eq = np.array([e.s.q for e in edges]).reshape(-1, 4)
    cos_half = math.cos(math.radians(theta_th) / 2.0)

    def supporters(c: AlignmentRotation) -> np.ndarray:
        if not len(eq):
            return np.zeros(0, dtype=bool)
        return np.abs(eq @ c.s.q) > cos_half

    pool = verts if verts else edges
    best = None
    best_mask = None
    for c in pool:
        mask = supporters(c)
        n = int(mask.sum())
        if best is None or n > best.support:
            best, best_mask = AlignmentRotation(cluster, c.s, n, c.source, c.anchor), mask
    s = _refine(best.s, eq[best_mask]) if best_mask is not None and best_mask.any() else best.s
    return AlignmentRotation(cluster, s, best.support, best.source, best.anchor)


# ---------------------------------------------------------------------------
# global alignment

def align_frames(cluster_frames: list[Registration], alignments: list[AlignmentRotation],
                 reference: Registration) -> Registration:
    """Map every cluster into the reference frame; reference members keep their value."""
    out: Registration = {}
    for frame, a in zip(cluster_frames, alignments):
        for v, r in frame.items():
            out[v] = r @ a.s
    out.update(reference)
    return dict(sorted(out.items()))


def global_align_and_optimize(
    g: EpipolarGraph,
    cluster_frames: list[Registration],
    reference: Registration,
    alignments: list[AlignmentRotation],
    theta_th: float = 3.0,
    gauge: int | None = None,
    freeze_reference: bool = False,
    max_iterations: int = 100,
) -> GlobalResult:
    """Align all clusters, classify every edge once, then refine jointly."""
    if len(cluster_frames) != len(alignments):
        raise ValueError("one alignment per cluster required")
    aligned = align_frames(cluster_frames, alignments, reference)
    verts = np.array(sorted(aligned), dtype=np.int64)
    est = np.tile([1.0, 0.0, 0.0, 0.0], (g.n_vertices, 1))
    for v, r in aligned.items():
        est[v] = r.q
    mask = np.zeros(g.n_vertices, dtype=bool)
    mask[verts] = True
    idx = inlier_edges(g, est, mask, theta_th)
    if gauge is None:
        gauge = min(reference) if reference else int(verts[0])
    fixed = sorted(reference) if freeze_reference else [gauge]
    new_est, report = optimize_on_edges(g, est, verts, idx, fixed, max_iterations)
    rots = {int(v): UnitRotation._trusted(new_est[v]) for v in verts}
    inl = {(int(g.edges[k, 0]), int(g.edges[k, 1])) for k in idx.tolist()}
    return GlobalResult(rots, inl, report.final_cost, aligned_cost=report.initial_cost, report=report)
