"""Evaluation: gauge-aligned rotation errors, graph statistics, outlier scores."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .align import single_rotation_average
from .errors import EmptyIntersection
from .graph import Edge, EpipolarGraph, Registration
from .so3 import UnitRotation, angular_distance, qconj, qmul, qrotangle


@dataclass
class EvalReport:
    n_common: int
    median_error: float
    mean_error: float
    alignment: UnitRotation
    per_vertex_errors: dict[int, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "n_common": self.n_common,
            "median_error": self.median_error,
            "mean_error": self.mean_error,
            "alignment": [float(x) for x in self.alignment.q],
        }


def align_and_score(est: Registration, gt: Registration, mode: str = "geodesic_l1") -> EvalReport:
    """Remove the gauge (best right-multiplied rotation), then score per vertex in degrees."""
    common = sorted(set(est) & set(gt))
    if not common:
        raise EmptyIntersection("estimate and ground truth share no vertex")
    candidates = [est[v].inverse() @ gt[v] for v in common]
    s = single_rotation_average(candidates, mode)
    errs = {v: angular_distance(est[v] @ s, gt[v]) for v in common}
    vals = np.array(list(errs.values()))
    return EvalReport(len(common), float(np.median(vals)), float(np.mean(vals)), s, errs)


@dataclass
class GraphStats:
    n_v: int
    n_v_star: int | None
    n_e: int
    median_rel_err: float | None = None
    mean_rel_err: float | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def relative_errors(g: EpipolarGraph, gt: Registration) -> np.ndarray:
    """Per-edge ``d(R_ij, R_j R_i^T)`` in degrees, edges with both ends in ``gt``."""
    keep = np.array([i in gt and j in gt for i, j in g.edges.tolist()], dtype=bool)
    if not keep.any():
        return np.zeros(0)
    e = g.edges[keep]
    qi = np.array([gt[i].q for i in e[:, 0].tolist()])
    qj = np.array([gt[j].q for j in e[:, 1].tolist()])
    pred = qmul(qj, qconj(qi))
    return np.degrees(qrotangle(qmul(qconj(g.quats[keep]), pred)))


def graph_stats(g: EpipolarGraph, gt: Registration | None = None) -> GraphStats:
    active = g.active_vertices()
    st = GraphStats(n_v=len(active), n_v_star=None, n_e=g.n_edges)
    if gt is not None:
        st.n_v_star = len(set(active) & set(gt))
        err = relative_errors(g, gt)
        if len(err):
            st.median_rel_err = float(np.median(err))
            st.mean_rel_err = float(np.mean(err))
    return st


def reference_accuracy(ref, gt: Registration, mode: str = "geodesic_l1") -> float:
    """Median aligned error of a reference set's own rotations."""
    if not ref.rotations:
        raise EmptyIntersection("reference carries no rotations")
    restricted = {v: ref.rotations[v] for v in ref.members if v in ref.rotations}
    e = align_and_score(restricted, gt, mode).median_error
    ref.e_ref = e
    return e


@dataclass
class OutlierScores:
    precision: float
    recall: float
    inlier_precision: float
    n_predicted: int
    n_labelled: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def outlier_scores(inliers: set[Edge], labels: dict[Edge, bool]) -> OutlierScores:
    """Precision/recall of the predicted outliers (edges not kept) against injected labels.

    Also reports ``inlier_precision``: the clean fraction of the kept edges.
    Empty predicted sets score precision 1.
    """
    kept = {(min(i, j), max(i, j)) for i, j in inliers}
    predicted = {e for e in labels if e not in kept}
    truth = {e for e, bad in labels.items() if bad}
    tp = len(predicted & truth)
    precision = tp / len(predicted) if predicted else 1.0
    recall = tp / len(truth) if truth else 1.0
    kept_in = [e for e in kept if e in labels]
    inlier_precision = sum(not labels[e] for e in kept_in) / len(kept_in) if kept_in else 1.0
    return OutlierScores(precision, recall, inlier_precision, len(predicted), len(truth))
