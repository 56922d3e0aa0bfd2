"""Synthetic rotation-averaging instances and parameter sweeps.

Ground-truth rotations are Haar-uniform; each edge gets
``R_ij = P @ R_j @ R_i.T`` with ``P`` a random-axis rotation of angle
``|N(0, sigma)|``; then ``round(p% * |E|)`` edges chosen uniformly are
replaced by Haar-uniform rotations and labelled as outliers.
"""
from __future__ import annotations

import csv
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DisconnectedStructure
from .graph import Edge, EpipolarGraph, Registration, connected_components, load_graph
from .so3 import UnitRotation, perturbation_quats, qconj, qmul, random_quats

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RandomStructure:
    n: int
    edge_probability: float


@dataclass(frozen=True)
class SynthConfig:
    sigma: float = 5.0  # degrees
    p: float = 0.0  # percent of edges replaced by outliers
    rng_seed: int = 0
    structure: RandomStructure | EpipolarGraph = RandomStructure(100, 0.3)

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0 <= self.p <= 100:
            raise ValueError("p must lie in [0, 100]")


@dataclass
class SynthInstance:
    graph: EpipolarGraph
    gt: Registration
    outlier_labels: dict[Edge, bool]

    @property
    def outliers(self) -> set[Edge]:
        return {e for e, bad in self.outlier_labels.items() if bad}


def random_topology(n: int, edge_probability: float, rng: np.random.Generator) -> np.ndarray:
    """Erdos-Renyi edge list ``(E, 2)`` with ``i < j`` in lexicographic order."""
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < edge_probability
    return np.stack([iu[keep], ju[keep]], axis=1)


def _check_connected(n: int, edges: np.ndarray) -> None:
    probe = EpipolarGraph(n, edges, np.tile([1.0, 0, 0, 0], (len(edges), 1)))
    n_comp = len(connected_components(probe))
    if n_comp > 1:
        warnings.warn(
            f"structure has {n_comp} components; solvers use the largest",
            DisconnectedStructure,
            stacklevel=3,
        )


def outlier_count(p: float, n_edges: int) -> int:
    return int(np.floor(p / 100.0 * n_edges + 0.5))


def generate(cfg: SynthConfig) -> SynthInstance:
    rng = np.random.default_rng(cfg.rng_seed)
    if isinstance(cfg.structure, EpipolarGraph):
        n = cfg.structure.n_vertices
        edges = np.asarray(cfg.structure.edges)
    else:
        n = cfg.structure.n
        edges = random_topology(n, cfg.structure.edge_probability, rng)
    _check_connected(n, edges)
    gt_q = random_quats(rng, n)
    i, j = edges[:, 0], edges[:, 1]
    true_rel = qmul(gt_q[j], qconj(gt_q[i]))
    meas = qmul(perturbation_quats(rng, cfg.sigma, len(edges)), true_rel)
    k = outlier_count(cfg.p, len(edges))
    bad = rng.choice(len(edges), size=k, replace=False) if k else np.zeros(0, dtype=np.int64)
    meas[bad] = random_quats(rng, k)
    labels = np.zeros(len(edges), dtype=bool)
    labels[bad] = True
    g = EpipolarGraph(n, edges, meas)
    gt = {v: UnitRotation._trusted(gt_q[v]) for v in range(n)}
    return SynthInstance(g, gt, {(int(a), int(b)): bool(lab) for (a, b), lab in zip(edges.tolist(), labels)})


def cell_seed(base_seed: int, sigma: float, p: float, trial: int) -> int:
    """Independent, reproducible seed for one sweep cell."""
    ss = np.random.SeedSequence([int(base_seed), int(round(sigma * 1000)), int(round(p * 1000)), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


SWEEP_COLUMNS = ["sigma", "p", "trial", "median_error", "runtime", "outlier_precision", "outlier_recall", "status"]


def _run_cell(args) -> dict:
    from .metrics import align_and_score, outlier_scores
    from .pipelines import RunConfig, run_pipeline

    structure, sigma, p, trial, solver, base_seed, run_cfg = args
    inst = generate(SynthConfig(sigma=sigma, p=p, rng_seed=cell_seed(base_seed, sigma, p, trial), structure=structure))
    row = {"sigma": sigma, "p": p, "trial": trial}
    t0 = time.perf_counter()
    try:
        cfg = RunConfig(mode=solver, **(run_cfg or {}))
        res = run_pipeline(inst.graph, cfg)
    except Exception as exc:  # recorded as a failed row
        row.update(median_error=float("nan"), runtime=time.perf_counter() - t0,
                   outlier_precision=float("nan"), outlier_recall=float("nan"), status=f"failed: {exc}")
        return row
    row["runtime"] = time.perf_counter() - t0
    row["median_error"] = align_and_score(res.rotations, inst.gt).median_error
    if res.inliers is not None:
        sc = outlier_scores(res.inliers, inst.outlier_labels)
        row["outlier_precision"], row["outlier_recall"] = sc.precision, sc.recall
    else:
        row["outlier_precision"] = row["outlier_recall"] = float("nan")
    row["status"] = "ok"
    return row


def sweep(
    structure: RandomStructure | EpipolarGraph,
    sigmas: Sequence[float],
    ps: Sequence[float],
    trials: int,
    solver: str = "irav4",
    base_seed: int = 0,
    threads: int = 1,
    run_config: dict | None = None,
) -> list[dict]:
    """One row per (sigma, p, trial); random structures are drawn once from ``base_seed``."""
    if isinstance(structure, RandomStructure):
        rng = np.random.default_rng(base_seed)
        edges = random_topology(structure.n, structure.edge_probability, rng)
        structure = EpipolarGraph(structure.n, edges, np.tile([1.0, 0, 0, 0], (len(edges), 1)))
    cells = [(structure, s, p, t, solver, base_seed, run_config) for s in sigmas for p in ps for t in range(trials)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(_run_cell, cells))
    return [_run_cell(c) for c in cells]


def write_csv(rows: list[dict], dest) -> None:
    w = csv.DictWriter(dest, fieldnames=SWEEP_COLUMNS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)


def load_structure(path: str | Path) -> EpipolarGraph:
    return load_graph(path)
