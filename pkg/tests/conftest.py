import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rotavg.graph import EpipolarGraph
from rotavg.so3 import UnitRotation, perturbation_quats, qconj, qmul, random_quats
from rotavg.solver import ManifoldProblem, ResidualTerm

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def consistent_graph(n, edges, seed=0, gt_q=None):
    """Graph whose measurements are composed exactly from random ground truth."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if gt_q is None:
        gt_q = random_quats(np.random.default_rng(seed), n)
    meas = qmul(gt_q[e[:, 1]], qconj(gt_q[e[:, 0]]))
    g = EpipolarGraph(n, e, meas)
    return g, {v: UnitRotation._trusted(gt_q[v]) for v in range(n)}


def er_edges(n, p, seed):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    return np.stack([iu[keep], ju[keep]], axis=1)


def complete_edges(n):
    iu, ju = np.triu_indices(n, 1)
    return np.stack([iu, ju], axis=1)


def random_problem(seed, n=10, p=0.5, sigma=10.0, init_noise=20.0):
    rng = np.random.default_rng(seed)
    # a spanning path keeps the problem rigid (one gauge only)
    path = {(k, k + 1) for k in range(n - 1)}
    e = np.array(sorted(path | {tuple(x) for x in er_edges(n, p, seed).tolist()}))
    gt = random_quats(rng, n)
    meas = qmul(perturbation_quats(rng, sigma, len(e)), qmul(gt[e[:, 1]], qconj(gt[e[:, 0]])))
    init = qmul(gt, perturbation_quats(rng, init_noise, n))
    terms = [ResidualTerm(int(i), int(j), UnitRotation._trusted(m)) for (i, j), m in zip(e.tolist(), meas)]
    variables = {v: UnitRotation._trusted(init[v]) for v in range(n)}
    return ManifoldProblem(variables, terms, fixed={0})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
