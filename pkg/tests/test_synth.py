import io
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import complete_edges
from rotavg.errors import DisconnectedStructure
from rotavg.graph import EpipolarGraph
from rotavg.metrics import relative_errors
from rotavg.synth import (
    SWEEP_COLUMNS,
    RandomStructure,
    SynthConfig,
    cell_seed,
    generate,
    outlier_count,
    sweep,
    write_csv,
)


def topology(edges, n):
    e = np.asarray(edges)
    return EpipolarGraph(n, e, np.tile([1.0, 0, 0, 0], (len(e), 1)))


def test_noise_free_is_consistent():
    inst = generate(SynthConfig(sigma=0.0, p=0.0, rng_seed=1, structure=RandomStructure(30, 0.3)))
    assert np.max(relative_errors(inst.graph, inst.gt)) < 1e-9
    assert not inst.outliers


def test_outlier_count_contract():
    # 1000-edge structure: the first 1000 pairs of K_46
    e = complete_edges(46)[:1000]
    inst = generate(SynthConfig(sigma=5.0, p=50.0, rng_seed=2, structure=topology(e, 46)))
    assert inst.graph.n_edges == 1000
    assert len(inst.outliers) == 500
    assert outlier_count(30.0, 1513) == 454  # 453.9 rounds up
    assert outlier_count(50.0, 3) == 2  # 1.5 rounds half up


def test_inlier_deviation_folded_normal_mean():
    e = complete_edges(448)  # 100128 edges
    inst = generate(SynthConfig(sigma=5.0, p=0.0, rng_seed=3, structure=topology(e, 448)))
    err = relative_errors(inst.graph, inst.gt)
    assert len(err) > 100_000
    assert abs(err.mean() - 5.0 * math.sqrt(2 / math.pi)) < 0.05


def test_reproducible_bit_identical():
    cfg = SynthConfig(sigma=5.0, p=20.0, rng_seed=4, structure=RandomStructure(40, 0.3))
    a, b = generate(cfg), generate(cfg)
    assert a.graph == b.graph and np.array_equal(a.graph.quats, b.graph.quats)
    assert all(np.array_equal(a.gt[v].q, b.gt[v].q) for v in a.gt)
    assert a.outlier_labels == b.outlier_labels


@given(st.integers(0, 10_000), st.floats(0.0, 100.0))
def test_label_soundness(seed, p):
    # the generator draws GT and noise before choosing outliers, so the p = 0
    # instance with the same seed is the unreplaced version of every edge
    s = RandomStructure(20, 0.4)
    clean = generate(SynthConfig(sigma=3.0, p=0.0, rng_seed=seed, structure=s))
    dirty = generate(SynthConfig(sigma=3.0, p=p, rng_seed=seed, structure=s))
    changed = {tuple(e) for e, a, b in zip(clean.graph.edges.tolist(), clean.graph.quats, dirty.graph.quats)
               if not np.array_equal(a, b)}
    assert changed <= dirty.outliers
    assert len(dirty.outliers) == outlier_count(p, dirty.graph.n_edges)
    assert set(dirty.outlier_labels) == {tuple(e) for e in dirty.graph.edges.tolist()}


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(sigma=-1.0)
    with pytest.raises(ValueError):
        SynthConfig(p=101.0)


def test_disconnected_structure_warns():
    with pytest.warns(DisconnectedStructure):
        generate(SynthConfig(structure=topology([[0, 1], [0, 2], [1, 2], [3, 4], [3, 5], [4, 5]], 6)))


def test_cell_seeds_distinct():
    seeds = {cell_seed(0, s, p, t) for s in (5.0, 10.0) for p in range(0, 60, 10) for t in range(5)}
    assert len(seeds) == 60
    assert cell_seed(1, 5.0, 0, 0) != cell_seed(0, 5.0, 0, 0)


def test_sweep_bookkeeping():
    rows = sweep(RandomStructure(100, 0.3), [5.0, 10.0], [0, 10, 20, 30, 40, 50], 1, "spanning-tree")
    assert len(rows) == 12
    assert [(r["sigma"], r["p"]) for r in rows][:2] == [(5.0, 0), (5.0, 10)]
    assert all(r["status"] == "ok" for r in rows)
    buf = io.StringIO()
    write_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == SWEEP_COLUMNS and len(lines) == 13


def test_sweep_deterministic_and_parallel_equal():
    a = sweep(RandomStructure(30, 0.3), [5.0], [0, 30], 2, "ira", base_seed=3)
    b = sweep(RandomStructure(30, 0.3), [5.0], [0, 30], 2, "ira", base_seed=3, threads=2)
    drop = lambda rows: [{k: v for k, v in r.items() if k != "runtime"} for r in rows]
    assert drop(a) == drop(b)


def test_sweep_failed_cells_recorded():
    path = topology([[k, k + 1] for k in range(9)], 10)
    rows = sweep(path, [5.0], [0], 1, "ira")
    assert rows[0]["status"].startswith("failed") and math.isnan(rows[0]["median_error"])


@pytest.mark.slow
def test_p0_error_grows_with_sigma():
    rows = sweep(RandomStructure(60, 0.3), [2.0, 5.0, 10.0], [0], 5, "ira", base_seed=11)
    means = [np.mean([r["median_error"] for r in rows if r["sigma"] == s]) for s in (2.0, 5.0, 10.0)]
    assert means[0] < means[1] < means[2]


@pytest.mark.slow
def test_denser_structure_is_more_accurate():
    sparse = sweep(RandomStructure(60, 0.15), [5.0], [10], 5, "ira", base_seed=12)
    dense = sweep(RandomStructure(60, 0.5), [5.0], [10], 5, "ira", base_seed=12)
    assert np.mean([r["median_error"] for r in dense]) < np.mean([r["median_error"] for r in sparse])
