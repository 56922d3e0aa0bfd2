import itertools
import json

import numpy as np
import pytest

import rotavg.clusters as clusters
from conftest import complete_edges, consistent_graph, er_edges
from rotavg.clusters import community_seeds, detect_communities, grow_clusters
from rotavg.engine import EngineConfig, candidate_rewards, run_incremental, select_seed
from rotavg.errors import NoValidSeed
from rotavg.graph import is_connected
from rotavg.metrics import align_and_score
from rotavg.synth import RandomStructure, SynthConfig, generate

BRIDGE = [[0, 1], [0, 2], [1, 2], [3, 4], [3, 5], [4, 5], [2, 3]]


def modularity(edges, n, parts):
    m = len(edges)
    deg = np.zeros(n)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    label = {v: k for k, part in enumerate(parts) for v in part}
    q = sum(1.0 for i, j in edges if label[i] == label[j]) / m
    for part in parts:
        q -= (sum(deg[v] for v in part) / (2 * m)) ** 2
    return q


def test_two_triangles_bridge_communities():
    g, _ = consistent_graph(6, BRIDGE, seed=1)
    comms = detect_communities(g, range(6), min_size=3)
    # exhaustive bipartition oracle
    best = max(
        ([sorted(s), sorted(set(range(6)) - set(s))] for k in range(1, 6) for s in itertools.combinations(range(6), k)),
        key=lambda parts: modularity(BRIDGE, 6, parts),
    )
    assert sorted(comms) == sorted(best) == [[0, 1, 2], [3, 4, 5]]
    seeds = community_seeds(g, vertices=range(6), min_size=3)
    assert [s.triplet for s in seeds] == [(0, 1, 2), (3, 4, 5)]


def test_two_triangles_grow():
    g, gt = consistent_graph(6, BRIDGE, seed=2)
    seeds = community_seeds(g, vertices=range(6), min_size=3)
    cs = grow_clusters(g, seeds, vertices=range(6))
    assert cs.assignment == {0: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1}
    a = cs.assignment
    inter = [(i, j) for i, j in g.edges.tolist() if a[i] != a[j]]
    assert inter == [(2, 3)]
    assert json.loads(cs.assignment_json()) == {str(v): c for v, c in a.items()}


def test_default_min_size_merges_small_communities():
    g, _ = consistent_graph(6, BRIDGE, seed=2)
    assert detect_communities(g, range(6)) == [list(range(6))]


def test_dense_graph_is_single_community():
    g, _ = consistent_graph(15, complete_edges(15), seed=3)
    assert len(detect_communities(g, range(15))) == 1
    assert len(community_seeds(g)) == 1


def test_single_seed_matches_plain_engine():
    inst = generate(SynthConfig(sigma=3.0, p=15.0, rng_seed=7, structure=RandomStructure(40, 0.25)))
    g = inst.graph
    seed = select_seed(g)
    cs = grow_clusters(g, [seed])
    ref = run_incremental(g, seed=seed)
    strip = [json.loads(r.to_json()) for r in cs.trace]
    for d in strip:
        assert d.pop("cluster") == 0
    assert strip == [json.loads(r.to_json()) for r in ref.trace]
    frame = cs.local_frames[0]
    assert all(np.array_equal(frame[v].q, ref.registration[v].q) for v in frame)


def test_triangle_free_community_dissolved():
    # dense K6 block plus a long tail path (its own community, no triangles)
    edges = complete_edges(6).tolist() + [[5, 6]] + [[k, k + 1] for k in range(6, 15)]
    g, gt = consistent_graph(16, edges, seed=4)
    comms = detect_communities(g, range(16), min_size=3)
    assert len(comms) >= 2
    seeds = community_seeds(g, vertices=range(16), min_size=3)
    assert len(seeds) < len(comms)
    cs = grow_clusters(g, seeds, vertices=range(16))
    assert set(cs.assignment) == set(range(16))


def test_no_community_has_seed():
    g, _ = consistent_graph(6, [[k, k + 1] for k in range(5)])
    with pytest.raises(NoValidSeed):
        community_seeds(g, min_size=1)


@pytest.mark.parametrize("n_clusters", [1, 2, 3, 4])
def test_consistent_recovery_any_seed_count(n_clusters):
    g, gt = consistent_graph(60, er_edges(60, 0.2, 5), seed=5)
    seeds = community_seeds(g, n_clusters=n_clusters, min_size=1)
    cs = grow_clusters(g, seeds)
    comp = set(range(60))
    assert set(cs.assignment) == comp
    for cid in range(len(cs.clusters)):
        members = cs.members(cid)
        assert is_connected(g, members)
        assert align_and_score(cs.local_frames[cid], gt).median_error < 1e-6
    # partition: every vertex lives in exactly one local frame
    seen = [v for f in cs.local_frames for v in f]
    assert sorted(seen) == sorted(comp)


def test_growth_rewards_equal_single_cluster_rewards(monkeypatch):
    inst = generate(SynthConfig(sigma=4.0, p=20.0, rng_seed=9, structure=RandomStructure(50, 0.2)))
    g = inst.graph
    seeds = community_seeds(g, min_size=5)
    assert len(seeds) >= 2
    checked = []
    real_accept = clusters.accept

    def spy(g_, state, cand, config, step, cluster=None):
        (fresh,) = candidate_rewards(g_, state, [cand.p])
        assert fresh.reward == cand.reward and fresh.m_star == cand.m_star
        checked.append(cand.p)
        return real_accept(g_, state, cand, config, step, cluster)

    monkeypatch.setattr(clusters, "accept", spy)
    cs = grow_clusters(g, seeds)
    assert len(checked) == len(cs.trace) > 0
    for cid in range(len(cs.clusters)):
        assert is_connected(g, cs.members(cid))


def test_cache_does_not_change_cluster_growth():
    inst = generate(SynthConfig(sigma=5.0, p=25.0, rng_seed=3, structure=RandomStructure(60, 0.2)))
    seeds = community_seeds(inst.graph, min_size=5)
    a = grow_clusters(inst.graph, seeds, EngineConfig(use_cache=True))
    b = grow_clusters(inst.graph, seeds, EngineConfig(use_cache=False))
    assert [r.to_json() for r in a.trace] == [r.to_json() for r in b.trace]


def test_overlapping_seeds_rejected():
    g, _ = consistent_graph(6, BRIDGE)
    s = select_seed(g)
    with pytest.raises(ValueError):
        grow_clusters(g, [s, s])
