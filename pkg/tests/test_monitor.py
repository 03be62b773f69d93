import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spectral_sync.errors import EmptyGraph, NoOverlap
from spectral_sync.monitor import (
    MonitorConfig,
    build_onboard_proxy,
    decode_payload,
    encode_payload,
    make_broadcast,
    select_representatives,
    synchronize,
)
from spectral_sync.posegraph import Pose, PoseGraph, PoseNode
from spectral_sync.proxy import build_proxy

from conftest import NS


def track(P, t_ns, robot=0, submap=0, first_id=0):
    return [PoseNode(first_id + k, robot, submap, int(t), Pose(p)) for k, (p, t) in enumerate(zip(P, t_ns))]


def walk(n, step=1.0, dt_s=1.0, robot=0, submap_len=10, seed=0):
    rng = np.random.default_rng(seed)
    heading = np.cumsum(rng.normal(0, 0.15, n))
    P = np.cumsum(step * np.column_stack([np.cos(heading), np.sin(heading), np.zeros(n)]), axis=0)
    return [PoseNode(robot * 10**6 + k, robot, k // submap_len, int(k * dt_s * NS), Pose(P[k])) for k in range(n)]


# -- representatives -------------------------------------------------------------------


def test_single_node_submap():
    g = PoseGraph(tuple(track([[0, 0, 0]], [0])))
    assert [nd.node_id for nd in select_representatives(g)] == [0]


def test_straight_ten_metres():
    P = np.column_stack([np.arange(101) * 0.1, np.zeros(101), np.zeros(101)])
    g = PoseGraph(tuple(track(P, np.arange(101) * 0.1 * NS)))
    reps = select_representatives(g)
    assert len(reps) == 11
    assert np.allclose([nd.pose.translation[0] for nd in reps], np.arange(11), atol=1e-9)


def test_stationary_ten_seconds():
    g = PoseGraph(tuple(track(np.zeros((101, 3)), np.arange(101) * NS // 10)))
    reps = select_representatives(g)
    assert len(reps) == 6
    assert [nd.timestamp for nd in reps] == [k * 2 * NS for k in range(6)]


def test_every_submap_keeps_its_ends():
    nodes = walk(95, step=0.3, dt_s=0.5)
    reps = {nd.node_id for nd in select_representatives(PoseGraph(tuple(nodes)))}
    for s in range(10):
        members = [nd.node_id for nd in nodes if nd.submap_id == s]
        assert members[0] in reps and members[-1] in reps


# -- broadcast -------------------------------------------------------------------------


def test_broadcast_below_trigger_keeps_nodes():
    g = PoseGraph(tuple(walk(120)))
    b = make_broadcast(g, 3)
    assert b.n == len(select_representatives(g))
    assert b.stats["bytes"] == b.stats["bytes_unreduced"] == len(encode_payload(b))
    assert b.epoch == 3


def test_broadcast_reduction():
    g = PoseGraph(tuple(walk(700, robot=0, seed=1) + walk(700, robot=1, seed=2)))
    b = make_broadcast(g, 1, MonitorConfig(kron_trigger=1000))
    assert b.stats["nodes_before"] == 1400
    assert b.stats["nodes_before"] * 0.3 < b.n < b.stats["nodes_before"] * 0.7
    assert b.stats["bytes"] == len(encode_payload(b))
    assert b.stats["bytes"] < 0.6 * b.stats["bytes_unreduced"]
    # every robot's latest node survives
    ids = set(b.proxy.source_ids().tolist())
    assert {699, 10**6 + 699} <= ids


def test_broadcast_deterministic_and_decodes():
    g = PoseGraph(tuple(walk(600, seed=4) + walk(600, robot=1, seed=5)))
    cfg = MonitorConfig(kron_trigger=500)
    a, b = make_broadcast(g, 2, cfg), make_broadcast(g, 2, cfg)
    assert encode_payload(a) == encode_payload(b)
    c = decode_payload(encode_payload(a))
    assert np.array_equal(c.proxy.adjacency, a.proxy.adjacency)
    assert np.array_equal(c.orientations, a.orientations)
    assert c.epoch == 2 and c.proxy.nodes == a.proxy.nodes


def test_broadcast_empty():
    with pytest.raises(EmptyGraph):
        make_broadcast(PoseGraph(), 0)


# -- synchronization -----------------------------------------------------------------


def test_sync_identical():
    g = PoseGraph(tuple(walk(40)))
    b = make_broadcast(g, 1)
    rp = build_proxy(select_representatives(g))
    corr = synchronize(b, rp, 0)
    assert len(corr) == b.n
    assert all(dt == 0 for dt in corr.residual_dt)
    assert list(corr.server_indices) == list(range(b.n))


def test_sync_double_density():
    server = PoseGraph(tuple(walk(20, dt_s=1.0)))
    b = make_broadcast(server, 1, MonitorConfig(rep_spacing_m=0.5))
    assert b.n == 20
    dense = PoseGraph(tuple(PoseNode(k, 0, 0, k * NS // 2, Pose([k, 0, 0])) for k in range(40)))
    corr = synchronize(b, build_proxy(dense), 0)
    assert len(corr) == 20
    assert sorted(corr.robot_indices.tolist()) == list(range(0, 40, 2))


def test_sync_disjoint():
    b = make_broadcast(PoseGraph(tuple(walk(10))), 1)
    late = PoseGraph(tuple(PoseNode(k, 0, 0, (100 + k) * NS, Pose()) for k in range(5)))
    with pytest.raises(NoOverlap):
        synchronize(b, build_proxy(late), 0)
    with pytest.raises(NoOverlap):
        synchronize(b, build_proxy(PoseGraph(tuple(walk(10)))), robot_id=3)


@given(st.lists(st.integers(0, 60), min_size=1, max_size=40, unique=True),
       st.lists(st.integers(0, 120), min_size=1, max_size=80, unique=True))
def test_sync_injective(server_t, robot_t):
    s = PoseGraph(tuple(PoseNode(k, 0, k, t * NS // 2, Pose([k, 0, 0])) for k, t in enumerate(sorted(server_t))))
    r = PoseGraph(tuple(PoseNode(k, 0, 0, t * NS // 4, Pose()) for k, t in enumerate(sorted(robot_t))))
    b = make_broadcast(s, 0)
    try:
        corr = synchronize(b, build_proxy(r), 0)
    except NoOverlap:
        return
    si, ri = corr.server_indices, corr.robot_indices
    assert len(set(si)) == len(si) and len(set(ri)) == len(ri)
    assert list(si) == sorted(si)
    assert all(abs(dt) <= NS // 2 for dt in corr.residual_dt)
    assert corr.pairs == synchronize(b, build_proxy(r), 0).pairs


def test_onboard_proxy_uses_nearest_nodes():
    server = PoseGraph(tuple(walk(30)))
    b = make_broadcast(server, 1)
    onboard = PoseGraph(tuple(PoseNode(k, 0, 0, k * NS // 4, Pose()) for k in range(120)))
    rp = build_onboard_proxy(onboard, b, 0)
    assert rp.n == b.n
    assert np.array_equal(rp.timestamps(), b.timestamps())
