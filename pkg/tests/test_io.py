import numpy as np
import pytest

from spectral_sync.errors import ParseError
from spectral_sync.io import parse_graph, read_graph, serialize_graph, write_graph
from spectral_sync.posegraph import (
    CONSTRAINT_KINDS,
    Pose,
    PoseGraph,
    PoseNode,
    RelativeConstraint,
    graphs_equal,
    isotropic_information,
)

from conftest import random_pose


def random_graph(rng, n=50):
    nodes = tuple(PoseNode(int(i), int(rng.integers(3)), int(rng.integers(10)), int(rng.integers(0, 2**62)),
                           random_pose(rng, 100.0)) for i in rng.choice(10**9, n, replace=False))
    edges = []
    for _ in range(2 * n):
        a, b = rng.choice(n, 2, replace=False)
        M = rng.normal(size=(6, 6))
        info = M @ M.T + 0.1 * np.eye(6)
        edges.append(RelativeConstraint(nodes[a].node_id, nodes[b].node_id, random_pose(rng), info,
                                        CONSTRAINT_KINDS[rng.integers(len(CONSTRAINT_KINDS))]))
    return PoseGraph(nodes, tuple(edges), "server")


@pytest.mark.parametrize("seed", range(10))
def test_roundtrip(seed):
    g = random_graph(np.random.default_rng(seed))
    h = parse_graph(serialize_graph(g))
    assert [n.node_id for n in h.nodes] == [n.node_id for n in g.nodes]
    assert graphs_equal(g, h, atol=1e-12)
    assert serialize_graph(h) == serialize_graph(g)


def test_empty_graph():
    data = serialize_graph(PoseGraph())
    assert data.decode().strip().splitlines() == ["# posegraph frame=map"]
    assert parse_graph(data) == PoseGraph()


def test_identity_vertex_encoding():
    g = PoseGraph((PoseNode(0, 0, 0, 0, Pose.identity()),))
    lines = serialize_graph(g).decode().splitlines()
    assert lines[1] == "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1"


def test_quaternion_order_on_wire():
    q = np.array([0.5, 0.5, -0.5, 0.5])
    g = PoseGraph((PoseNode(3, 0, 0, 0, Pose([1, 2, 3], q)),))
    assert serialize_graph(g).decode().splitlines()[1] == "VERTEX_SE3:QUAT 3 1 2 3 0.5 -0.5 0.5 0.5"


def test_foreign_file_without_metadata():
    text = ("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nVERTEX_SE3:QUAT 1 1 0 0 0 0 0 1\n"
            "EDGE_SE3:QUAT 0 1 1 0 0 0 0 0 1 " + " ".join(["1 0 0 0 0 0", "1 0 0 0 0", "1 0 0 0", "1 0 0", "1 0", "1"]))
    g = parse_graph(text)
    assert len(g) == 2 and g.edges[0].kind == "odometry"
    assert np.array_equal(g.edges[0].information, np.eye(6))


@pytest.mark.parametrize("text,line", [
    ("# posegraph frame=map\nVERTEX_SE3:QUAT 0 0 0 0 0 0 1\n", 2),
    ("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nVERTEX_SE3:QUAT x 0 0 0 0 0 0 1\n", 2),
    ("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nFOO 1 2\n", 2),
    ("#META 0 0 0 0\n", 1),
    ("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 0\n", 1),
    ("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\n\nEDGE_SE3:QUAT 0 5 " + "0 " * 6 + "1" + " 1" * 21 + "\n", 3),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as exc:
        parse_graph(text)
    assert exc.value.line == line


def test_file_roundtrip(tmp_path, rng):
    g = random_graph(rng, 10)
    p = tmp_path / "g.posegraph"
    write_graph(g, p)
    assert read_graph(p) == g


def test_default_information_survives():
    nodes = (PoseNode(0, 0, 0, 0, Pose()), PoseNode(1, 0, 0, 1, Pose([1, 0, 0])))
    g = PoseGraph(nodes, (RelativeConstraint(0, 1, Pose([1, 0, 0]), kind="correction_submap"),))
    h = parse_graph(serialize_graph(g))
    assert np.array_equal(h.edges[0].information, isotropic_information())
    assert h.edges[0].kind == "correction_submap"
