import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from spectral_sync import geometry as geo
from spectral_sync.posegraph import Pose, PoseGraph, PoseNode, RelativeConstraint, relative_pose
from spectral_sync.proxy import ProxyGraph, ProxyNode

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

NS = 1_000_000_000


def random_pose(rng, scale=5.0) -> Pose:
    q = rng.normal(size=4)
    return Pose(rng.uniform(-scale, scale, 3), q)


def random_connected_adjacency(rng, n, p=0.3):
    """Spanning tree plus random extra edges, weights in (0.1, 1]."""
    A = np.zeros((n, n))
    order = rng.permutation(n)
    for k in range(1, n):
        a, b = order[k], order[rng.integers(k)]
        A[a, b] = A[b, a] = rng.uniform(0.1, 1.0)
    extra = np.triu(rng.random((n, n)) < p, 1)
    w = np.triu(rng.uniform(0.1, 1.0, (n, n)), 1)
    E = np.where(extra & (A == 0), w, 0.0)
    return A + E + E.T


def proxy_from_adjacency(A, positions=None) -> ProxyGraph:
    n = len(A)
    P = np.zeros((n, 3)) if positions is None else np.asarray(positions, float)
    nodes = tuple(ProxyNode(k, tuple(P[k]), k, k * NS, 0, 0) for k in range(n))
    return ProxyGraph(nodes, A, 7.0, 7.0 / 3.0)


def path_adjacency(n, w=1.0):
    A = np.zeros((n, n))
    i = np.arange(n - 1)
    A[i, i + 1] = A[i + 1, i] = w
    return A


def chain_graph(poses, robot=0, dt_ns=NS, kind="odometry", info=None):
    nodes = tuple(PoseNode(k, robot, k // 20, k * dt_ns, p) for k, p in enumerate(poses))
    kw = {} if info is None else {"information": info}
    edges = tuple(RelativeConstraint(k, k + 1, relative_pose(poses[k], poses[k + 1]), kind=kind, **kw)
                  for k in range(len(poses) - 1))
    return PoseGraph(nodes, edges)


def line_poses(n, step=1.0, yaw=0.0):
    q = geo.quat_from_yaw(yaw)
    d = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    return [Pose(k * step * d, q) for k in range(n)]


@st.composite
def poses(draw, scale=10.0):
    t = draw(st.lists(st.floats(-scale, scale, allow_nan=False), min_size=3, max_size=3))
    q = draw(st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4))
    if np.linalg.norm(q) < 1e-3:
        q = [1.0, 0.0, 0.0, 0.0]
    return Pose(t, q)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
