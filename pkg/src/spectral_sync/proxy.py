"""Positional proxy graphs: radius graph construction, Laplacian, Kron reduction."""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import DegenerateSpectrum, EmptyGraph, SingularElimination, ValidationError
from .posegraph import PoseGraph, PoseNode

DEFAULT_RADIUS = 7.0
BRUTE_FORCE_LIMIT = 2000
CLIP_FLOOR = 1e-12


@dataclass(frozen=True)
class ProxyNode:
    index: int
    position: tuple
    source_node_id: int
    timestamp: int
    submap_id: int
    robot_id: int = 0


@dataclass(frozen=True, eq=False)
class ProxyGraph:
    nodes: tuple
    adjacency: np.ndarray
    radius: float
    sigma: float
    squared_distance: bool = False
    reduced: bool = False

    def __post_init__(self):
        A = np.array(self.adjacency, dtype=float)
        n = len(self.nodes)
        if A.shape != (n, n):
            raise ValidationError(f"adjacency shape {A.shape} does not match {n} nodes")
        A.setflags(write=False)
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "adjacency", A)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def positions(self) -> np.ndarray:
        if not self.nodes:
            return np.zeros((0, 3))
        return np.array([nd.position for nd in self.nodes], dtype=float)

    def timestamps(self) -> np.ndarray:
        return np.array([nd.timestamp for nd in self.nodes], dtype=np.int64)

    def robot_ids(self) -> np.ndarray:
        return np.array([nd.robot_id for nd in self.nodes], dtype=np.int64)

    def source_ids(self) -> np.ndarray:
        return np.array([nd.source_node_id for nd in self.nodes], dtype=np.int64)

    def n_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency, 1)))


@dataclass(frozen=True, eq=False)
class Laplacian:
    matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def edge_weight(distance, sigma, squared_distance=False):
    """Distance kernel exp(-d / (2 sigma^2)); with ``squared_distance`` the
    conventional exp(-d^2 / (2 sigma^2))."""
    d = np.asarray(distance, dtype=float)
    num = d * d if squared_distance else d
    return np.exp(-num / (2.0 * sigma * sigma))


def _radius_pairs(P: np.ndarray, radius: float):
    n = len(P)
    if n <= BRUTE_FORCE_LIMIT:
        i, j = np.nonzero(np.triu(cdist(P, P) <= radius, 1))
        return i, j
    pairs = cKDTree(P).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros(0, int), np.zeros(0, int)
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    return pairs[:, 0], pairs[:, 1]


def _consecutive_pairs(nodes: Sequence[ProxyNode]):
    """Index pairs of chronologically consecutive nodes of the same robot."""
    by_robot = {}
    for nd in nodes:
        by_robot.setdefault(nd.robot_id, []).append(nd)
    pairs = []
    for robot in sorted(by_robot):
        seq = sorted(by_robot[robot], key=lambda nd: (nd.timestamp, nd.index))
        pairs.extend((a.index, b.index) for a, b in zip(seq, seq[1:]))
    return pairs


def proxy_nodes_from(nodes: Sequence[PoseNode]) -> tuple:
    return tuple(
        ProxyNode(k, tuple(float(v) for v in nd.pose.translation), nd.node_id, nd.timestamp, nd.submap_id, nd.robot_id)
        for k, nd in enumerate(nodes)
    )


def adjacency_from_positions(nodes: Sequence[ProxyNode], radius: float, sigma: float, squared_distance=False):
    P = np.array([nd.position for nd in nodes], dtype=float).reshape(-1, 3)
    n = len(P)
    A = np.zeros((n, n))
    i, j = _radius_pairs(P, radius)
    extra = [(a, b) for a, b in _consecutive_pairs(nodes)]
    if extra:
        ci, cj = np.array(extra).T
        lo, hi = np.minimum(ci, cj), np.maximum(ci, cj)
        i = np.concatenate([i, lo])
        j = np.concatenate([j, hi])
    if len(i):
        d = np.linalg.norm(P[i] - P[j], axis=1)
        # far-apart consecutive nodes must stay connected
        w = np.maximum(edge_weight(d, sigma, squared_distance), np.finfo(float).tiny)
        A[i, j] = w
        A[j, i] = w
    return A


def build_proxy(graph, radius: float = DEFAULT_RADIUS, sigma: float | None = None, squared_distance: bool = False) -> ProxyGraph:
    """Proxy graph over every node of ``graph`` (a PoseGraph or node list).

    Node selection is the caller's business; see ``monitor.select_representatives``.
    """
    nodes = graph.nodes if isinstance(graph, PoseGraph) else tuple(graph)
    if not nodes:
        raise EmptyGraph("cannot build a proxy graph from zero nodes")
    if radius <= 0:
        raise ValidationError("radius must be positive")
    sigma = radius / 3.0 if sigma is None else sigma
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    pnodes = nodes if isinstance(nodes[0], ProxyNode) else proxy_nodes_from(nodes)
    A = adjacency_from_positions(pnodes, radius, sigma, squared_distance)
    return ProxyGraph(pnodes, A, float(radius), float(sigma), squared_distance)


def laplacian(p: ProxyGraph) -> Laplacian:
    A = p.adjacency
    return Laplacian(np.diag(A.sum(axis=1)) - A)


SPARSE_EIG_ABOVE = 400


def _top_eigenpairs(L: np.ndarray):
    """Two largest eigenpairs, ascending."""
    n = L.shape[0]
    if n > SPARSE_EIG_ABOVE:
        # fixed start vector keeps ARPACK deterministic
        v0 = np.cos(np.arange(n) * 0.7548776662466927)
        try:
            w, V = spla.eigsh(sp.csr_matrix(L), k=2, which="LA", v0=v0, tol=0.0)
            order = np.argsort(w)
            return w[order], V[:, order]
        except spla.ArpackNoConvergence:
            pass
    lo = max(n - 2, 0)
    w, V = sla.eigh(L, subset_by_index=[lo, n - 1], driver="evr")
    return w, V


def orient_top_eigenvector(u: np.ndarray) -> np.ndarray:
    """Fix the sign of an eigenvector for the polarity split.

    The sign is chosen so that the nonnegative side is the larger one; on a
    tie the entry of largest magnitude is made positive.
    """
    pos = np.count_nonzero(u >= 0)
    neg = np.count_nonzero(-u >= 0)
    if neg > pos:
        return -u
    if neg == pos and u[int(np.argmax(np.abs(u)))] < 0:
        return -u
    return u


def kron_select(L: Laplacian, tol: float = 1e-9) -> np.ndarray:
    """Indices where the eigenvector of the largest Laplacian eigenvalue is >= 0."""
    M = L.matrix if isinstance(L, Laplacian) else np.asarray(L)
    n = M.shape[0]
    if n < 2:
        raise ValidationError("kron_select needs at least two nodes")
    w, V = _top_eigenpairs(M)
    if len(w) > 1 and abs(w[-1] - w[-2]) <= tol * max(1.0, abs(w[-1])):
        raise DegenerateSpectrum(f"top eigenvalue {w[-1]:.6g} is repeated")
    u = orient_top_eigenvector(V[:, -1])
    return np.flatnonzero(u >= 0)


def alternate_select(p: ProxyGraph) -> np.ndarray:
    """Fallback selection: every other node in trajectory order, per robot."""
    keep = []
    by_robot = {}
    for nd in p.nodes:
        by_robot.setdefault(nd.robot_id, []).append(nd)
    for robot in sorted(by_robot):
        seq = sorted(by_robot[robot], key=lambda nd: (nd.timestamp, nd.index))
        keep.extend(nd.index for nd in seq[::2])
    return np.array(sorted(keep), dtype=int)


def kron_reduce(p: ProxyGraph, keep) -> ProxyGraph:
    """Schur-complement elimination of every node not in ``keep``."""
    keep = np.unique(np.asarray(list(keep), dtype=int))
    n = p.n
    if len(keep) == 0:
        raise ValidationError("keep set is empty")
    if keep[0] < 0 or keep[-1] >= n:
        raise ValidationError("keep index out of range")
    if len(keep) == n:
        return replace(p)
    elim = np.setdiff1d(np.arange(n), keep)
    L = laplacian(p).matrix
    Lkk = L[np.ix_(keep, keep)]
    Lke = L[np.ix_(keep, elim)]
    Lee = L[np.ix_(elim, elim)]
    try:
        c, low = sla.cho_factor(Lee, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise SingularElimination("eliminated block is singular") from None
    if np.min(np.diag(c)) ** 2 < 1e-10:
        raise SingularElimination("eliminated block is singular within 1e-10")
    Lred = Lkk - Lke @ sla.cho_solve((c, low), Lke.T, check_finite=False)
    Lred = 0.5 * (Lred + Lred.T)
    A = -Lred
    np.fill_diagonal(A, 0.0)
    A[A < CLIP_FLOOR] = 0.0
    nodes = tuple(replace(p.nodes[k], index=i) for i, k in enumerate(keep))
    return ProxyGraph(nodes, A, p.radius, p.sigma, p.squared_distance, reduced=True)


def restrict_to_support(p: ProxyGraph) -> ProxyGraph:
    """Drop edges outside the radius/consecutive support of the node positions.

    Kron reduction fills in long-range edges with rapidly decaying weights;
    masking them restores the proxy-graph support rule.
    """
    mask = adjacency_from_positions(p.nodes, p.radius, p.sigma, p.squared_distance) > 0
    return replace(p, adjacency=np.where(mask, p.adjacency, 0.0))


def subgraph(p: ProxyGraph, indices) -> ProxyGraph:
    """Induced subgraph (no elimination), re-indexed in the given order."""
    idx = np.asarray(list(indices), dtype=int)
    nodes = tuple(replace(p.nodes[k], index=i) for i, k in enumerate(idx))
    return replace(p, nodes=nodes, adjacency=p.adjacency[np.ix_(idx, idx)])


# -- binary / text encodings ---------------------------------------------------

_NODE = struct.Struct("<3dqqii")
_HEAD = struct.Struct("<4sIdd?")
MAGIC = b"PXG1"


def _csr_upper(A: np.ndarray):
    iu, ju = np.nonzero(np.triu(A, 1))
    counts = np.bincount(iu, minlength=A.shape[0])
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype("<u4")
    return indptr, ju.astype("<u4"), A[iu, ju].astype("<f8")


def encode_proxy(p: ProxyGraph) -> bytes:
    """Little-endian record: header, per-node fixed records, then the strict
    upper triangle of the adjacency in CSR form."""
    out = [_HEAD.pack(MAGIC, p.n, p.radius, p.sigma, p.squared_distance)]
    for nd in p.nodes:
        out.append(_NODE.pack(*nd.position, nd.timestamp, nd.source_node_id, nd.robot_id, nd.submap_id))
    indptr, cols, vals = _csr_upper(p.adjacency)
    out.append(struct.pack("<I", len(cols)))
    out += [indptr.tobytes(), cols.tobytes(), vals.tobytes()]
    return b"".join(out)


def decode_proxy(data: bytes, offset: int = 0):
    """Inverse of ``encode_proxy``; returns (graph, bytes consumed)."""
    start = offset
    magic, n, radius, sigma, sq = _HEAD.unpack_from(data, offset)
    if magic != MAGIC:
        raise ValidationError("not a proxy graph record")
    offset += _HEAD.size
    nodes = []
    for k in range(n):
        x, y, z, stamp, src, robot, submap = _NODE.unpack_from(data, offset)
        offset += _NODE.size
        nodes.append(ProxyNode(k, (x, y, z), src, stamp, submap, robot))
    (nnz,) = struct.unpack_from("<I", data, offset)
    offset += 4
    indptr = np.frombuffer(data, "<u4", n + 1, offset)
    offset += 4 * (n + 1)
    cols = np.frombuffer(data, "<u4", nnz, offset)
    offset += 4 * nnz
    vals = np.frombuffer(data, "<f8", nnz, offset)
    offset += 8 * nnz
    A = np.zeros((n, n))
    rows = np.repeat(np.arange(n), np.diff(indptr))
    A[rows, cols] = vals
    A[cols, rows] = vals
    return ProxyGraph(tuple(nodes), A, radius, sigma, bool(sq)), offset - start


def format_proxy(p: ProxyGraph) -> str:
    lines = [f"# proxy n={p.n} radius={p.radius:g} sigma={p.sigma:g} reduced={int(p.reduced)}"]
    for nd in p.nodes:
        x, y, z = nd.position
        lines.append(f"node {nd.index} {x:.6f} {y:.6f} {z:.6f} src={nd.source_node_id} robot={nd.robot_id} "
                     f"submap={nd.submap_id} t={nd.timestamp}")
    iu, ju = np.nonzero(np.triu(p.adjacency, 1))
    for i, j in zip(iu, ju):
        lines.append(f"edge {i} {j} {p.adjacency[i, j]:.9g}")
    return "\n".join(lines) + "\n"
