"""SE(3) pose-graph data model shared by robots and server."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import geometry as geo
from .errors import NoCommonNodes, ValidationError

CONSTRAINT_KINDS = (
    "odometry",
    "loop_closure",
    "correction_adjacent",
    "correction_midscale",
    "correction_submap",
)

# default correction covariance: sigma_t = 0.1 m, sigma_r = 0.05 rad
CORRECTION_SIGMA_T = 0.1
CORRECTION_SIGMA_R = 0.05


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform. ``rotation`` is a Hamilton quaternion (w, x, y, z)."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(-1)
        q = np.array(self.rotation, dtype=float).reshape(-1)
        if t.shape != (3,) or q.shape != (4,):
            raise ValidationError("pose needs a 3-vector translation and a 4-vector quaternion")
        n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
        if not (math.isfinite(t[0] + t[1] + t[2]) and math.isfinite(n)):
            raise ValidationError("pose contains non-finite values")
        if n == 0.0:
            raise ValidationError("zero quaternion")
        # unit within rounding: leave the bits alone so text round trips are exact
        if abs(n - 1.0) > 4e-16:
            q /= n
        if q[0] < 0:
            q = -q
        t.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, 3], geo.matrix_to_quat(T[:3, :3]))

    @classmethod
    def from_rt(cls, R, t) -> "Pose":
        return cls(t, geo.matrix_to_quat(R))

    @cached_property
    def R(self) -> np.ndarray:
        R = geo.quat_to_matrix(self.rotation)
        R.setflags(write=False)
        return R

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        # q and -q are the same rotation
        dq = min(np.abs(self.rotation - other.rotation).max(), np.abs(self.rotation + other.rotation).max())
        return bool(np.abs(self.translation - other.translation).max() <= atol and dq <= atol)

    def __repr__(self):
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        return f"Pose(t=[{t}], q=[{q}])"


def compose(a: Pose, b: Pose) -> Pose:
    """Return a * b."""
    return Pose(a.translation + a.R @ b.translation, geo.quat_multiply(a.rotation, b.rotation))


def inverse(p: Pose) -> Pose:
    qi = geo.quat_conjugate(p.rotation)
    return Pose(-(p.R.T @ p.translation), qi)


def relative_pose(a: Pose, b: Pose) -> Pose:
    """Transform taking ``a`` to ``b``: inverse(a) * b."""
    return compose(inverse(a), b)


def translation_delta(a: Pose, b: Pose) -> float:
    return float(np.linalg.norm(a.translation - b.translation))


def rotation_delta(a: Pose, b: Pose) -> float:
    dq = geo.quat_multiply(geo.quat_conjugate(a.rotation), b.rotation)
    return float(geo.quat_angle(dq))


def isotropic_information(sigma_t: float = CORRECTION_SIGMA_T, sigma_r: float = CORRECTION_SIGMA_R) -> np.ndarray:
    """6x6 information, translation block first."""
    return np.diag([1.0 / sigma_t**2] * 3 + [1.0 / sigma_r**2] * 3)


@dataclass(frozen=True)
class PoseNode:
    node_id: int
    robot_id: int
    submap_id: int
    timestamp: int  # ns
    pose: Pose

    def with_pose(self, pose: Pose) -> "PoseNode":
        return replace(self, pose=pose)


@dataclass(frozen=True, eq=False)
class RelativeConstraint:
    from_id: int
    to_id: int
    measurement: Pose
    information: np.ndarray = field(default_factory=isotropic_information)
    kind: str = "odometry"

    def __post_init__(self):
        if self.from_id == self.to_id:
            raise ValidationError(f"constraint endpoints coincide ({self.from_id})")
        if self.kind not in CONSTRAINT_KINDS:
            raise ValidationError(f"unknown constraint kind {self.kind!r}")
        info = np.array(self.information, dtype=float)
        if info.shape != (6, 6):
            raise ValidationError("information must be 6x6")
        if np.abs(info - info.T).max() > 1e-12:
            raise ValidationError("information matrix is not symmetric")
        info = 0.5 * (info + info.T)
        try:
            np.linalg.cholesky(info)
        except np.linalg.LinAlgError:
            raise ValidationError("information matrix is not positive definite") from None
        info.setflags(write=False)
        object.__setattr__(self, "information", info)

    @property
    def key(self):
        return (self.from_id, self.to_id, self.kind)

    def same_as(self, other: "RelativeConstraint", atol: float = 1e-12) -> bool:
        return (
            self.key == other.key
            and self.measurement.allclose(other.measurement, atol)
            and np.abs(self.information - other.information).max() <= atol * max(1.0, np.abs(self.information).max())
        )


@dataclass(frozen=True)
class PoseGraph:
    """Immutable pose graph. Node order is the insertion (chronological) order."""

    nodes: tuple = ()
    edges: tuple = ()
    frame_id: str = "map"

    def __post_init__(self):
        nodes = tuple(self.nodes)
        edges = tuple(self.edges)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        index = {}
        for k, n in enumerate(nodes):
            if n.node_id in index:
                raise ValidationError(f"duplicate node id {n.node_id}")
            index[n.node_id] = k
        for e in edges:
            if e.from_id not in index or e.to_id not in index:
                raise ValidationError(f"edge {e.from_id}->{e.to_id} references a missing node")
        object.__setattr__(self, "_index", index)

    def __eq__(self, other):
        if not isinstance(other, PoseGraph):
            return NotImplemented
        return graphs_equal(self, other, atol=0.0)

    __hash__ = None

    def __len__(self):
        return len(self.nodes)

    def index_of(self, node_id: int) -> int:
        return self._index[node_id]

    def __contains__(self, node_id) -> bool:
        return node_id in self._index

    def node(self, node_id: int) -> PoseNode:
        return self.nodes[self._index[node_id]]

    @property
    def node_ids(self) -> list:
        return [n.node_id for n in self.nodes]

    def positions(self) -> np.ndarray:
        if not self.nodes:
            return np.zeros((0, 3))
        return np.array([n.pose.translation for n in self.nodes])

    def quaternions(self) -> np.ndarray:
        if not self.nodes:
            return np.zeros((0, 4))
        return np.array([n.pose.rotation for n in self.nodes])

    def robot_nodes(self, robot_id: int) -> list:
        return [n for n in self.nodes if n.robot_id == robot_id]

    def with_nodes(self, nodes: Iterable[PoseNode]) -> "PoseGraph":
        return PoseGraph(tuple(nodes), self.edges, self.frame_id)

    def with_edges(self, edges: Iterable[RelativeConstraint]) -> "PoseGraph":
        return PoseGraph(self.nodes, tuple(edges), self.frame_id)

    def with_poses(self, poses: Sequence[Pose]) -> "PoseGraph":
        if len(poses) != len(self.nodes):
            raise ValidationError("pose count does not match node count")
        return self.with_nodes(n.with_pose(p) for n, p in zip(self.nodes, poses))

    def subgraph(self, node_ids: Iterable[int]) -> "PoseGraph":
        keep = set(node_ids)
        nodes = [n for n in self.nodes if n.node_id in keep]
        edges = [e for e in self.edges if e.from_id in keep and e.to_id in keep]
        return PoseGraph(tuple(nodes), tuple(edges), self.frame_id)

    def count_kind(self, kind: str) -> int:
        return sum(1 for e in self.edges if e.kind == kind)


def graphs_equal(a: PoseGraph, b: PoseGraph, atol: float = 1e-12) -> bool:
    if a.frame_id != b.frame_id or len(a.nodes) != len(b.nodes) or len(a.edges) != len(b.edges):
        return False
    for x, y in zip(a.nodes, b.nodes):
        if (x.node_id, x.robot_id, x.submap_id, x.timestamp) != (y.node_id, y.robot_id, y.submap_id, y.timestamp):
            return False
        if not x.pose.allclose(y.pose, atol):
            return False
    return all(x.same_as(y, atol) for x, y in zip(a.edges, b.edges))


def kabsch(source: np.ndarray, target: np.ndarray):
    """Rotation R and translation t minimizing sum ||R @ source_i + t - target_i||^2."""
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    H = (source - mu_s).T @ (target - mu_t)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    S = np.diag([1.0, 1.0, d])
    R = Vt.T @ S @ U.T
    return R, mu_t - R @ mu_s


def rmse_ate(estimate: PoseGraph, ground_truth: PoseGraph, align: bool = True) -> float:
    """Positional RMSE over shared node ids.

    With ``align`` the estimate is first moved onto the truth by the rigid
    transform (rotation + translation, no scale) minimizing squared error.
    """
    common = [n.node_id for n in estimate.nodes if n.node_id in ground_truth]
    if not common:
        raise NoCommonNodes("estimate and ground truth share no node ids")
    est = np.array([estimate.node(i).pose.translation for i in common])
    gt = np.array([ground_truth.node(i).pose.translation for i in common])
    if np.array_equal(est, gt):
        return 0.0
    if align:
        R, t = kabsch(est, gt)
        est = est @ R.T + t
    residual = est - gt
    return float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
