"""Stand-in for the mapping server's globally optimized multi-robot map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .. import geometry as geo
from ..errors import InvalidSpec
from ..optimizer import OptimizationProblem, OptimizerSettings, optimize
from ..posegraph import Pose, PoseGraph, RelativeConstraint, compose, isotropic_information, relative_pose

MODES = ("ground_truth_noisy", "loop_closed")


@dataclass(frozen=True)
class ServerOracle:
    mode: str = "ground_truth_noisy"
    noise_sigma: float = 0.05  # m, i.i.d. on positions (ground_truth_noisy)
    loop_radius: float = 2.0  # m, revisit distance that yields a loop closure
    loop_min_gap_s: float = 30.0
    loop_stride: int = 10  # at most one closure per this many nodes
    loop_sigma_t: float = 0.02  # loop closure measurement noise (loop_closed)
    loop_sigma_r: float = 0.002

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidSpec(f"unknown server mode {self.mode!r}")
        if self.noise_sigma < 0 or self.loop_sigma_t < 0 or self.loop_sigma_r < 0:
            raise InvalidSpec("noise levels must be nonnegative")

    def noiseless(self) -> "ServerOracle":
        return ServerOracle(self.mode, 0.0, self.loop_radius, self.loop_min_gap_s, self.loop_stride, 0.0, 0.0)


class ServerMap:
    """Server-side graph over the submaps shipped so far."""

    def __init__(self, oracle: ServerOracle, robots, seed: int):
        self.oracle = oracle
        self.robots = robots
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E12]))
        n_all = sum(len(r.ground_truth) for r in robots)
        # noise is drawn once per node so a node keeps its server pose across epochs
        self._pos_noise = rng.normal(0.0, oracle.noise_sigma, size=(n_all, 3)) if oracle.noise_sigma > 0 else None
        self._offset = np.cumsum([0] + [len(r.ground_truth) for r in robots])
        self._loop_rng_seed = [seed, 0x100C]
        self.shipped = [0] * len(robots)
        self.graph: PoseGraph | None = None
        self.last_report = None

    def update(self, shipped_counts) -> PoseGraph:
        self.shipped = list(shipped_counts)
        if self.oracle.mode == "ground_truth_noisy":
            self.graph = self._noisy()
        else:
            self.graph = self._loop_closed()
        return self.graph

    def _noisy(self) -> PoseGraph:
        nodes = []
        for r, rob in enumerate(self.robots):
            for k in range(self.shipped[r]):
                nd = rob.ground_truth.nodes[k]
                if self._pos_noise is not None:
                    p = nd.pose.translation + self._pos_noise[self._offset[r] + k]
                    nd = nd.with_pose(Pose(p, nd.pose.rotation))
                nodes.append(nd)
        return PoseGraph(tuple(nodes), (), "server")

    def loop_closures(self) -> list:
        o = self.oracle
        info = isotropic_information(max(o.loop_sigma_t, 1e-3), max(o.loop_sigma_r, 1e-4))
        gt = [nd for r, rob in enumerate(self.robots) for nd in rob.ground_truth.nodes[: self.shipped[r]]]
        if not gt:
            return []
        P = np.array([nd.pose.translation for nd in gt])
        t = np.array([nd.timestamp for nd in gt], dtype=np.int64)
        rid = np.array([nd.robot_id for nd in gt])
        tree = cKDTree(P)
        gap = o.loop_min_gap_s * 1e9
        out = []
        last_taken = {}
        for i, js in enumerate(tree.query_ball_point(P, o.loop_radius)):
            best = None
            for j in js:
                if j <= i:
                    continue
                if rid[i] == rid[j] and abs(int(t[j]) - int(t[i])) < gap:
                    continue
                d = float(np.linalg.norm(P[j] - P[i]))
                if best is None or d < best[0]:
                    best = (d, j)
            if best is None:
                continue
            key = (int(rid[i]), int(rid[best[1]]))
            if i - last_taken.get(key, -(10**9)) < o.loop_stride:
                continue
            last_taken[key] = i
            j = best[1]
            z = relative_pose(gt[i].pose, gt[j].pose)
            if o.loop_sigma_t > 0 or o.loop_sigma_r > 0:
                # per-pair stream: a closure keeps its noise as the map grows
                rng = np.random.default_rng(np.random.SeedSequence(self._loop_rng_seed + [gt[i].node_id, gt[j].node_id]))
                noise = Pose.from_rt(geo.so3_exp(rng.normal(0.0, o.loop_sigma_r, 3)),
                                     rng.normal(0.0, o.loop_sigma_t, 3))
                z = compose(z, noise)
            out.append(RelativeConstraint(gt[i].node_id, gt[j].node_id, z, info, "loop_closure"))
        return out

    def _loop_closed(self) -> PoseGraph:
        nodes, edges = [], []
        firsts = []
        for r, rob in enumerate(self.robots):
            m = self.shipped[r]
            if m == 0:
                continue
            nodes.extend(rob.odometry.nodes[:m])
            edges.extend(rob.odometry.edges[: m - 1])
            firsts.append(rob.ground_truth.nodes[0])
        if not nodes:
            return PoseGraph((), (), "server")
        # robots share a known start configuration
        anchor_info = isotropic_information(1e-3, 1e-4)
        for nd in firsts[1:]:
            z = relative_pose(firsts[0].pose, nd.pose)
            edges.append(RelativeConstraint(firsts[0].node_id, nd.node_id, z, anchor_info, "loop_closure"))
        edges.extend(self.loop_closures())
        # initial guess: each robot's odometry placed at its true start
        g = PoseGraph(tuple(nodes), tuple(edges), "server")
        out, self.last_report = optimize(OptimizationProblem(g, firsts[0].node_id, OptimizerSettings()))
        return out
