"""Seeded synthetic multi-robot scenarios: trajectories, drift, submaps."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import geometry as geo
from ..errors import InvalidSpec
from ..posegraph import (
    Pose,
    PoseGraph,
    PoseNode,
    RelativeConstraint,
    compose,
    isotropic_information,
    relative_pose,
)

NS = 1_000_000_000
ID_STRIDE = 1_000_000  # node id = robot * ID_STRIDE + sample index
MIN_SIGMA_T = 1e-3  # floors keep drift-free odometry information finite
MIN_SIGMA_R = 1e-4


@dataclass(frozen=True)
class StepFault:
    time_s: float
    translation: tuple = (0.0, 0.0, 0.0)
    yaw: float = 0.0


@dataclass(frozen=True)
class DriftModel:
    sigma_t: float = 0.0  # m / sqrt(s), per axis
    sigma_yaw: float = 0.0  # rad / sqrt(s)
    yaw_bias: float = 0.0  # rad / s
    step_fault: StepFault | None = None

    @property
    def is_zero(self) -> bool:
        return self.sigma_t == 0 and self.sigma_yaw == 0 and self.yaw_bias == 0 and self.step_fault is None


@dataclass(frozen=True)
class RobotSpec:
    waypoints: tuple  # ((x, y, z), ...)
    speed: float = 1.0  # m / s
    start_time_s: float = 0.0
    drift: DriftModel | None = None  # overrides the scenario drift for this robot


@dataclass(frozen=True)
class Scenario:
    name: str
    robots: tuple
    seed: int = 0
    odometry_rate_hz: float = 2.0
    drift: DriftModel = field(default_factory=DriftModel)
    submap_period_s: float = 10.0
    epoch_period_s: float = 100.0
    # per-edge odometry standard deviations assumed onboard; None derives them from the drift model
    odometry_sigma_t: float | None = None
    odometry_sigma_r: float | None = None

    def __post_init__(self):
        if not self.robots:
            raise InvalidSpec("scenario needs at least one robot")
        if self.odometry_rate_hz <= 0 or self.submap_period_s <= 0 or self.epoch_period_s <= 0:
            raise InvalidSpec("rates and periods must be positive")
        for r in self.robots:
            if len(r.waypoints) < 2 or r.speed <= 0:
                raise InvalidSpec("each robot needs >= 2 waypoints and a positive speed")

    def drift_for(self, robot: int) -> DriftModel:
        return self.robots[robot].drift or self.drift

    def odometry_sigmas(self, robot: int) -> tuple:
        d = self.drift_for(robot)
        root_dt = np.sqrt(1.0 / self.odometry_rate_hz)
        st = self.odometry_sigma_t if self.odometry_sigma_t is not None else max(d.sigma_t * root_dt, MIN_SIGMA_T)
        sr = self.odometry_sigma_r if self.odometry_sigma_r is not None else max(d.sigma_yaw * root_dt, MIN_SIGMA_R)
        return float(st), float(sr)

    def without_drift(self) -> "Scenario":
        robots = tuple(replace(r, drift=None) for r in self.robots)
        return replace(self, robots=robots, drift=DriftModel())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        def drift(x):
            if x is None:
                return None
            fault = x.get("step_fault")
            if fault is not None:
                fault = StepFault(float(fault["time_s"]), tuple(fault.get("translation", (0, 0, 0))),
                                  float(fault.get("yaw", 0.0)))
            return DriftModel(float(x.get("sigma_t", 0)), float(x.get("sigma_yaw", 0)),
                              float(x.get("yaw_bias", 0)), fault)

        try:
            robots = tuple(
                RobotSpec(tuple(tuple(float(v) for v in w) for w in r["waypoints"]), float(r.get("speed", 1.0)),
                          float(r.get("start_time_s", 0.0)), drift(r.get("drift")))
                for r in d["robots"]
            )
            keys = {"seed", "odometry_rate_hz", "submap_period_s", "epoch_period_s", "odometry_sigma_t",
                    "odometry_sigma_r"}
            kw = {k: d[k] for k in keys if k in d}
            return cls(d.get("name", "custom"), robots, drift=drift(d.get("drift")) or DriftModel(), **kw)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpec(f"bad scenario description: {exc}") from None

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class RobotData:
    robot_id: int
    ground_truth: PoseGraph
    odometry: PoseGraph  # odometry poses chained from the true start, odometry edges

    @property
    def duration_ns(self) -> int:
        return self.ground_truth.nodes[-1].timestamp


def sample_path(waypoints, speed: float, rate_hz: float):
    """Positions and headings along a polyline at constant speed."""
    W = np.asarray(waypoints, dtype=float)
    seg = np.diff(W, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    keep = seg_len > 0
    W = np.vstack([W[:1], W[1:][keep]])
    seg, seg_len = seg[keep], seg_len[keep]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    step = speed / rate_hz
    n = int(np.floor(total / step + 1e-9)) + 1
    s = np.arange(n) * step
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[k]) / seg_len[k]
    P = W[k] + frac[:, None] * seg[k]
    yaw = np.arctan2(seg[k, 1], seg[k, 0])
    pitch = np.arctan2(seg[k, 2], np.linalg.norm(seg[k, :2], axis=1))
    return P, yaw, pitch


def _orientation(yaw, pitch):
    qz = geo.quat_from_yaw(yaw)
    qy = geo.quat_from_axis_angle([0.0, 1.0, 0.0], -pitch)
    return geo.quat_multiply(qz, qy)


def generate_robot(spec: Scenario, robot: int, rng: np.random.Generator) -> RobotData:
    rs = spec.robots[robot]
    P, yaw, pitch = sample_path(rs.waypoints, rs.speed, spec.odometry_rate_hz)
    dt = 1.0 / spec.odometry_rate_hz
    t0 = int(round(rs.start_time_s * NS))
    stamps = t0 + np.round(np.arange(len(P)) * dt * NS).astype(np.int64)
    submap_ns = int(round(spec.submap_period_s * NS))
    Q = _orientation(yaw, pitch)
    gt_poses = [Pose(P[k], Q[k]) for k in range(len(P))]
    base = robot * ID_STRIDE
    submaps = [int(s // submap_ns) for s in stamps]
    gt_nodes = [PoseNode(base + k, robot, submaps[k], int(stamps[k]), gt_poses[k]) for k in range(len(P))]

    drift = spec.drift_for(robot)
    R = geo.quat_to_matrix(np.array([p.rotation for p in gt_poses]))
    RT = np.swapaxes(R[:-1], 1, 2)
    R_inc = RT @ R[1:]
    t_inc = np.einsum("kab,kb->ka", RT, P[1:] - P[:-1])
    n = len(t_inc)
    if drift.is_zero:
        odo_poses = list(gt_poses)
    else:
        noise_t = rng.normal(0.0, drift.sigma_t * np.sqrt(dt), size=(n, 3))
        noise_y = rng.normal(0.0, drift.sigma_yaw * np.sqrt(dt), size=n) + drift.yaw_bias * dt
        R_err = geo.quat_to_matrix(geo.quat_from_yaw(noise_y))
        t_err = noise_t
        if drift.step_fault is not None:
            f = drift.step_fault
            k = max(int(np.searchsorted(stamps, t0 + f.time_s * NS)) - 1, 0)
            if k < n:
                Rf = geo.quat_to_matrix(geo.quat_from_yaw(f.yaw))
                t_err[k] = t_err[k] + R_err[k] @ np.asarray(f.translation, dtype=float)
                R_err[k] = R_err[k] @ Rf
        # increment composed with the error transform: inc * err
        t_inc = t_inc + np.einsum("kab,kb->ka", R_inc, t_err)
        R_inc = R_inc @ R_err
        Rw = np.empty_like(R)
        tw = np.empty_like(P)
        Rw[0], tw[0] = R[0], P[0]
        for k in range(n):
            tw[k + 1] = tw[k] + Rw[k] @ t_inc[k]
            Rw[k + 1] = Rw[k] @ R_inc[k]
        Qw = geo.matrix_to_quat(Rw)
        odo_poses = [gt_poses[0]] + [Pose(tw[k], Qw[k]) for k in range(1, n + 1)]
    Q_inc = geo.matrix_to_quat(R_inc) if n else np.zeros((0, 4))
    odo_incs = [Pose(t_inc[k], Q_inc[k]) for k in range(n)]

    info = isotropic_information(*spec.odometry_sigmas(robot))
    edges = tuple(RelativeConstraint(base + k, base + k + 1, inc, info, "odometry") for k, inc in enumerate(odo_incs))
    odo_nodes = [nd.with_pose(p) for nd, p in zip(gt_nodes, odo_poses)]
    gt = PoseGraph(tuple(gt_nodes), (), "world")
    odo = PoseGraph(tuple(odo_nodes), edges, f"odom_{robot}")
    return RobotData(robot, gt, odo)


def generate_scenario(spec: Scenario) -> list:
    """Per robot (ground truth, odometry), reproducible from ``spec.seed``."""
    seeds = np.random.SeedSequence([spec.seed, 0x5EED]).spawn(len(spec.robots))
    return [generate_robot(spec, r, np.random.default_rng(s)) for r, s in enumerate(seeds)]
