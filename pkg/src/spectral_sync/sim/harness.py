"""Closed-loop driver: ship submaps, broadcast, detect, correct, measure."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..discrepancy import (
    BandThresholds,
    DetectionConfig,
    audit_lines,
    baseline_constraints,
    calibrate_thresholds,
    detect,
    upsert_constraints,
)
from ..errors import InvalidSpec, NoOverlap
from ..io import serialize_graph
from ..monitor import MonitorConfig, build_onboard_proxy, make_broadcast, synchronize
from ..optimizer import OptimizationProblem, OptimizerSettings, optimize
from ..posegraph import PoseGraph, compose, rmse_ate
from .scenario import NS, Scenario, generate_scenario
from .server import ServerMap, ServerOracle

STRATEGIES = ("spectral", "baseline", "none", "calibrate")
STAGES = ("ship", "server", "broadcast", "detect", "optimize")


@dataclass(frozen=True)
class RunConfig:
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    strategy: str = "spectral"
    thresholds: BandThresholds | None = None  # None: calibrate on a drift-free replay
    epochs: int | None = None  # None: until every submap has been shipped
    drop_probability: float = 0.0  # per robot and epoch, no link at all
    k_sigma: float = 3.0
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InvalidSpec(f"unknown strategy {self.strategy!r}")
        if not 0.0 <= self.drop_probability < 1.0:
            raise InvalidSpec("drop probability must be in [0, 1)")
        if self.epochs is not None and self.epochs < 0:
            raise InvalidSpec("epochs must be nonnegative")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    time_s: float
    robot: int
    connected: bool
    nodes: int
    shipped: int
    bytes_up: int
    bytes_down: int
    bytes_down_unreduced: int
    broadcast_nodes: int
    matched: int
    triggered: int
    added: int
    updated: int
    skipped: int
    factors: int
    rmse_uncorrected: float
    rmse_corrected: float
    rmse_server: float


@dataclass
class RunMetrics:
    records: list = field(default_factory=list)
    timings: list = field(default_factory=list)  # (epoch, robot, stage, ms), not deterministic
    thresholds: BandThresholds | None = None
    n_robots: int = 0

    def for_robot(self, r: int) -> list:
        return [rec for rec in self.records if rec.robot == r]

    def total(self, name: str, robot: int | None = None) -> int:
        return sum(getattr(rec, name) for rec in self.records if robot is None or rec.robot == robot)

    def final(self, robot: int) -> EpochRecord | None:
        recs = self.for_robot(robot)
        return recs[-1] if recs else None


@dataclass
class RunResult:
    metrics: RunMetrics
    onboard: list  # final PoseGraph per robot
    uncorrected: list  # odometry-only PoseGraph per robot, same nodes
    ground_truth: list
    server: PoseGraph | None
    distance_matrices: list = field(default_factory=list)
    audit: str = ""

    def rmse_before(self, r: int) -> float:
        return rmse_ate(self.uncorrected[r], self.ground_truth[r])

    def rmse_after(self, r: int) -> float:
        return rmse_ate(self.onboard[r], self.ground_truth[r])


class _Onboard:
    """A robot's live graph: odometry chained from its current estimate plus corrections."""

    def __init__(self, data):
        self.data = data
        self.n = 0
        self.poses = []
        self.corrections = []

    def advance(self, t_ns: int):
        odo = self.data.odometry
        while self.n < len(odo) and odo.nodes[self.n].timestamp < t_ns:
            if self.n == 0:
                self.poses.append(odo.nodes[0].pose)
            else:
                self.poses.append(compose(self.poses[-1], odo.edges[self.n - 1].measurement))
            self.n += 1

    def graph(self) -> PoseGraph:
        odo = self.data.odometry
        nodes = tuple(nd.with_pose(p) for nd, p in zip(odo.nodes[: self.n], self.poses))
        edges = odo.edges[: max(self.n - 1, 0)] + tuple(self.corrections)
        return PoseGraph(nodes, edges, odo.frame_id)

    def uncorrected(self) -> PoseGraph:
        odo = self.data.odometry
        return PoseGraph(odo.nodes[: self.n], odo.edges[: max(self.n - 1, 0)], odo.frame_id)

    def truth(self) -> PoseGraph:
        return PoseGraph(self.data.ground_truth.nodes[: self.n], (), "world")


def _submap_end_ns(nd, period_ns: int) -> int:
    return (nd.submap_id + 1) * period_ns


def _shipped_count(data, t_ns: int, period_ns: int) -> int:
    nodes = data.odometry.nodes
    k = 0
    while k < len(nodes) and _submap_end_ns(nodes[k], period_ns) <= t_ns:
        k += 1
    return k


def default_epochs(scenario: Scenario, robots) -> int:
    period_ns = int(round(scenario.submap_period_s * NS))
    end = max(_submap_end_ns(r.odometry.nodes[-1], period_ns) for r in robots)
    return int(math.ceil(end / (scenario.epoch_period_s * NS) - 1e-12))


def _rmse(est: PoseGraph, truth: PoseGraph) -> float:
    return rmse_ate(est, truth) if len(est) >= 3 else 0.0


def run_epochs(scenario: Scenario, oracle: ServerOracle = ServerOracle(), config: RunConfig = RunConfig(),
               robots=None, payload_cache: dict | None = None) -> RunResult:
    """Drive the server/robot loop for ``config.epochs`` epochs.

    ``payload_cache`` maps (epoch, shipped counts) to broadcasts. It is only
    valid across runs whose server map does not depend on robot odometry.
    """
    robots = robots if robots is not None else generate_scenario(scenario)
    thresholds = config.thresholds
    if payload_cache is None and oracle.mode == "ground_truth_noisy":
        payload_cache = {}
    if config.strategy == "spectral" and thresholds is None:
        thresholds = calibrate(scenario, oracle, config, payload_cache)
    n_epochs = config.epochs if config.epochs is not None else default_epochs(scenario, robots)
    period_ns = int(round(scenario.submap_period_s * NS))
    epoch_ns = int(round(scenario.epoch_period_s * NS))
    link_rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 0x11CC]))

    server = ServerMap(oracle, robots, scenario.seed)
    onboard = [_Onboard(r) for r in robots]
    shipped = [0] * len(robots)
    metrics = RunMetrics(thresholds=thresholds, n_robots=len(robots))
    dmats = []
    audit = []

    def clock(stage, e, r, t0):
        metrics.timings.append((e, r, stage, 1e3 * (time.perf_counter() - t0)))

    for e in range(1, n_epochs + 1):
        t_ns = e * epoch_ns
        links = link_rng.random(len(robots)) >= config.drop_probability
        bytes_up = [0] * len(robots)
        t0 = time.perf_counter()
        for r, rob in enumerate(robots):
            onboard[r].advance(t_ns)
            if not links[r]:
                continue
            m = _shipped_count(rob, t_ns, period_ns)
            if m > shipped[r]:
                ids = [nd.node_id for nd in rob.odometry.nodes[shipped[r]:m]]
                bytes_up[r] = len(serialize_graph(rob.odometry.subgraph(ids)))
                shipped[r] = m
        clock("ship", e, -1, t0)

        payload = None
        if sum(shipped) > 0:
            t0 = time.perf_counter()
            server_graph = server.update(shipped)
            clock("server", e, -1, t0)
            t0 = time.perf_counter()
            key = (e, tuple(shipped))
            payload = payload_cache.get(key) if payload_cache is not None else None
            if payload is None:
                payload = make_broadcast(server_graph, e, config.monitor)
                if payload_cache is not None:
                    payload_cache[key] = payload
            clock("broadcast", e, -1, t0)

        for r in range(len(robots)):
            ob = onboard[r]
            matched = triggered = 0
            rep = det = None
            down = down_full = 0
            if links[r] and payload is not None and shipped[r] > 0 and config.strategy != "none":
                down, down_full = payload.stats["bytes"], payload.stats["bytes_unreduced"]
                t0 = time.perf_counter()
                g = ob.graph()
                new = []
                try:
                    if config.strategy == "baseline":
                        rp = build_onboard_proxy(g, payload, r, config.monitor)
                        corr = synchronize(payload, rp, r, config.monitor.sync_tolerance_s)
                        matched = len(corr)
                        new = baseline_constraints(payload, corr, rp, config.detection)
                    else:
                        det = detect(payload, g, r, thresholds if config.strategy == "spectral" else None,
                                     config.detection, config.monitor)
                        matched = len(det.comparison.corr)
                        dmats.append(det.distance_matrix)
                        triggered = sum(1 for v in det.verdicts if v.bands)
                        new = det.constraints
                except NoOverlap:
                    new = []
                clock("detect", e, r, t0)
                if config.strategy != "calibrate":
                    ob.corrections, rep = upsert_constraints(ob.corrections, new, config.detection.update_trans,
                                                             config.detection.update_rot)
                    if config.strategy == "spectral":
                        audit.append(audit_lines(det.verdicts if det is not None else [], rep, epoch=e, robot=r))
                    if rep.added or rep.updated:
                        t0 = time.perf_counter()
                        g = ob.graph()
                        out, _ = optimize(OptimizationProblem(g, g.nodes[0].node_id, config.optimizer))
                        ob.poses = [nd.pose for nd in out.nodes]
                        clock("optimize", e, r, t0)
            elif links[r] and payload is not None and shipped[r] > 0:
                down, down_full = payload.stats["bytes"], payload.stats["bytes_unreduced"]
            truth = ob.truth()
            srv = 0.0
            if server.graph is not None and shipped[r] >= 3:
                ids = [nd.node_id for nd in robots[r].ground_truth.nodes[: shipped[r]]]
                srv = rmse_ate(server.graph.subgraph(ids), robots[r].ground_truth.subgraph(ids))
            metrics.records.append(EpochRecord(
                epoch=e, time_s=t_ns / NS, robot=r, connected=bool(links[r]), nodes=ob.n, shipped=shipped[r],
                bytes_up=bytes_up[r], bytes_down=down, bytes_down_unreduced=down_full,
                broadcast_nodes=payload.n if payload is not None else 0, matched=matched, triggered=triggered,
                added=rep.added if rep else 0, updated=rep.updated if rep else 0,
                skipped=rep.skipped if rep else 0, factors=len(ob.corrections) + max(ob.n - 1, 0),
                rmse_uncorrected=_rmse(ob.uncorrected(), truth), rmse_corrected=_rmse(ob.graph(), truth),
                rmse_server=srv,
            ))

    return RunResult(
        metrics=metrics,
        onboard=[ob.graph() for ob in onboard],
        uncorrected=[ob.uncorrected() for ob in onboard],
        ground_truth=[ob.truth() for ob in onboard],
        server=server.graph,
        distance_matrices=dmats,
        audit="".join(audit),
    )


def calibrate(scenario: Scenario, oracle: ServerOracle = ServerOracle(), config: RunConfig = RunConfig(),
              payload_cache: dict | None = None) -> BandThresholds:
    """Band thresholds (mu + k sigma) from a drift-free replay of the same scenario."""
    cal = RunConfig(config.monitor, config.detection, "calibrate", None, config.epochs, 0.0, config.k_sigma,
                    config.optimizer)
    res = run_epochs(scenario.without_drift(), oracle, cal, payload_cache=payload_cache)
    return calibrate_thresholds(res.distance_matrices, config.k_sigma)
