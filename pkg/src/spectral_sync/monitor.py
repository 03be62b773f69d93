"""Graph monitor: representative selection, broadcast payloads, synchronization."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSpectrum, EmptyGraph, NoOverlap, ValidationError
from .posegraph import PoseGraph, PoseNode
from .proxy import (
    DEFAULT_RADIUS,
    ProxyGraph,
    alternate_select,
    build_proxy,
    decode_proxy,
    encode_proxy,
    kron_reduce,
    kron_select,
    laplacian,
    restrict_to_support,
)

NS = 1_000_000_000
_EPS = 1e-9


@dataclass(frozen=True)
class MonitorConfig:
    radius: float = DEFAULT_RADIUS
    sigma: float | None = None  # None -> radius / 3
    squared_distance: bool = False
    kron_trigger: int = 1000
    prune_fill_in: bool = True
    rep_spacing_m: float = 1.0
    rep_spacing_s: float = 2.0
    sync_tolerance_s: float = 0.5


@dataclass(frozen=True, eq=False)
class BroadcastPayload:
    proxy: ProxyGraph
    orientations: np.ndarray  # (N, 4) w x y z
    epoch: int
    stats: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        q = np.asarray(self.orientations, dtype=float).reshape(-1, 4)
        if len(q) != self.proxy.n:
            raise ValidationError("orientation array does not match proxy node count")
        q.setflags(write=False)
        object.__setattr__(self, "orientations", q)

    @property
    def n(self) -> int:
        return self.proxy.n

    def timestamps(self):
        return self.proxy.timestamps()

    def robot_ids(self):
        return self.proxy.robot_ids()

    def submap_ids(self):
        return np.array([nd.submap_id for nd in self.proxy.nodes], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Correspondence:
    pairs: tuple  # (server index, robot index), sorted by server index
    residual_dt: tuple  # ns, robot minus server

    def __len__(self):
        return len(self.pairs)

    @property
    def server_indices(self) -> np.ndarray:
        return np.array([p[0] for p in self.pairs], dtype=int)

    @property
    def robot_indices(self) -> np.ndarray:
        return np.array([p[1] for p in self.pairs], dtype=int)


def select_representatives(g: PoseGraph, spacing_m: float = 1.0, spacing_s: float = 2.0) -> list:
    """Per submap: first and last node plus nodes spaced >= spacing_m of path
    length or >= spacing_s of time after the previous representative."""
    groups = {}
    for nd in g.nodes:
        groups.setdefault((nd.robot_id, nd.submap_id), []).append(nd)
    spacing_ns = spacing_s * NS
    chosen = []
    for key in sorted(groups):
        seq = sorted(groups[key], key=lambda nd: nd.timestamp)
        reps = [seq[0]]
        travelled = 0.0
        prev = seq[0]
        for nd in seq[1:]:
            travelled += float(np.linalg.norm(nd.pose.translation - prev.pose.translation))
            prev = nd
            last = reps[-1]
            if travelled >= spacing_m - _EPS or nd.timestamp - last.timestamp >= spacing_ns - _EPS:
                reps.append(nd)
                travelled = 0.0
        if reps[-1] is not seq[-1]:
            reps.append(seq[-1])
        chosen.extend(reps)
    chosen.sort(key=lambda nd: (nd.robot_id, nd.timestamp))
    return chosen


def _kron_keep(p: ProxyGraph) -> np.ndarray:
    try:
        keep = kron_select(laplacian(p))
    except DegenerateSpectrum:
        keep = alternate_select(p)
    # every robot's latest node survives the reduction
    latest = {}
    for nd in p.nodes:
        cur = latest.get(nd.robot_id)
        if cur is None or nd.timestamp > p.nodes[cur].timestamp:
            latest[nd.robot_id] = nd.index
    return np.union1d(keep, np.array(sorted(latest.values()), dtype=int))


def make_broadcast(server_graph: PoseGraph, epoch: int, config: MonitorConfig = MonitorConfig(),
                   measure_unreduced: bool = True) -> BroadcastPayload:
    if len(server_graph) == 0:
        raise EmptyGraph("server graph is empty")
    reps = select_representatives(server_graph, config.rep_spacing_m, config.rep_spacing_s)
    proxy = build_proxy(reps, config.radius, config.sigma, config.squared_distance)
    quats = {nd.node_id: nd.pose.rotation for nd in reps}
    stats = {"nodes_before": proxy.n}
    full = None
    if proxy.n > config.kron_trigger:
        if measure_unreduced:
            full = BroadcastPayload(proxy, [quats[nd.source_node_id] for nd in proxy.nodes], epoch)
        proxy = kron_reduce(proxy, _kron_keep(proxy))
        if config.prune_fill_in:
            proxy = restrict_to_support(proxy)
    payload = BroadcastPayload(proxy, [quats[nd.source_node_id] for nd in proxy.nodes], epoch, stats)
    stats["nodes_after"] = proxy.n
    stats["bytes"] = len(encode_payload(payload))
    stats["bytes_unreduced"] = len(encode_payload(full)) if full is not None else stats["bytes"]
    return payload


def encode_payload(payload: BroadcastPayload) -> bytes:
    head = struct.pack("<4sQ", b"BCP1", payload.epoch)
    return head + encode_proxy(payload.proxy) + payload.orientations.astype("<f8").tobytes()


def decode_payload(data: bytes) -> BroadcastPayload:
    magic, epoch = struct.unpack_from("<4sQ", data, 0)
    if magic != b"BCP1":
        raise ValidationError("not a broadcast payload")
    proxy, used = decode_proxy(data, 12)
    q = np.frombuffer(data, "<f8", 4 * proxy.n, 12 + used).reshape(-1, 4)
    return BroadcastPayload(proxy, q.copy(), epoch)


def synchronize(server: BroadcastPayload, robot: ProxyGraph, robot_id: int,
                tolerance_s: float = 0.5) -> Correspondence:
    """Greedy one-to-one nearest-timestamp matching against this robot's server nodes."""
    if server.n == 0 or robot.n == 0:
        raise NoOverlap("empty graph")
    tol = int(round(tolerance_s * NS))
    s_idx = np.flatnonzero(server.robot_ids() == robot_id)
    s_t = server.timestamps()
    r_t = robot.timestamps()
    order = np.argsort(r_t, kind="stable")
    r_sorted = r_t[order]
    cands = []
    for i in s_idx:
        lo = np.searchsorted(r_sorted, s_t[i] - tol, side="left")
        hi = np.searchsorted(r_sorted, s_t[i] + tol, side="right")
        for k in range(lo, hi):
            j = int(order[k])
            cands.append((abs(int(r_t[j]) - int(s_t[i])), int(i), j))
    cands.sort()
    used_s, used_r = set(), set()
    pairs = []
    for dt, i, j in cands:
        if i in used_s or j in used_r:
            continue
        used_s.add(i)
        used_r.add(j)
        pairs.append((i, j, int(r_t[j]) - int(s_t[i])))
    if not pairs:
        raise NoOverlap(f"no server node of robot {robot_id} matches within {tolerance_s} s")
    pairs.sort()
    return Correspondence(tuple((i, j) for i, j, _ in pairs), tuple(dt for _, _, dt in pairs))


def onboard_candidates(robot_graph: PoseGraph, payload: BroadcastPayload, robot_id: int,
                       tolerance_s: float = 0.5) -> list:
    """Robot nodes nearest in time to this robot's broadcast nodes, chronological."""
    nodes = sorted(robot_graph.robot_nodes(robot_id), key=lambda nd: nd.timestamp)
    if not nodes:
        return []
    t = np.array([nd.timestamp for nd in nodes], dtype=np.int64)
    tol = tolerance_s * NS
    picked = {}
    for ts in payload.timestamps()[payload.robot_ids() == robot_id]:
        k = int(np.searchsorted(t, ts))
        best = None
        for c in (k - 1, k):
            if 0 <= c < len(t) and abs(int(t[c]) - int(ts)) <= tol:
                if best is None or abs(int(t[c]) - int(ts)) < abs(int(t[best]) - int(ts)):
                    best = c
        if best is not None:
            picked[best] = nodes[best]
    return [picked[k] for k in sorted(picked)]


def build_onboard_proxy(robot_graph: PoseGraph, payload: BroadcastPayload, robot_id: int,
                        config: MonitorConfig = MonitorConfig()) -> ProxyGraph:
    nodes = onboard_candidates(robot_graph, payload, robot_id, config.sync_tolerance_s)
    if not nodes:
        raise NoOverlap(f"robot {robot_id} has no nodes near the broadcast timestamps")
    return build_proxy(nodes, config.radius, config.sigma, config.squared_distance)
