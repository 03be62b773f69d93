"""Comparison signals, scale-wise wavelet distances, verdicts and constraints."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, MissingAuxiliary, ValidationError
from .monitor import BroadcastPayload, Correspondence, MonitorConfig, build_onboard_proxy, synchronize
from .posegraph import (
    Pose,
    PoseGraph,
    RelativeConstraint,
    isotropic_information,
    relative_pose,
    rotation_delta,
    translation_delta,
)
from .proxy import ProxyGraph, ProxyNode, build_proxy, edge_weight, laplacian
from .spectral import FilterBank, eigendecompose, wavelet_coefficients

BANDS = ("small", "mid", "large")
KIND_OF_BAND = {
    "small": "correction_adjacent",
    "mid": "correction_midscale",
    "large": "correction_submap",
}


def band_partition(n_scales: int) -> dict:
    """Scale indices per band; scales are ordered largest first, so the
    trailing (smallest) scales describe the closest neighbourhood."""
    edge = max(1, (2 * n_scales) // 7)
    if n_scales < 3:
        raise ValidationError("need at least three scales for three bands")
    return {
        "large": tuple(range(0, edge)),
        "mid": tuple(range(edge, n_scales - edge)),
        "small": tuple(range(n_scales - edge, n_scales)),
    }


@dataclass(frozen=True)
class BandThresholds:
    small: float
    mid: float
    large: float

    def __post_init__(self):
        for b in BANDS:
            if not getattr(self, b) > 0:
                raise ValidationError(f"threshold for band {b} must be positive")

    def as_dict(self) -> dict:
        return {b: getattr(self, b) for b in BANDS}

    @classmethod
    def from_dict(cls, d) -> "BandThresholds":
        return cls(float(d["small"]), float(d["mid"]), float(d["large"]))


@dataclass(frozen=True)
class DetectionConfig:
    mid_hops: int = 5
    k_submaps: int = 4
    n_scales: int = 7
    with_lowpass: bool = False
    sigma_t: float = 0.1
    sigma_r: float = 0.05
    update_trans: float = 0.05
    update_rot: float = 0.02
    shared_support: bool = False  # weight the union of both edge sets on each side


@dataclass(frozen=True, eq=False)
class ComparisonSignal:
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class ScaleDistance:
    server_index: int
    robot_index: int
    distances: np.ndarray


@dataclass(frozen=True)
class DiscrepancyVerdict:
    server_index: int
    robot_index: int
    bands: frozenset
    band_stats: tuple  # (small, mid, large) maxima

    def record(self) -> dict:
        return {
            "type": "verdict",
            "server_index": self.server_index,
            "robot_index": self.robot_index,
            "bands": sorted(self.bands, key=BANDS.index),
            "band_stats": dict(zip(BANDS, self.band_stats)),
        }


@dataclass
class UpsertReport:
    added: int = 0
    updated: int = 0
    skipped: int = 0

    def record(self) -> dict:
        return {"type": "upsert", "added": self.added, "updated": self.updated, "skipped": self.skipped}


def comparison_signal(proxy: ProxyGraph, corr: Correspondence, side: str) -> ComparisonSignal:
    """Distance of each matched node to the earliest matched node, in the
    graph's own frame, ordered like the correspondence pairs."""
    if len(corr) == 0:
        raise ValidationError("correspondence is empty")
    if side not in ("server", "robot"):
        raise ValidationError("side must be 'server' or 'robot'")
    idx = corr.server_indices if side == "server" else corr.robot_indices
    P = proxy.positions()[idx]
    t = proxy.timestamps()[idx]
    origin = P[int(np.argmin(t))]
    return ComparisonSignal(np.linalg.norm(P - origin, axis=1))


def _as_matrix(feats) -> np.ndarray:
    if isinstance(feats, np.ndarray):
        return feats
    return np.array([f.coefficients for f in feats], dtype=float)


def scale_distances(server_feats, robot_feats, corr: Correspondence) -> list:
    Ws, Wr = _as_matrix(server_feats), _as_matrix(robot_feats)
    if Ws.shape[1] != Wr.shape[1]:
        raise DimensionMismatch("feature vectors have different numbers of scales")
    si, ri = corr.server_indices, corr.robot_indices
    if len(si) and (si.max() >= len(Ws) or ri.max() >= len(Wr)):
        raise DimensionMismatch("correspondence index outside the feature lists")
    D = np.abs(Ws[si] - Wr[ri])
    return [ScaleDistance(int(a), int(b), D[k]) for k, (a, b) in enumerate(zip(si, ri))]


def distance_matrix(dists) -> np.ndarray:
    if not dists:
        return np.zeros((0, 0))
    return np.vstack([d.distances for d in dists])


def band_statistics(D: np.ndarray, n_scales: int | None = None) -> np.ndarray:
    """(M, 3) per-pair band maxima in (small, mid, large) order."""
    D = np.atleast_2d(D)
    parts = band_partition(n_scales or D.shape[1])
    return np.column_stack([D[:, list(parts[b])].max(axis=1) for b in BANDS])


def classify(d: ScaleDistance, thresholds: BandThresholds) -> DiscrepancyVerdict:
    stats = band_statistics(d.distances[None, :])[0]
    th = np.array([thresholds.small, thresholds.mid, thresholds.large])
    bands = frozenset(b for b, s, t in zip(BANDS, stats, th) if s > t)
    return DiscrepancyVerdict(d.server_index, d.robot_index, bands, tuple(float(v) for v in stats))


def calibrate_thresholds(distance_matrices, k_sigma: float = 3.0, floor: float = 1e-6) -> BandThresholds:
    """mu + k * sigma of the per-pair band maxima pooled over calibration runs.

    ``floor`` keeps a band whose calibration distances are all zero from
    triggering on rounding noise.
    """
    mats = [np.atleast_2d(D) for D in distance_matrices if np.size(D)]
    if not mats:
        raise ValidationError("no calibration distances")
    S = np.vstack([band_statistics(D) for D in mats])
    th = S.mean(axis=0) + k_sigma * S.std(axis=0)
    th = np.maximum(th, floor)
    return BandThresholds(*(float(v) for v in th))


# -- comparison graphs -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Comparison:
    """Everything derived from one server/robot comparison."""

    corr: Correspondence
    server_graph: ProxyGraph
    robot_graph: ProxyGraph
    bank: FilterBank
    server_coeffs: np.ndarray
    robot_coeffs: np.ndarray
    distances: list
    robot_proxy: ProxyGraph = field(repr=False, default=None)


def _matched_graph(proxy: ProxyGraph, idx, radius, sigma, squared) -> ProxyGraph:
    nodes = [ProxyNode(k, proxy.nodes[i].position, proxy.nodes[i].source_node_id, proxy.nodes[i].timestamp,
                       proxy.nodes[i].submap_id, proxy.nodes[i].robot_id) for k, i in enumerate(idx)]
    return build_proxy(nodes, radius, sigma, squared)


def _on_support(p: ProxyGraph, mask: np.ndarray) -> ProxyGraph:
    P = p.positions()
    d = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)
    w = np.maximum(edge_weight(d, p.sigma, p.squared_distance), np.finfo(float).tiny)
    A = np.where(mask, w, 0.0)
    np.fill_diagonal(A, 0.0)
    return replace(p, adjacency=A)


def compare(payload: BroadcastPayload, robot_proxy: ProxyGraph, corr: Correspondence,
            detection: DetectionConfig = DetectionConfig(), monitor: MonitorConfig = MonitorConfig()) -> Comparison:
    """Wavelet coefficients of the distance-to-origin signal on the matched
    node sets of both graphs, both graphs rebuilt with the same radius rule."""
    si, ri = corr.server_indices, corr.robot_indices
    gs = _matched_graph(payload.proxy, si, monitor.radius, monitor.sigma, monitor.squared_distance)
    gr = _matched_graph(robot_proxy, ri, monitor.radius, monitor.sigma, monitor.squared_distance)
    if detection.shared_support:
        # an edge crossing the radius on one side only would otherwise jump by the cutoff weight
        mask = (gs.adjacency > 0) | (gr.adjacency > 0)
        gs, gr = _on_support(gs, mask), _on_support(gr, mask)
    local = Correspondence(tuple((k, k) for k in range(len(si))), corr.residual_dt)
    f = comparison_signal(gs, local, "server").values
    h = comparison_signal(gr, local, "robot").values
    bs = eigendecompose(laplacian(gs))
    br = eigendecompose(laplacian(gr))
    lam = bs.lambda_max if bs.lambda_max > 0 else 1.0
    bank = FilterBank.meyer(lam, detection.n_scales, detection.with_lowpass)
    Ws = wavelet_coefficients(bs, bank, f)
    Wr = wavelet_coefficients(br, bank, h)
    dists = scale_distances(Ws[:, : detection.n_scales], Wr[:, : detection.n_scales], local)
    # report distances against the original indices
    dists = [ScaleDistance(int(si[k]), int(ri[k]), d.distances) for k, d in enumerate(dists)]
    return Comparison(corr, gs, gr, bank, Ws, Wr, dists, robot_proxy)


# -- constraint generation -------------------------------------------------------------


def _server_pose(payload: BroadcastPayload, i: int) -> Pose:
    q = payload.orientations[i]
    if not np.all(np.isfinite(q)) or not np.any(q):
        raise MissingAuxiliary(f"server node {i} has no orientation")
    return Pose(payload.proxy.nodes[i].position, q)


def _constraint(payload, robot_proxy, a, b, kind, info) -> RelativeConstraint:
    """Constraint between the robot nodes matched to server nodes a and b."""
    sa, sb = a
    ra, rb = b
    meas = relative_pose(_server_pose(payload, sa), _server_pose(payload, sb))
    return RelativeConstraint(robot_proxy.nodes[ra].source_node_id, robot_proxy.nodes[rb].source_node_id,
                              meas, info, kind)


def generate_constraints(verdicts, robot_graph: PoseGraph, payload: BroadcastPayload, corr: Correspondence,
                         robot_proxy: ProxyGraph, config: DetectionConfig = DetectionConfig()) -> list:
    """Relative SE(3) constraints for every triggered band of every verdict.

    Hops and neighbours are counted along the chronologically ordered matched
    nodes, since only those carry server poses.
    """
    verdicts = [v for v in verdicts if v.bands]
    if not verdicts:
        return []
    if payload.orientations is None or len(payload.orientations) != payload.n:
        raise MissingAuxiliary("payload carries no orientations")
    info = isotropic_information(config.sigma_t, config.sigma_r)
    pairs = list(corr.pairs)
    t = payload.timestamps()
    pairs.sort(key=lambda p: t[p[0]])
    pos_of = {p[0]: k for k, p in enumerate(pairs)}
    for _, r in pairs:
        if robot_proxy.nodes[r].source_node_id not in robot_graph:
            raise ValidationError(f"robot node {robot_proxy.nodes[r].source_node_id} missing from robot graph")

    # submap anchors: first matched node per submap, centroids in server frame
    P = payload.proxy.positions()
    sub_members = {}
    for k, (s, _) in enumerate(pairs):
        sub_members.setdefault(payload.proxy.nodes[s].submap_id, []).append(k)
    sub_ids = sorted(sub_members)
    anchor = {sid: sub_members[sid][0] for sid in sub_ids}
    centroid = {sid: P[[pairs[k][0] for k in sub_members[sid]]].mean(axis=0) for sid in sub_ids}

    out = []
    last = len(pairs) - 1
    for v in verdicts:
        if v.server_index not in pos_of:
            continue
        k = pos_of[v.server_index]
        if "small" in v.bands and last >= 1:
            # at a trajectory end this degrades to n' and its only neighbour
            a, b = max(k - 1, 0), min(k + 1, last)
            out.append(_constraint(payload, robot_proxy, (pairs[a][0], pairs[b][0]), (pairs[a][1], pairs[b][1]),
                                   "correction_adjacent", info))
        if "mid" in v.bands and last >= 1:
            a, b = max(k - config.mid_hops, 0), min(k + config.mid_hops, last)
            out.append(_constraint(payload, robot_proxy, (pairs[a][0], pairs[b][0]), (pairs[a][1], pairs[b][1]),
                                   "correction_midscale", info))
        if "large" in v.bands and len(sub_ids) > 1:
            own = payload.proxy.nodes[v.server_index].submap_id
            others = [sid for sid in sub_ids if sid != own]
            others.sort(key=lambda sid: (float(np.linalg.norm(centroid[sid] - centroid[own])), sid))
            a = anchor[own]
            for sid in others[: config.k_submaps]:
                b = anchor[sid]
                lo, hi = (a, b) if a < b else (b, a)
                out.append(_constraint(payload, robot_proxy, (pairs[lo][0], pairs[hi][0]),
                                       (pairs[lo][1], pairs[hi][1]), "correction_submap", info))
    return _dedupe(out)


def _dedupe(constraints) -> list:
    seen = {}
    for c in constraints:
        seen.setdefault(c.key, c)
    return list(seen.values())


def baseline_constraints(payload: BroadcastPayload, corr: Correspondence, robot_proxy: ProxyGraph,
                         config: DetectionConfig = DetectionConfig()) -> list:
    """Comparator that adds one relative correction per synchronized node."""
    info = isotropic_information(config.sigma_t, config.sigma_r)
    t = payload.timestamps()
    pairs = sorted(corr.pairs, key=lambda p: t[p[0]])
    return [
        _constraint(payload, robot_proxy, (a[0], b[0]), (a[1], b[1]), "correction_adjacent", info)
        for a, b in zip(pairs, pairs[1:])
    ]


def upsert_constraints(existing, new, dt_trans: float = 0.05, dt_rot: float = 0.02):
    """Merge ``new`` into ``existing`` keyed by (from, to, kind).

    A known key is replaced only when its measurement moved by more than
    ``dt_trans`` metres or ``dt_rot`` radians.
    """
    merged = list(existing)
    where = {c.key: k for k, c in enumerate(merged)}
    report = UpsertReport()
    for c in new:
        k = where.get(c.key)
        if k is None:
            where[c.key] = len(merged)
            merged.append(c)
            report.added += 1
            continue
        old = merged[k]
        if (translation_delta(old.measurement, c.measurement) > dt_trans
                or rotation_delta(old.measurement, c.measurement) > dt_rot):
            merged[k] = c
            report.updated += 1
        else:
            report.skipped += 1
    return merged, report


# -- full robot-side pipeline ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Detection:
    comparison: Comparison
    verdicts: list
    constraints: list

    @property
    def distance_matrix(self) -> np.ndarray:
        return distance_matrix(self.comparison.distances)


def detect(payload: BroadcastPayload, robot_graph: PoseGraph, robot_id: int, thresholds: BandThresholds | None,
           detection: DetectionConfig = DetectionConfig(), monitor: MonitorConfig = MonitorConfig()) -> Detection:
    """Synchronize, compare, classify and generate constraints for one robot.

    With ``thresholds=None`` only the distances are computed (calibration).
    """
    robot_proxy = build_onboard_proxy(robot_graph, payload, robot_id, monitor)
    corr = synchronize(payload, robot_proxy, robot_id, monitor.sync_tolerance_s)
    comp = compare(payload, robot_proxy, corr, detection, monitor)
    if thresholds is None:
        return Detection(comp, [], [])
    verdicts = [classify(d, thresholds) for d in comp.distances]
    cons = generate_constraints(verdicts, robot_graph, payload, corr, robot_proxy, detection)
    return Detection(comp, verdicts, cons)


def audit_lines(verdicts, report: UpsertReport | None = None, **extra) -> str:
    lines = []
    for v in verdicts:
        if v.bands:
            lines.append(json.dumps({**v.record(), **extra}, sort_keys=True))
    if report is not None:
        lines.append(json.dumps({**report.record(), **extra}, sort_keys=True))
    return "".join(line + "\n" for line in lines)
