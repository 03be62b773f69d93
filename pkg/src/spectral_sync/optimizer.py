"""Levenberg-Marquardt pose-graph optimization over SE(3).

Residual of an edge i -> j with measurement Z is the error transform
E = Z^-1 (T_i^-1 T_j) written as [translation(E), Log(rotation(E))], weighted
by the edge information (translation block first). Poses are updated with a
right perturbation, t <- t + R drho, R <- R Exp(dphi).
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry as geo
from .errors import Disconnected, NumericalFailure, ValidationError
from .posegraph import Pose, PoseGraph


@dataclass(frozen=True)
class OptimizerSettings:
    max_iterations: int = 50
    tolerance: float = 1e-10  # relative cost decrease
    lambda0: float = 1e-4
    lambda_factor: float = 10.0
    lambda_max: float = 1e12
    huber_delta: float | None = None  # applied to loop_closure edges only
    dense_below: int = 200


@dataclass(frozen=True)
class OptimizationProblem:
    graph: PoseGraph
    gauge: int
    settings: OptimizerSettings = field(default_factory=OptimizerSettings)

    def __post_init__(self):
        if self.gauge not in self.graph:
            raise ValidationError(f"gauge node {self.gauge} not in graph")


@dataclass(frozen=True)
class OptimizationReport:
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    wall_time: float  # ms
    cost_history: tuple = ()


class _Edges:
    def __init__(self, graph: PoseGraph):
        edges = graph.edges
        self.i = np.array([graph.index_of(e.from_id) for e in edges], dtype=int)
        self.j = np.array([graph.index_of(e.to_id) for e in edges], dtype=int)
        if edges:
            self.Rz = np.array([e.measurement.R for e in edges])
            self.tz = np.array([e.measurement.translation for e in edges])
            self.info = np.array([e.information for e in edges])
        else:
            self.Rz = np.zeros((0, 3, 3))
            self.tz = np.zeros((0, 3))
            self.info = np.zeros((0, 6, 6))
        self.robust = np.array([e.kind == "loop_closure" for e in edges], dtype=bool)


def _state(graph: PoseGraph):
    R = geo.quat_to_matrix(graph.quaternions()) if len(graph) else np.zeros((0, 3, 3))
    return R, graph.positions().copy()


def residuals(E: _Edges, R, t, jacobians: bool = False):
    Ri, Rj = R[E.i], R[E.j]
    RiT = np.swapaxes(Ri, 1, 2)
    RzT = np.swapaxes(E.Rz, 1, 2)
    d = np.einsum("eab,eb->ea", RiT, t[E.j] - t[E.i])
    tE = np.einsum("eab,eb->ea", RzT, d - E.tz)
    RiTRj = RiT @ Rj
    RE = RzT @ RiTRj
    phi = geo.so3_log(RE)
    r = np.concatenate([tE, phi], axis=1)
    if not jacobians:
        return r
    n = len(E.i)
    Ji = np.zeros((n, 6, 6))
    Jj = np.zeros((n, 6, 6))
    Jr_inv = geo.so3_right_jacobian_inv(phi)
    Ji[:, :3, :3] = -RzT
    Ji[:, :3, 3:] = RzT @ geo.skew(d)
    Ji[:, 3:, 3:] = -Jr_inv @ np.swapaxes(RiTRj, 1, 2)
    Jj[:, :3, :3] = RzT @ RiTRj
    Jj[:, 3:, 3:] = Jr_inv
    return r, Ji, Jj


def _weights(E: _Edges, r, delta):
    """Per-edge IRLS weights and robustified costs."""
    e2 = np.einsum("ea,eab,eb->e", r, E.info, r)
    w = np.ones(len(e2))
    cost = e2.copy()
    if delta is not None and np.any(E.robust):
        e = np.sqrt(e2)
        out = E.robust & (e > delta)
        w[out] = delta / e[out]
        cost[out] = 2.0 * delta * e[out] - delta**2
    return w, cost


def _cost(E, R, t, delta=None) -> float:
    if len(E.i) == 0:
        return 0.0
    r = residuals(E, R, t)
    return float(_weights(E, r, delta)[1].sum())


def chi2(graph: PoseGraph) -> float:
    """Total information-weighted squared residual of every edge."""
    E = _Edges(graph)
    R, t = _state(graph)
    return _cost(E, R, t)


def _retract(R, t, delta, slot):
    R = R.copy()
    t = t.copy()
    var = slot >= 0
    dx = delta.reshape(-1, 6)[slot[var]]
    t[var] += np.einsum("nab,nb->na", R[var], dx[:, :3])
    R[var] = R[var] @ geo.so3_exp(dx[:, 3:])
    return R, t


def _check_connected(graph: PoseGraph, gauge_index: int, E: _Edges):
    n = len(graph)
    adj = [[] for _ in range(n)]
    for a, b in zip(E.i, E.j):
        adj[a].append(b)
        adj[b].append(a)
    seen = np.zeros(n, dtype=bool)
    seen[gauge_index] = True
    q = deque([gauge_index])
    while q:
        a = q.popleft()
        for b in adj[a]:
            if not seen[b]:
                seen[b] = True
                q.append(b)
    if not seen.all():
        missing = [graph.nodes[k].node_id for k in np.flatnonzero(~seen)[:5]]
        raise Disconnected(f"{int((~seen).sum())} nodes unreachable from the gauge, e.g. {missing}")


def _normal_equations(E, R, t, slot, nvar, delta):
    r, Ji, Jj = residuals(E, R, t, jacobians=True)
    w, _ = _weights(E, r, delta)
    W = E.info * w[:, None, None]
    JiT_W = np.swapaxes(Ji, 1, 2) @ W
    JjT_W = np.swapaxes(Jj, 1, 2) @ W
    blocks = {
        ("i", "i"): JiT_W @ Ji,
        ("i", "j"): JiT_W @ Jj,
        ("j", "i"): JjT_W @ Ji,
        ("j", "j"): JjT_W @ Jj,
    }
    gi = np.einsum("eab,eb->ea", JiT_W, r)
    gj = np.einsum("eab,eb->ea", JjT_W, r)
    si, sj = slot[E.i], slot[E.j]
    b = np.zeros(nvar * 6)
    for s, g in ((si, gi), (sj, gj)):
        ok = s >= 0
        np.add.at(b.reshape(-1, 6), s[ok], g[ok])
    rows, cols, vals = [], [], []
    off = np.arange(6)
    for (a, c), B in blocks.items():
        sa = si if a == "i" else sj
        sc = si if c == "i" else sj
        ok = (sa >= 0) & (sc >= 0)
        if not ok.any():
            continue
        rr = (sa[ok, None, None] * 6 + off[None, :, None]) * np.ones((1, 1, 6), dtype=int)
        cc = (sc[ok, None, None] * 6 + off[None, None, :]) * np.ones((1, 6, 1), dtype=int)
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        vals.append(B[ok].ravel())
    if rows:
        H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nvar * 6, nvar * 6)).tocsc()
    else:
        H = sp.csc_matrix((nvar * 6, nvar * 6))
    return H, b


def _solve(H, b, lam, dense):
    diag = H.diagonal()
    damp = lam * np.where(diag > 0, diag, 1.0)
    if dense:
        A = H.toarray()
        A[np.diag_indices_from(A)] += damp
        return np.linalg.solve(A, -b)
    A = (H + sp.diags(damp)).tocsc()
    return spla.spsolve(A, -b, permc_spec="MMD_AT_PLUS_A")


def optimize(problem: OptimizationProblem):
    """Minimize the weighted residuals with the gauge pose held fixed."""
    start = time.perf_counter()
    graph, cfg = problem.graph, problem.settings
    E = _Edges(graph)
    g_idx = graph.index_of(problem.gauge)
    _check_connected(graph, g_idx, E)
    n = len(graph)
    slot = np.full(n, -1, dtype=int)
    free = [k for k in range(n) if k != g_idx]
    slot[free] = np.arange(len(free))
    nvar = len(free)
    R, t = _state(graph)
    delta_h = cfg.huber_delta
    cost = _cost(E, R, t, delta_h)
    initial = cost
    history = [cost]
    if not np.isfinite(cost):
        raise NumericalFailure("initial cost is not finite")
    lam = cfg.lambda0
    converged = nvar == 0 or len(E.i) == 0 or cost == 0.0
    it = 0
    dense = n < cfg.dense_below
    while not converged and it < cfg.max_iterations:
        it += 1
        H, b = _normal_equations(E, R, t, slot, nvar, delta_h)
        accepted = False
        while lam <= cfg.lambda_max:
            try:
                dx = _solve(H, b, lam, dense)
            except (np.linalg.LinAlgError, RuntimeError):
                dx = None
            if dx is not None and np.all(np.isfinite(dx)):
                R_new, t_new = _retract(R, t, dx, slot)
                new = _cost(E, R_new, t_new, delta_h)
                if np.isfinite(new) and new < cost:
                    accepted = True
                    break
            lam *= cfg.lambda_factor
        if not accepted:
            # no damping level reduces the cost: a (numerical) minimum
            converged = True
            break
        decrease = cost - new
        R, t, cost = R_new, t_new, new
        history.append(cost)
        lam = max(lam / cfg.lambda_factor, 1e-12)
        if decrease <= cfg.tolerance * max(cost + decrease, 1e-300) or cost < 1e-24 or np.abs(dx).max() < 1e-14:
            converged = True
    if not np.isfinite(cost):
        raise NumericalFailure("cost diverged")
    Q = geo.matrix_to_quat(R) if n else np.zeros((0, 4))
    poses = [graph.nodes[k].pose if k == g_idx else Pose(t[k], Q[k]) for k in range(n)]
    out = graph.with_poses(poses)
    report = OptimizationReport(initial, cost, it, bool(converged), 1e3 * (time.perf_counter() - start),
                                tuple(history))
    return out, report
