"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are written
straight to the terminal even when output capture is on.
"""
import time

import numpy as np
import pytest

from spectral_sync.monitor import encode_payload, make_broadcast
from spectral_sync.optimizer import OptimizationProblem, optimize
from spectral_sync.posegraph import compose
from spectral_sync.proxy import kron_reduce, laplacian
from spectral_sync.sim import ServerOracle, generate_scenario, preset, run_epochs
from spectral_sync.sim.presets import run_config
from spectral_sync.sim.report import epoch_csv, summary_csv
from spectral_sync.sim.server import ServerMap
from spectral_sync.spectral import FilterBank, eigendecompose, gft, wavelet_atom, wavelet_coefficients

from conftest import path_adjacency, proxy_from_adjacency, random_connected_adjacency, random_pose
from test_optimizer import perturb, random_problem, test_jacobians_match_finite_differences

pytestmark = pytest.mark.slow

TUNNEL_SEEDS = range(10)


@pytest.fixture
def verdict(request, pytestconfig):
    capman = pytestconfig.pluginmanager.getplugin("capturemanager")

    def say(ok: bool, criterion: str, detail: str):
        with capman.global_and_fixture_disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {criterion}: {detail}", flush=True)
        return ok

    return say


@pytest.fixture(scope="module")
def tunnel_runs():
    """Spectral runs on every tunnel seed, computed once for criteria 4 and 6."""
    out = {}
    t0 = time.perf_counter()
    for seed in TUNNEL_SEEDS:
        out[seed] = run_epochs(preset("tunnel", seed), ServerOracle(), run_config("tunnel"))
    return out, time.perf_counter() - t0


def test_1_spectral_correctness(verdict):
    t0 = time.perf_counter()
    worst = dict(rowsum=0.0, min_eig=np.inf, parseval=0.0, dc=0.0, atoms=0.0)
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n = int(rng.integers(3, 61))
        p = proxy_from_adjacency(random_connected_adjacency(rng, n, p=float(rng.uniform(0.05, 0.6))))
        L = laplacian(p).matrix
        b = eigendecompose(L)
        bank = FilterBank.meyer(b.lambda_max)
        f = rng.normal(size=n)
        worst["rowsum"] = max(worst["rowsum"], np.abs(L.sum(axis=1)).max())
        worst["min_eig"] = min(worst["min_eig"], b.eigenvalues.min())
        worst["parseval"] = max(worst["parseval"], abs(np.linalg.norm(gft(b, f)) - np.linalg.norm(f)) / np.linalg.norm(f))
        worst["dc"] = max(worst["dc"], np.abs(wavelet_coefficients(b, bank, np.ones(n))).max())
        W = wavelet_coefficients(b, bank, f)
        for k in rng.choice(n, min(n, 4), replace=False):
            for j, s in enumerate(bank.scales):
                worst["atoms"] = max(worst["atoms"], abs(wavelet_atom(b, bank, s, int(k)) @ f - W[k, j]))
    dt = time.perf_counter() - t0
    ok = (worst["rowsum"] <= 1e-10 and worst["min_eig"] >= -1e-10 and worst["parseval"] <= 1e-9
          and worst["dc"] <= 1e-9 and worst["atoms"] <= 1e-10 and dt < 30)
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items()) + f", {dt:.1f}s"
    assert verdict(ok, "1 spectral correctness", detail)


def test_2_kron_oracle(verdict):
    t0 = time.perf_counter()
    err = 0.0
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(3, 13))
        p = proxy_from_adjacency(random_connected_adjacency(rng, n))
        keep = np.sort(rng.choice(n, int(rng.integers(2, n)), replace=False))
        Lp = np.linalg.pinv(laplacian(p).matrix)
        Lr = np.linalg.pinv(laplacian(kron_reduce(p, keep)).matrix)
        for a in range(len(keep)):
            for c in range(a + 1, len(keep)):
                i, j = keep[a], keep[c]
                r0 = Lp[i, i] + Lp[j, j] - 2 * Lp[i, j]
                r1 = Lr[a, a] + Lr[c, c] - 2 * Lr[a, c]
                err = max(err, abs(r0 - r1))
    w = kron_reduce(proxy_from_adjacency(path_adjacency(3)), [0, 2]).adjacency[0, 1]
    dt = time.perf_counter() - t0
    ok = err <= 1e-8 and abs(w - 0.5) <= 1e-12 and dt < 10
    assert verdict(ok, "2 Kron reduction oracle", f"max resistance error {err:.2e}, path-3 weight {w!r}, {dt:.1f}s")


def test_3_zero_discrepancy(verdict):
    # identity: without drift the server map and the onboard map agree exactly
    lines, ok = [], True
    for seed in (0, 3):
        t0 = time.perf_counter()
        s = preset("tunnel", seed).without_drift()
        res = run_epochs(s, ServerOracle().noiseless(), run_config("tunnel"))
        dt = time.perf_counter() - t0
        # reference: the same onboard estimator with the feedback loop switched off
        ref = run_epochs(s, ServerOracle().noiseless(), run_config("tunnel", strategy="none"))
        added = res.metrics.total("added")
        unchanged = all(a.pose.allclose(b.pose, atol=0.0)
                        for r in range(2) for a, b in zip(res.onboard[r].nodes, ref.onboard[r].nodes))
        same_rmse = all(res.rmse_after(r) == ref.rmse_after(r) for r in range(2))
        ok = ok and added == 0 and unchanged and same_rmse and dt < 20
        lines.append(f"seed {seed}: {added} constraints, poses unchanged={unchanged}, {dt:.1f}s")
    assert verdict(ok, "3 zero-discrepancy identity", "; ".join(lines))


def test_3b_server_noise_is_not_drift_free(verdict):
    """Informational: 5 cm server noise alone can push a few pairs past mu + k sigma."""
    res = run_epochs(preset("tunnel", 3).without_drift(), ServerOracle(), run_config("tunnel"))
    n = sum(len(g) for g in res.onboard)
    added = res.metrics.total("added")
    verdict(True, "3b (info) drift-free robots, noisy server", f"{added} constraints over {n} nodes")
    assert added <= 0.05 * n


def test_4_drift_correction(verdict, tunnel_runs):
    runs, dt = tunnel_runs
    imp = np.array([[1 - res.rmse_after(r) / res.rmse_before(r) for r in range(2)] for res in runs.values()])
    nodes = [len(g) for g in runs[0].onboard]
    ok = np.median(imp) >= 0.30 and imp.min() > 0.0 and dt < 300 and min(nodes) >= 1800
    detail = (f"median improvement {np.median(imp):.1%}, worst {imp.min():.1%} over {imp.size} robot runs, "
              f"{nodes} nodes, {dt:.0f}s")
    assert verdict(ok, "4 drift correction efficacy", detail)


def test_5_step_fault_recovery(verdict):
    t0 = time.perf_counter()
    res = run_epochs(preset("indoor-outdoor"), ServerOracle(), run_config("indoor-outdoor"))
    dt = time.perf_counter() - t0
    before, after = res.rmse_before(0), res.rmse_after(0)
    red = 1 - after / before
    ok = red >= 0.80 and dt < 120
    assert verdict(ok, "5 step-fault recovery", f"{before:.3f} m -> {after:.3f} m ({red:.1%} reduction), {dt:.1f}s")


def test_6_sparsity(verdict, tunnel_runs):
    runs, _ = tunnel_runs
    base = run_epochs(preset("tunnel", 0), ServerOracle(), run_config("tunnel", strategy="baseline"))
    ours, theirs = runs[0].metrics.total("added"), base.metrics.total("added")
    frac = [res.metrics.total("added") / sum(len(g) for g in res.onboard) for res in runs.values()]
    ok = ours <= 0.35 * theirs and max(frac) <= 0.05
    detail = f"{ours} vs baseline {theirs} ({ours / theirs:.2f}x), at most {max(frac):.2%} of nodes over all seeds"
    assert verdict(ok, "6 sparsity", detail)


def test_7_bandwidth(verdict):
    s = preset("tunnel")
    robots = generate_scenario(s)
    server = ServerMap(ServerOracle(), robots, s.seed)
    payload = make_broadcast(server.update([len(r.odometry) for r in robots]), 1, run_config("tunnel").monitor)
    full, reduced = payload.stats["bytes_unreduced"], len(encode_payload(payload))
    saved = 1 - reduced / full
    ok = reduced == payload.stats["bytes"] and saved >= 0.40
    detail = f"{full} -> {reduced} bytes ({saved:.1%} smaller), {payload.stats['nodes_before']} -> {payload.n} nodes"
    assert verdict(ok, "7 bandwidth", detail)


def test_8_optimizer(verdict):
    failures = []
    for seed in range(5):
        try:
            test_jacobians_match_finite_differences(seed)
        except AssertionError:
            failures.append(f"jacobian seed {seed}")
    worst_cost, worst_iter = 0.0, 0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        g = random_problem(rng, n=20, extra=20, noise=0.0)
        _, rep = optimize(OptimizationProblem(perturb(g, rng, 0.2, 0.05), 0))
        worst_cost, worst_iter = max(worst_cost, rep.final_cost), max(worst_iter, rep.iterations)
    gauge = 0.0
    for seed in range(6):
        rng = np.random.default_rng(seed)
        g = perturb(random_problem(rng, n=10, extra=8, noise=0.05), rng, 0.1, 0.05)
        T = random_pose(rng, 20.0)
        a, _ = optimize(OptimizationProblem(g, 0))
        b, _ = optimize(OptimizationProblem(g.with_poses([compose(T, nd.pose) for nd in g.nodes]), 0))
        for x, y in zip(a.nodes, b.nodes):
            moved = compose(T, x.pose)
            gauge = max(gauge, np.abs(moved.translation - y.pose.translation).max(),
                        min(np.abs(moved.rotation - y.pose.rotation).max(), np.abs(moved.rotation + y.pose.rotation).max()))
    ok = not failures and worst_cost < 1e-12 and worst_iter <= 20 and gauge <= 1e-8
    detail = f"jacobian failures {failures or 'none'}, zero-noise cost {worst_cost:.1e} in <= {worst_iter} it, gauge {gauge:.1e}"
    assert verdict(ok, "8 optimizer checks", detail)


def test_9_determinism(verdict):
    s = preset("euroc-like", 5)
    a = run_epochs(s, ServerOracle(), run_config("euroc-like"))
    b = run_epochs(s, ServerOracle(), run_config("euroc-like"))
    same = epoch_csv(a.metrics) == epoch_csv(b.metrics) and summary_csv(a.metrics) == summary_csv(b.metrics)
    same = same and a.audit == b.audit
    assert verdict(same, "9 determinism", f"epoch and summary CSV byte-identical={same}, {len(epoch_csv(a.metrics))} bytes")
