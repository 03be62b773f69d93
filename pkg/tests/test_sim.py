import csv
import io

import numpy as np
import pytest

from spectral_sync.errors import InvalidSpec
from spectral_sync.io import serialize_graph
from spectral_sync.monitor import encode_payload, make_broadcast
from spectral_sync.posegraph import rmse_ate
from spectral_sync.sim import (
    DriftModel,
    RobotSpec,
    RunConfig,
    RunMetrics,
    Scenario,
    ServerOracle,
    StepFault,
    generate_scenario,
    preset,
    run_epochs,
)
from spectral_sync.sim.report import EPOCH_COLUMNS, epoch_csv, summary_csv, summary_text, write_report
from spectral_sync.sim.server import ServerMap


def loop(cx, cy, w, h, laps, z=0.0):
    c = [(cx - w / 2, cy - h / 2), (cx + w / 2, cy - h / 2), (cx + w / 2, cy + h / 2), (cx - w / 2, cy + h / 2)]
    return tuple((x, y, z) for x, y in (c[i % 4] for i in range(4 * laps + 1)))


def small(seed=0, drift=DriftModel(0.02, 2e-3, yaw_bias=2e-3)):
    robots = (RobotSpec(loop(0, 0, 40, 25, 2)), RobotSpec(loop(3, 2, 35, 20, 2), start_time_s=5.0))
    return Scenario("small", robots, seed=seed, drift=drift, epoch_period_s=50.0)


@pytest.fixture(scope="module")
def drifted_run():
    return run_epochs(small(), ServerOracle(), RunConfig())


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


# -- scenario generation ---------------------------------------------------------------


def test_zero_drift_is_exact():
    for r in generate_scenario(small(drift=DriftModel())):
        assert all(a.pose.allclose(b.pose, atol=0.0) for a, b in zip(r.odometry.nodes, r.ground_truth.nodes))
        assert rmse_ate(r.odometry, r.ground_truth) == 0.0


def test_yaw_drift_grows_superlinearly():
    s = Scenario("line", (RobotSpec(((0, 0, 0), (400, 0, 0))),), drift=DriftModel(yaw_bias=1e-3))
    r = generate_scenario(s)[0]
    err = np.linalg.norm(r.odometry.positions() - r.ground_truth.positions(), axis=1)
    dist = np.linalg.norm(r.ground_truth.positions(), axis=1)
    assert np.all(np.diff(err[1:]) > 0)
    k100, k400 = np.searchsorted(dist, 100.0), len(dist) - 1
    # quadratic for small angles: four times the distance, about sixteen times the error
    assert err[k400] / err[k100] > 8.0


def test_generation_deterministic():
    a, b = generate_scenario(small(3)), generate_scenario(small(3))
    for x, y in zip(a, b):
        assert serialize_graph(x.odometry) == serialize_graph(y.odometry)
        assert serialize_graph(x.ground_truth) == serialize_graph(y.ground_truth)
    c = generate_scenario(small(4))
    assert serialize_graph(c[0].odometry) != serialize_graph(a[0].odometry)


def test_step_fault_jumps():
    fault = StepFault(20.0, (2.0, 0.0, 0.0), 0.0)
    s = Scenario("f", (RobotSpec(((0, 0, 0), (60, 0, 0))),), drift=DriftModel(step_fault=fault))
    r = generate_scenario(s)[0]
    err = np.linalg.norm(r.odometry.positions() - r.ground_truth.positions(), axis=1)
    t = np.array([nd.timestamp for nd in r.odometry.nodes]) / 1e9
    assert np.all(err[t < 20.0] < 1e-9)
    assert np.allclose(err[t > 20.5], 2.0, atol=1e-9)


def test_invalid_specs():
    with pytest.raises(InvalidSpec):
        Scenario("x", ())
    with pytest.raises(InvalidSpec):
        Scenario("x", (RobotSpec(((0, 0, 0),)),))
    with pytest.raises(InvalidSpec):
        preset("moon")
    with pytest.raises(InvalidSpec):
        ServerOracle("magic")
    with pytest.raises(InvalidSpec):
        RunConfig(strategy="all")
    with pytest.raises(InvalidSpec):
        RunConfig(drop_probability=1.0)
    with pytest.raises(InvalidSpec):
        Scenario.from_dict({"robots": [{"speed": 1}]})


def test_scenario_dict_roundtrip():
    s = preset("indoor-outdoor", 5)
    assert Scenario.from_dict(s.to_dict()) == s


@pytest.mark.parametrize("name,nodes", [("tunnel", 2003), ("euroc-like", None), ("indoor-outdoor", None)])
def test_presets_generate(name, nodes):
    robots = generate_scenario(preset(name))
    if nodes is not None:
        assert all(len(r.odometry) == nodes for r in robots)
    ids = [nd.node_id for r in robots for nd in r.odometry.nodes]
    assert len(ids) == len(set(ids))


# -- harness ---------------------------------------------------------------------------


def test_drift_free_run_adds_nothing():
    res = run_epochs(small(drift=DriftModel()), ServerOracle().noiseless(), RunConfig())
    assert res.metrics.total("added") == 0
    assert all(len(g.edges) == len(g) - 1 for g in res.onboard)
    for r in range(2):
        assert res.rmse_after(r) == res.rmse_before(r) == 0.0


def test_drifted_run_improves(drifted_run):
    for r in range(2):
        assert res_ratio(drifted_run, r) < 0.5


def res_ratio(res, r):
    return res.rmse_after(r) / res.rmse_before(r)


def test_ledger_monotone(drifted_run):
    text = epoch_csv(drifted_run.metrics)
    for r in range(2):
        mine = [x for x in rows(text) if x["robot"] == str(r)]
        for col in ("factors", "bytes_up_total", "bytes_down_total", "nodes", "shipped"):
            vals = [int(x[col]) for x in mine]
            assert vals == sorted(vals)


def test_sum_consistency(drifted_run):
    m = drifted_run.metrics
    table = rows(epoch_csv(m))
    summ = rows(summary_csv(m))
    for r in range(2):
        per_epoch = sum(int(x["added"]) for x in table if x["robot"] == str(r))
        assert per_epoch == int(summ[r]["added"]) == m.total("added", r)
        n_corr = sum(1 for e in drifted_run.onboard[r].edges if e.kind.startswith("correction"))
        assert n_corr == per_epoch


def test_bytes_match_encoders(drifted_run):
    scenario = small()
    robots = generate_scenario(scenario)
    server = ServerMap(ServerOracle(), robots, scenario.seed)
    recs = drifted_run.metrics.records
    prev = [0, 0]
    for e in sorted({x.epoch for x in recs}):
        now = [x for x in recs if x.epoch == e]
        shipped = [x.shipped for x in sorted(now, key=lambda x: x.robot)]
        payload = make_broadcast(server.update(shipped), e) if sum(shipped) else None
        for x in now:
            if x.shipped:
                assert x.bytes_down == len(encode_payload(payload))
            else:
                assert x.bytes_down == 0
            ids = [nd.node_id for nd in robots[x.robot].odometry.nodes[prev[x.robot]:shipped[x.robot]]]
            expect = len(serialize_graph(robots[x.robot].odometry.subgraph(ids))) if ids else 0
            assert x.bytes_up == expect
        prev = shipped


def test_run_deterministic(drifted_run):
    again = run_epochs(small(), ServerOracle(), RunConfig())
    assert epoch_csv(again.metrics) == epoch_csv(drifted_run.metrics)
    assert summary_text(again.metrics) == summary_text(drifted_run.metrics)
    assert again.audit == drifted_run.audit


def test_empty_report():
    text = epoch_csv(RunMetrics())
    assert text == ",".join(EPOCH_COLUMNS) + "\n"
    assert summary_csv(RunMetrics()).count("\n") == 1


def test_write_report(tmp_path, drifted_run):
    paths = write_report(drifted_run, tmp_path, {"seed": 0})
    names = {p.name for p in paths}
    assert {"epochs.csv", "summary.csv", "summary.txt", "timings.csv", "audit.jsonl", "thresholds.json",
            "run.json", "robot0_onboard.posegraph", "robot1_truth.posegraph"} <= names


def test_strategy_none_and_baseline():
    none = run_epochs(small(), ServerOracle(), RunConfig(strategy="none", epochs=3))
    assert none.metrics.total("added") == 0
    base = run_epochs(small(), ServerOracle(), RunConfig(strategy="baseline", epochs=3))
    # one adjacent correction per consecutive matched pair
    last = base.metrics.final(0)
    assert base.metrics.total("added", 0) >= last.matched - 1


def test_dropped_links():
    res = run_epochs(small(), ServerOracle(), RunConfig(drop_probability=0.5, thresholds=None))
    recs = res.metrics.records
    assert any(not x.connected for x in recs) and any(x.connected for x in recs)
    for x in recs:
        if not x.connected:
            assert x.bytes_down == 0 and x.bytes_up == 0 and x.added == 0
    # everything still reaches the server eventually or stays queued
    assert all(x.shipped <= x.nodes for x in recs)


def test_loop_closed_server():
    s = small()
    res = run_epochs(s, ServerOracle("loop_closed"), RunConfig())
    assert sum(1 for c in res.server.edges if c.kind == "loop_closure") > 1
    for r in range(2):
        assert res.metrics.final(r).rmse_server < 0.5 * res.rmse_before(r)
        assert res.rmse_after(r) < res.rmse_before(r)
