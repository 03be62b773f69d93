"""Command line: ``spectral-sync sim run|eval`` and ``spectral-sync graph reduce|spectrum|wavelets``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .discrepancy import BandThresholds, DetectionConfig
from .errors import SpectralSyncError, ValidationError
from .io import read_graph
from .monitor import MonitorConfig
from .posegraph import rmse_ate
from .proxy import DEFAULT_RADIUS, build_proxy, kron_reduce, laplacian, restrict_to_support
from .spectral import FilterBank, eigendecompose, spectrum_csv, wavelet_coefficients

EXIT_OK = 0
EXIT_INVALID = 2


def _dataclass_from(cls, d: dict, where: str):
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ValidationError(f"unknown keys in {where}: {sorted(extra)}")
    return cls(**d)


def load_config(path) -> dict:
    """JSON run configuration: optional sections monitor, detection, server, run."""
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    return cfg


def _scenario(arg: str, seed: int):
    from .sim import Scenario, preset
    from .sim.presets import PRESETS

    if arg in PRESETS:
        return preset(arg, seed), arg
    path = Path(arg)
    if not path.exists():
        raise ValidationError(f"{arg!r} is neither a preset ({', '.join(sorted(PRESETS))}) nor a file")
    s = Scenario.load(path)
    return replace(s, seed=seed), s.name


def cmd_sim_run(args) -> int:
    from .sim import ServerOracle, run_epochs
    from .sim.presets import run_config
    from .sim.report import summary_text, write_report

    cfg = load_config(args.config) if args.config else {}
    scenario, name = _scenario(args.scenario, args.seed)
    monitor = _dataclass_from(MonitorConfig, cfg.get("monitor", {}), "monitor")
    if args.squared_distance:
        monitor = replace(monitor, squared_distance=True)
    detection = _dataclass_from(DetectionConfig, cfg.get("detection", {}), "detection")
    if args.mid_hops is not None:
        detection = replace(detection, mid_hops=args.mid_hops)
    oracle = _dataclass_from(ServerOracle, cfg.get("server", {}), "server")
    if args.server:
        oracle = replace(oracle, mode=args.server)
    run = dict(cfg.get("run", {}))
    if args.thresholds:
        run["thresholds"] = BandThresholds.from_dict(load_config(args.thresholds))
    elif "thresholds" in run:
        run["thresholds"] = BandThresholds.from_dict(run["thresholds"])
    if args.strategy:
        run["strategy"] = args.strategy
    if args.k_sigma is not None:
        run["k_sigma"] = args.k_sigma
    config = run_config(name, monitor=monitor, detection=detection, epochs=args.epochs, **run)
    result = run_epochs(scenario, oracle, config)
    meta = {"scenario": scenario.to_dict(), "server": oracle, "config": config}
    write_report(result, args.out, meta)
    sys.stdout.write(summary_text(result.metrics))
    return EXIT_OK


def cmd_sim_eval(args) -> int:
    est = read_graph(args.estimate)
    truth = read_graph(args.truth)
    err = rmse_ate(est, truth, align=not args.no_align)
    print(f"rmse_ate {err:.6f}")
    return EXIT_OK


def _proxy_from(args):
    g = read_graph(args.graph)
    return build_proxy(g, args.radius, args.sigma, args.squared_distance)


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_graph_reduce(args) -> int:
    from .monitor import _kron_keep

    p = _proxy_from(args)
    keep = _kron_keep(p)
    r = kron_reduce(p, keep)
    if args.prune:
        r = restrict_to_support(r)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "source_i", "source_j", "weight"])
    iu, ju = np.nonzero(np.triu(r.adjacency, 1))
    for i, j in zip(iu, ju):
        w.writerow([i, j, r.nodes[i].source_node_id, r.nodes[j].source_node_id, repr(float(r.adjacency[i, j]))])
    _emit(buf.getvalue(), args.out)
    print(f"# kept {r.n} of {p.n} nodes, {r.n_edges} of {p.n_edges} edges", file=sys.stderr)
    return EXIT_OK


def cmd_graph_spectrum(args) -> int:
    p = _proxy_from(args)
    basis = eigendecompose(laplacian(p))
    bank = FilterBank.meyer(max(basis.lambda_max, 1e-12), args.scales, args.lowpass)
    _emit(spectrum_csv(basis, bank), args.out)
    return EXIT_OK


def cmd_graph_wavelets(args) -> int:
    p = _proxy_from(args)
    basis = eigendecompose(laplacian(p))
    bank = FilterBank.meyer(max(basis.lambda_max, 1e-12), args.scales, args.lowpass)
    P = p.positions()
    f = np.linalg.norm(P - P[int(np.argmin(p.timestamps()))], axis=1)
    W = wavelet_coefficients(basis, bank, f)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "source_id", "signal"] + [f"w_s{k}" for k in range(W.shape[1])])
    for n in range(p.n):
        w.writerow([n, p.nodes[n].source_node_id, repr(float(f[n]))] + [repr(float(v)) for v in W[n]])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spectral-sync", description=__doc__)
    sub = ap.add_subparsers(dest="group", required=True)

    sim = sub.add_parser("sim", help="closed-loop multi-robot simulation").add_subparsers(dest="cmd", required=True)
    run = sim.add_parser("run", help="run a scenario and write CSV reports")
    run.add_argument("--scenario", required=True, help="preset name or scenario JSON file")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--epochs", type=int, default=None, help="default: until every submap is shipped")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--squared-distance", action="store_true", help="use exp(-d^2 / 2 sigma^2) edge weights")
    run.add_argument("--mid-hops", type=int, default=None)
    run.add_argument("--thresholds", help="JSON file with small/mid/large band thresholds")
    run.add_argument("--server", choices=["ground_truth_noisy", "loop_closed"])
    run.add_argument("--strategy", choices=["spectral", "baseline", "none"])
    run.add_argument("--k-sigma", type=float, default=None, help="threshold multiplier for calibration")
    run.add_argument("--config", help="JSON config with monitor/detection/server/run sections")
    run.set_defaults(func=cmd_sim_run)

    ev = sim.add_parser("eval", help="absolute trajectory RMSE of an estimate")
    ev.add_argument("--estimate", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--no-align", action="store_true", help="skip the rigid alignment")
    ev.set_defaults(func=cmd_sim_eval)

    graph = sub.add_parser("graph", help="proxy-graph debugging tools").add_subparsers(dest="cmd", required=True)
    for name, func, helptext in (
        ("reduce", cmd_graph_reduce, "Kron-reduce the proxy graph, edges as CSV"),
        ("spectrum", cmd_graph_spectrum, "Laplacian eigenvalues and filter responses as CSV"),
        ("wavelets", cmd_graph_wavelets, "wavelet coefficients of the distance-to-origin signal as CSV"),
    ):
        p = graph.add_parser(name, help=helptext)
        p.add_argument("graph", help=".posegraph file")
        p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
        p.add_argument("--sigma", type=float, default=None)
        p.add_argument("--squared-distance", action="store_true")
        p.add_argument("--out", help="CSV path (default: stdout)")
        if name == "reduce":
            p.add_argument("--prune", action="store_true", help="drop fill-in outside the radius support")
        else:
            p.add_argument("--scales", type=int, default=7)
            p.add_argument("--lowpass", action="store_true")
        p.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SpectralSyncError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
