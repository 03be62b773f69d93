#!/usr/bin/env python3
"""Spectral feedback vs per-node baseline vs no feedback on one preset.

Prints constraints added, final RMSE and downlink bytes for each strategy.
"""
import argparse

from spectral_sync.sim import ServerOracle, preset, run_epochs
from spectral_sync.sim.presets import PRESETS, run_config


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="tunnel", choices=sorted(PRESETS))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    s = preset(args.scenario, args.seed)
    print(f"{'strategy':10s} {'added':>7s} {'nodes':>6s} {'rmse':>24s} {'down kB':>9s} {'unreduced kB':>13s}")
    for strategy in ("none", "baseline", "spectral"):
        res = run_epochs(s, ServerOracle(), run_config(args.scenario, strategy=strategy))
        m = res.metrics
        rmse = " ".join(f"{res.rmse_after(r):.3f}" for r in range(len(res.onboard)))
        n = sum(len(g) for g in res.onboard)
        print(f"{strategy:10s} {m.total('added'):7d} {n:6d} {rmse:>24s} "
              f"{m.total('bytes_down') / 1e3:9.1f} {m.total('bytes_down_unreduced') / 1e3:13.1f}")


if __name__ == "__main__":
    main()
