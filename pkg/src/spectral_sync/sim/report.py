"""CSV and text reports of a run. Everything here except the timing file is
a deterministic function of the run's metrics."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, fields
from pathlib import Path

from ..io import write_graph
from .harness import STAGES, EpochRecord, RunMetrics, RunResult

EPOCH_COLUMNS = [f.name for f in fields(EpochRecord)] + ["bytes_up_total", "bytes_down_total"]
SUMMARY_COLUMNS = [
    "robot", "nodes", "rmse_uncorrected", "rmse_corrected", "improvement_pct", "rmse_server", "factors",
    "added", "updated", "skipped", "bytes_up_avg", "bytes_down_avg", "bytes_down_unreduced_avg",
]


def _cell(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def epoch_csv(metrics: RunMetrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPOCH_COLUMNS)
    up, down = {}, {}
    for rec in metrics.records:
        up[rec.robot] = up.get(rec.robot, 0) + rec.bytes_up
        down[rec.robot] = down.get(rec.robot, 0) + rec.bytes_down
        row = [_cell(getattr(rec, c)) for c in EPOCH_COLUMNS[:-2]] + [up[rec.robot], down[rec.robot]]
        w.writerow(row)
    return buf.getvalue()


def summary_rows(metrics: RunMetrics) -> list:
    rows = []
    for r in sorted({rec.robot for rec in metrics.records}):
        recs = metrics.for_robot(r)
        last = recs[-1]
        before, after = last.rmse_uncorrected, last.rmse_corrected
        n = len(recs)
        rows.append({
            "robot": r,
            "nodes": last.nodes,
            "rmse_uncorrected": before,
            "rmse_corrected": after,
            "improvement_pct": 100.0 * (1.0 - after / before) if before > 0 else 0.0,
            "rmse_server": last.rmse_server,
            "factors": last.factors,
            "added": sum(x.added for x in recs),
            "updated": sum(x.updated for x in recs),
            "skipped": sum(x.skipped for x in recs),
            "bytes_up_avg": sum(x.bytes_up for x in recs) / n,
            "bytes_down_avg": sum(x.bytes_down for x in recs) / n,
            "bytes_down_unreduced_avg": sum(x.bytes_down_unreduced for x in recs) / n,
        })
    return rows


def summary_csv(metrics: RunMetrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in summary_rows(metrics):
        w.writerow([_cell(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def summary_text(metrics: RunMetrics) -> str:
    rows = summary_rows(metrics)
    head = f"{'robot':>5} {'RMSE odo [m]':>13} {'RMSE corr [m]':>14} {'gain %':>7} {'server [m]':>11} " \
           f"{'# factors':>10} {'added':>6} {'down kB/ep':>11} {'full kB/ep':>11}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r['robot']:>5} {r['rmse_uncorrected']:>13.3f} {r['rmse_corrected']:>14.3f} "
            f"{r['improvement_pct']:>7.1f} {r['rmse_server']:>11.3f} {r['factors']:>10d} {r['added']:>6d} "
            f"{r['bytes_down_avg'] / 1e3:>11.1f} {r['bytes_down_unreduced_avg'] / 1e3:>11.1f}"
        )
    if metrics.thresholds is not None:
        th = metrics.thresholds
        lines.append(f"thresholds: small={th.small:.4f} mid={th.mid:.4f} large={th.large:.4f}")
    return "\n".join(lines) + "\n"


def timing_csv(metrics: RunMetrics) -> str:
    """Per-stage wall times; not reproducible between runs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "robot", "stage", "ms"])
    for e, r, stage, ms in metrics.timings:
        w.writerow([e, r, stage, f"{ms:.3f}"])
    totals = {s: 0.0 for s in STAGES}
    for _, _, stage, ms in metrics.timings:
        totals[stage] += ms
    for s in STAGES:
        w.writerow(["total", "", s, f"{totals[s]:.3f}"])
    return buf.getvalue()


def report(metrics: RunMetrics):
    """(per-epoch CSV, summary text)."""
    return epoch_csv(metrics), summary_text(metrics)


def write_report(result: RunResult, out_dir, meta: dict | None = None) -> list:
    """Write every artifact of a run into ``out_dir``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = result.metrics
    files = {
        "epochs.csv": epoch_csv(m),
        "summary.csv": summary_csv(m),
        "summary.txt": summary_text(m),
        "timings.csv": timing_csv(m),
        "audit.jsonl": result.audit,
    }
    if m.thresholds is not None:
        files["thresholds.json"] = json.dumps(m.thresholds.as_dict(), indent=2, sort_keys=True) + "\n"
    if meta is not None:
        files["run.json"] = json.dumps(meta, indent=2, sort_keys=True, default=_jsonable) + "\n"
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text)
        paths.append(p)
    for r, g in enumerate(result.onboard):
        for tag, graph in (("onboard", g), ("odometry", result.uncorrected[r]), ("truth", result.ground_truth[r])):
            p = out / f"robot{r}_{tag}.posegraph"
            write_graph(graph, p)
            paths.append(p)
    return paths


def _jsonable(o):
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    return str(o)
