"""Report rendering: deterministic JSON metrics, per-instance CSV, and
matplotlib figures (recall / mAP versus acceleration, one curve per method).

Wall-clock numbers live in a separate timing sidecar so the main report is
byte-identical across runs with the same master seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .harness import MetricReport

REPORT_SCHEMA = "sdrmri/report/v1"

_METHOD_STYLE = {
    "baseline-1": dict(color="#555555", marker="o", linestyle="--"),
    "baseline-3seed": dict(color="#888888", marker="s", linestyle="--"),
    "sdr-m": dict(color="#c0392b", marker="^", linestyle="-"),
    "sdr-a": dict(color="#2471a3", marker="v", linestyle="-"),
}


def report_dict(report: MetricReport, include_timing: bool = False) -> dict:
    rows = []
    for r in report.rows:
        row = {"acceleration": r.acceleration, "method": r.method, "recall": r.recall,
               "map_25": r.map_25, "mean_residual": r.mean_residual,
               "max_residual": r.max_residual, "mean_diversity": r.mean_diversity}
        if include_timing:
            row["seconds_per_image"] = r.seconds_per_image
        rows.append(row)
    instances = []
    for inst in report.instances:
        d = asdict(inst)
        if not include_timing:
            d.pop("seconds")
        instances.append(d)
    return {
        "schema": REPORT_SCHEMA,
        "config": report.config,
        "lesion_contrast": report.lesion_contrast,
        "metrics": rows,
        "instances": instances,
        "contract": report.contract,
    }


def write_report(report: MetricReport, out_dir) -> dict[str, str]:
    """Write report.json, timing.json, instances.csv, and figures.

    Returns a manifest mapping artifact names to file names (also written to
    manifest.json in the run directory).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    (out / "report.json").write_text(
        json.dumps(report_dict(report, include_timing=False), sort_keys=True, indent=1))
    timing = {
        "per_method": [{"acceleration": r.acceleration, "method": r.method,
                        "seconds_per_image": r.seconds_per_image} for r in report.rows],
        "per_instance": [{"phantom": i.phantom, "acceleration": i.acceleration,
                          "method": i.method, "seconds": i.seconds}
                         for i in report.instances],
    }
    (out / "timing.json").write_text(json.dumps(timing, sort_keys=True, indent=1))

    with open(out / "instances.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["phantom", "acceleration", "method", "n_gt", "n_detections",
                         "recall", "max_residual", "max_ball_distance",
                         "mean_diversity", "diversity_gain"])
        for i in report.instances:
            writer.writerow([i.phantom, i.acceleration, i.method, i.n_gt, i.n_detections,
                             _cell(i.recall), repr(i.max_residual),
                             repr(i.max_ball_distance), _cell(i.mean_diversity),
                             _cell(i.diversity_gain)])

    figures = render_figures(report, out)
    manifest = {"report": "report.json", "timing": "timing.json",
                "instances": "instances.csv", **figures}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return manifest


def _cell(v):
    return "" if v is None else repr(float(v))


def render_figures(report: MetricReport, out_dir) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for metric, label, fname in (("recall", "recall", "recall_vs_acceleration.png"),
                                 ("map_25", "mAP@0.25", "map_vs_acceleration.png")):
        fig, ax = plt.subplots(figsize=(5.2, 3.6))
        methods = sorted({r.method for r in report.rows})
        for method in methods:
            rows = sorted([r for r in report.rows if r.method == method],
                          key=lambda r: r.acceleration)
            xs = [r.acceleration for r in rows]
            ys = [getattr(r, metric) for r in rows]
            if all(y is None for y in ys):
                continue
            style = _METHOD_STYLE.get(method, {})
            ax.plot(xs, [y if y is not None else float("nan") for y in ys],
                    label=method, **style)
        ax.set_xlabel("acceleration factor")
        ax.set_ylabel(label)
        ax.set_ylim(-0.02, 1.02)
        ax.set_xticks(sorted({r.acceleration for r in report.rows}))
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out / fname, dpi=150)
        plt.close(fig)
        written[metric] = fname
    return written


def load_report(path) -> dict:
    obj = json.loads(Path(path).read_text())
    if obj.get("schema") != REPORT_SCHEMA:
        raise ValueError(f"not a report file: {path}")
    return obj


def render_figures_from_json(report_path, out_dir) -> dict[str, str]:
    """Re-render the figures from a stored report.json (the `report` command)."""
    from .harness import MethodMetrics

    obj = load_report(report_path)
    rows = [MethodMetrics(acceleration=r["acceleration"], method=r["method"],
                          recall=r["recall"], map_25=r["map_25"],
                          mean_residual=r["mean_residual"], max_residual=r["max_residual"],
                          mean_diversity=r["mean_diversity"], seconds_per_image=0.0)
            for r in obj["metrics"]]
    fake = MetricReport(config=obj["config"], lesion_contrast=obj["lesion_contrast"],
                        rows=rows, instances=[], contract=obj["contract"])
    return render_figures(fake, out_dir)
