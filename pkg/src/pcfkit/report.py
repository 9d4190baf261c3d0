"""Report bundle: machine JSON, human summary, and plots-as-data.

The CSV series carry the numbers a reader would want to plot (trial
distribution; auto vs reference scatter with the identity line implied),
and the same series are rendered to PNG files alongside, so a run
directory is inspectable without any tooling. Only report.json takes part
in determinism checks; figures and summaries are derived views.
"""

from __future__ import annotations

import csv
import io
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from . import __version__
from .metrics import EvalReport
from .reference import ReferenceInventory
from .runstore import RunDir
from .trials import TrialsOutcome


def build_report_record(run_id: str, config_snapshot: dict, config_hash: str,
                        outcome: TrialsOutcome,
                        eval_report: Optional[EvalReport] = None) -> dict:
    """The byte-stable run report: everything except timing."""
    record = {
        "run_id": run_id,
        "engine_version": __version__,
        "config_hash": config_hash,
        "config": config_snapshot,
        "trials": {
            "requested": outcome.n_requested,
            "succeeded": len(outcome.trials),
            "failed": len(outcome.failures),
            "failures": [f.to_record() for f in outcome.failures],
            "totals_co2e_kg": list(outcome.totals),
            "distribution": (outcome.distribution.to_record()
                             if outcome.distribution else None),
        },
        "results": {t.trial_id: t.result.to_record() for t in outcome.trials},
        "transcript_hashes": {t.trial_id: t.transcript.content_sha256
                              for t in outcome.trials},
    }
    if eval_report is not None:
        record["evaluation"] = eval_report.to_record()
    return record


def render_summary(record: dict) -> str:
    """Short human-readable digest of a report record."""
    lines = [f"run {record['run_id']} (engine {record['engine_version']})"]
    product = record["config"]["product"]
    lines.append(f"product: {product['name']} "
                 f"per {product['quantity']} {product['unit']}")
    lines.append(f"mode: {record['config']['mode']}, "
                 f"provider: {record['config']['provider']['id']}")
    trials = record["trials"]
    lines.append(f"trials: {trials['succeeded']}/{trials['requested']} "
                 f"succeeded, {trials['failed']} failed")
    for failure in trials["failures"]:
        lines.append(f"  failed {failure['trial_id']} at {failure['stage']}: "
                     f"{failure['message']}")
    dist = trials["distribution"]
    if dist:
        lines.append(f"total kgCO2e per functional unit: "
                     f"median {dist['median']:.4g} "
                     f"(Q1 {dist['q1']:.4g}, Q3 {dist['q3']:.4g}), "
                     f"adjusted CV {dist['adjusted_cv']:.4g}, "
                     f"{dist['filtered_out']} filtered")
    elif trials["totals_co2e_kg"]:
        lines.append(f"total kgCO2e per functional unit: "
                     f"{trials['totals_co2e_kg'][0]:.4g} (single trial)")
    for trial_id, result in sorted(record.get("results", {}).items()):
        lines.append(f"  {trial_id}: total {result['total_co2e_kg']:.4g} "
                     f"kgCO2e, coverage {result['coverage']:.2f}" +
                     (" (low confidence)" if result["low_confidence"] else ""))
    ev = record.get("evaluation")
    if ev:
        inv = ev["inventory_scores"]
        lines.append(f"evaluation vs {ev['product']}: inventory F1 "
                     f"{inv['f1']:.3f}, process F1 "
                     f"{ev['process_scores']['f1']:.3f}")
        if "pcf_error" in ev:
            lines.append(f"footprint error vs expert median: "
                         f"{ev['pcf_error']:.4f}")
    return "\n".join(lines) + "\n"


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def distribution_csv(outcome: TrialsOutcome) -> str:
    """Per-trial totals plus fence survival, one row per successful trial."""
    kept = set()
    if outcome.distribution:
        counted: dict[float, int] = {}
        for x in outcome.distribution.kept:
            counted[x] = counted.get(x, 0) + 1
        kept = counted
    rows = []
    for trial in outcome.trials:
        total = trial.result.total_co2e_kg
        inside = False
        if kept and kept.get(total, 0) > 0:
            inside = True
            kept[total] -= 1
        rows.append((trial.trial_id, repr(total), str(inside).lower()))
    return _csv_text(("trial_id", "total_co2e_kg", "inside_iqr_fence"), rows)


def scatter_csv(points: Sequence[tuple[str, float, float]]) -> str:
    """(product, auto, reference) points for an identity-line scatter."""
    rows = [(name, repr(auto), repr(ref)) for name, auto, ref in points]
    return _csv_text(("product", "auto_pcf_co2e_kg", "reference_pcf_co2e_kg"),
                     rows)


def render_distribution_png(path, outcome: TrialsOutcome,
                            reference: Optional[ReferenceInventory] = None,
                            title: str = "") -> None:
    totals = list(outcome.totals)
    if not totals:
        return
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.boxplot([totals], whis=1.5)
    ax.set_xticks([1], labels=["trials"])
    ax.scatter([1] * len(totals), totals, alpha=0.5, s=18, zorder=3)
    if reference is not None:
        ax.axhline(reference.pcf_median, linestyle="--", linewidth=1,
                   label="expert median")
        if reference.pcf_q1 is not None and reference.pcf_q3 is not None:
            ax.axhspan(reference.pcf_q1, reference.pcf_q3, alpha=0.15,
                       label="expert IQR")
        ax.legend(fontsize=8)
    ax.set_ylabel("kgCO2e per functional unit")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_scatter_png(path, points: Sequence[tuple[str, float, float]]) -> None:
    if not points:
        return
    fig, ax = plt.subplots(figsize=(5, 4.5))
    autos = [p[1] for p in points]
    refs = [p[2] for p in points]
    ax.scatter(refs, autos, s=24)
    for name, auto, ref in points:
        ax.annotate(name, (ref, auto), fontsize=7,
                    textcoords="offset points", xytext=(4, 3))
    span = [min(refs + autos), max(refs + autos)]
    pad = 0.05 * (span[1] - span[0] or 1.0)
    lo, hi = span[0] - pad, span[1] + pad
    ax.plot([lo, hi], [lo, hi], linewidth=1, linestyle=":")
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.set_xlabel("reference kgCO2e")
    ax.set_ylabel("automated kgCO2e")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_run_artifacts(run_dir: RunDir, record: dict, outcome: TrialsOutcome,
                       reference: Optional[ReferenceInventory] = None) -> None:
    """Write report.json and its derived views into the run directory."""
    run_dir.write_report(record)
    run_dir.write_text("summary.txt", render_summary(record))
    run_dir.write_text("fig3_distribution.csv", distribution_csv(outcome))
    render_distribution_png(run_dir.path / "fig3_distribution.png", outcome,
                            reference,
                            title=record["config"]["product"]["name"])
    ev = record.get("evaluation")
    if ev and ev.get("auto_median") is not None:
        points = [(ev["product"], ev["auto_median"], ev["expert_median"])]
        run_dir.write_text("fig4_scatter.csv", scatter_csv(points))
        render_scatter_png(run_dir.path / "fig4_scatter.png", points)
