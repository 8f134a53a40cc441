"""Report rendering: delimited score tables and matplotlib figures.

The evaluate path writes report.json plus a per-question scores CSV, and
renders summary figures (per-track means, score histogram) next to them.
The quantize path gets a per-tensor error chart. Figures are optional
conveniences; the JSON/CSV outputs are the machine-readable contract.
"""

from __future__ import annotations

import csv
import json

from .metrics import MetricReport
from .router import Question


def write_report_json(report: MetricReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def write_scores_csv(report: MetricReport, questions: list[Question], path) -> None:
    """Delimited per-question scores: id, track, task_type, score, failure."""
    tracks = {q.id: q.track for q in questions}
    types = {q.id: (q.task_type.value if q.task_type else "") for q in questions}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "track", "task_type", "score", "failure_reason"])
        for qid in sorted(report.per_question):
            writer.writerow(
                [
                    qid,
                    tracks.get(qid, ""),
                    types.get(qid, ""),
                    f"{report.per_question[qid]:.6f}",
                    report.failures.get(qid, ""),
                ]
            )


def _use_agg():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_report_figures(report: MetricReport, out_dir) -> list[str]:
    """Per-track mean bar chart and per-question score histogram as PNGs.
    Returns the written paths."""
    import os

    plt = _use_agg()
    os.makedirs(out_dir, exist_ok=True)
    written = []

    tracks = sorted(report.per_track)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar([str(t) for t in tracks], [report.per_track[t] for t in tracks], color="#4878a8")
    ax.set_xlabel("track")
    ax.set_ylabel("mean score")
    ax.set_ylim(0, 1)
    ax.set_title("Per-track mean score")
    fig.tight_layout()
    path = os.path.join(out_dir, "track_scores.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.hist(list(report.per_question.values()), bins=20, range=(0.0, 1.0), color="#6fa15c")
    ax.set_xlabel("score")
    ax.set_ylabel("questions")
    ax.set_title("Per-question score distribution")
    fig.tight_layout()
    path = os.path.join(out_dir, "score_histogram.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def render_quant_figure(quant_report: dict, out_dir) -> list[str]:
    """Bar chart of per-tensor max-abs reconstruction error."""
    import os

    plt = _use_agg()
    os.makedirs(out_dir, exist_ok=True)
    names, errors = [], []
    for name, info in sorted(quant_report.get("tensors", {}).items()):
        if not info.get("skipped"):
            names.append(name)
            errors.append(info["max_abs_error"])
    if not names:
        return []
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(names)), 3.5))
    ax.bar(range(len(names)), errors, color="#b0604f")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("max abs error")
    ax.set_title(f"int4 reconstruction error (group size {quant_report.get('group_size')})")
    fig.tight_layout()
    path = os.path.join(out_dir, "quant_error.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]
