"""Summary statistics, delimited outputs and figures for search runs."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .evo import GenerationReport


def compute_ti(ca: Sequence[float], baseline_ca: Sequence[float]) -> float:
    """Mean accuracy minus mean baseline accuracy over the same cases."""
    ca = np.asarray(ca, dtype=float)
    baseline_ca = np.asarray(baseline_ca, dtype=float)
    if ca.size == 0 or ca.shape != baseline_ca.shape:
        raise ValueError(
            f"need two equal-length non-empty vectors, got {ca.size} and {baseline_ca.size}"
        )
    return float(ca.mean() - baseline_ca.mean())


def aggregate(ca: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    ca = np.asarray(ca, dtype=float)
    if ca.size == 0:
        raise ValueError("cannot aggregate an empty vector")
    return float(ca.mean()), float(ca.std())


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def generations_json(reports: Sequence[GenerationReport]) -> str:
    return canonical_json([r.to_dict() for r in reports])


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def emit_curve(reports: Sequence[GenerationReport]) -> str:
    if not reports:
        raise ValueError("no generation reports to emit")
    rows = [
        (r.generation, repr(r.best_ca), repr(r.best_so_far_ca), len(r.pareto_front))
        for r in reports
    ]
    return _csv(("generation", "best_ca", "best_so_far_ca", "front_size"), rows)


def emit_pareto(report: GenerationReport) -> str:
    """Rank-1 members of a generation, widths joined with '-'."""
    seen = set()
    rows = []
    for i in report.pareto_front:
        rec, widths = report.records[i], report.population[i]
        if widths in seen:
            continue
        seen.add(widths)
        rows.append((repr(rec.ca), rec.params, "-".join(str(w) for w in widths)))
    rows.sort(key=lambda r: (r[1], r[2]))
    return _csv(("ca", "params", "widths"), rows)


def emit_summary_table(cases: Sequence[dict]) -> str:
    """One row per target case plus mean and standard deviation rows."""
    rows = [(c["name"], repr(c["test_ca"]), "-".join(map(str, c["best_widths"]))) for c in cases]
    mean, std = aggregate([c["test_ca"] for c in cases])
    rows.append(("mean", repr(mean), ""))
    rows.append(("std", repr(std), ""))
    return _csv(("case", "test_ca", "best_widths"), rows)


# -- figures ----------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_curve(reports: Sequence[GenerationReport], path) -> Path:
    plt = _pyplot()
    gens = [r.generation for r in reports]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(gens, [r.best_ca for r in reports], "o-", label="best of generation")
    ax.step(gens, [r.best_so_far_ca for r in reports], where="post", label="best so far")
    ax.set_xlabel("generation")
    ax.set_ylabel("validation CA (%)")
    ax.legend(loc="lower right", frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_pareto(report: GenerationReport, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ca = np.array([r.ca for r in report.records])
    params = np.array([r.params for r in report.records])
    front = np.array(report.pareto_front, dtype=int)
    ax.scatter(params, ca, s=14, c="0.6", label="population")
    order = front[np.argsort(params[front])]
    ax.plot(params[order], ca[order], "o-", c="C3", label="rank 1")
    ax.set_xscale("log")
    ax.set_xlabel("parameters")
    ax.set_ylabel("validation CA (%)")
    ax.legend(loc="lower right", frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
