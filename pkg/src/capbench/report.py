"""Result serialization: delimited files, JSON summaries, and figures.

CSV files always carry a header row, use '.' decimals, and print floats
with full double precision via repr, so identical runs produce byte
identical files.  Each report also renders a matplotlib figure next to
its delimited output.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bounds import RateRegion
from .trainer import CapacityRunResult


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_results_csv(path: Path, channel: str, snr_db: float,
                      results: list[tuple[float, CapacityRunResult]]) -> None:
    rows = []
    for snr, result in results:
        for t in result.trials:
            if t.failed:
                continue
            rows.append([channel, snr, result.estimator_kind, t.trial,
                         t.estimate, t.converged_iter])
    write_csv(path, ["channel", "snr_db", "estimator", "trial",
                     "estimate_nats", "converged_iter"], rows)


def write_hist_csv(path: Path, histogram: list[tuple[float, float, int]]) -> None:
    write_csv(path, ["bin_left", "bin_right", "count"],
              [[left, right, count] for left, right, count in histogram])


def write_summary_json(path: Path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_bounds_csv(path: Path, rows: list[list]) -> None:
    write_csv(path, ["channel", "param", "kind", "value_nats", "source"], rows)


def write_region_csv(path: Path, estimated: RateRegion | None,
                     analytic: RateRegion) -> None:
    rows = []
    if estimated is not None:
        for r1, r2 in estimated.vertices:
            rows.append(["estimated", r1, r2])
    for r1, r2 in analytic.vertices:
        rows.append(["analytic", r1, r2])
    write_csv(path, ["origin", "r1_nats", "r2_nats"], rows)


def save_histogram_figure(path: Path, histogram: list[tuple[float, float, int]],
                          title: str) -> None:
    lefts = [b[0] for b in histogram]
    widths = [b[1] - b[0] for b in histogram]
    counts = [b[2] for b in histogram]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(lefts, counts, width=widths, align="edge", color="#1f77b4", alpha=0.8)
    ax.set_xlabel("channel input")
    ax.set_ylabel("count")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_region_figure(path: Path, estimated: RateRegion | None,
                       analytic: RateRegion, title: str) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 5.5))

    def closed(region: RateRegion):
        pts = [(0.0, 0.0), *region.vertices, (0.0, 0.0)]
        return np.array(pts)

    pts = closed(analytic)
    ax.plot(pts[:, 0], pts[:, 1], "o-", label="analytic", color="#1f77b4")
    if estimated is not None:
        pts = closed(estimated)
        ax.plot(pts[:, 0], pts[:, 1], "s--", label="estimated", color="#d62728")
    ax.set_xlabel("R1 (nats)")
    ax.set_ylabel("R2 (nats)")
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_bounds_figure(path: Path, rows: list[list], title: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    by_kind: dict[str, list[tuple[float, float]]] = {}
    for channel, param, kind, value, _source in rows:
        if kind == "error" or value is None:
            continue
        by_kind.setdefault(kind, []).append((float(param), float(value)))
    for kind, pairs in sorted(by_kind.items()):
        pairs.sort()
        xs = [p[0] for p in pairs]
        ys = [p[1] for p in pairs]
        ax.plot(xs, ys, "o-", label=kind)
    ax.set_xlabel("parameter (dB)")
    ax.set_ylabel("nats")
    ax.set_title(title)
    if by_kind:
        ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
