"""Tables and figures from persisted run records.

Reports are pure functions of the records: numbers are read verbatim, never
recomputed. Every figure is written twice, as a PNG and as the plotted data
in CSV, and both carry the source run ids in a footer.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fscil_tricks.errors import DataError
from fscil_tricks.metrics import cumulative_distance_distribution
from fscil_tricks.records import ExperimentRecord


def _footer(records: Sequence[ExperimentRecord]) -> str:
    return "runs: " + ", ".join(r.run_id for r in records)


def _write_csv(path: Path, header: list[str], rows: list[list], footer: str) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
        writer.writerow([f"# {footer}"])


def accuracy_table(records: Sequence[ExperimentRecord]) -> tuple[list[str], list[list]]:
    """Per-session accuracy rows, one per run, plus a delta-to-first column."""
    if not records:
        raise DataError("no records to report")
    n_sessions = max(len(r.sessions) for r in records)
    header = ["run_id", *[f"session_{t}" for t in range(n_sessions)], "final", "delta_vs_first"]
    first_final = records[0].final_accuracy
    rows = []
    for r in records:
        accs = r.session_accuracies()
        padded = [f"{a:.4f}" for a in accs] + [""] * (n_sessions - len(accs))
        rows.append(
            [r.run_id, *padded, f"{r.final_accuracy:.4f}", f"{r.final_accuracy - first_final:+.4f}"]
        )
    return header, rows


def format_table(header: list[str], rows: list[list]) -> str:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(str(c).ljust(w) for c, w in zip(row, widths)) for row in rows)
    return "\n".join(lines)


def write_report(records: Sequence[ExperimentRecord], out_dir: str | Path) -> list[Path]:
    """Emit accuracy table, session curves, distance CDFs, separation bars,
    and per-run confusion heatmaps."""
    if not records:
        raise DataError("no records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    footer = _footer(records)
    written: list[Path] = []

    header, rows = accuracy_table(records)
    table_csv = out / "accuracy_table.csv"
    _write_csv(table_csv, header, rows, footer)
    written.append(table_csv)

    # Accuracy over sessions.
    fig, ax = plt.subplots(figsize=(5, 3.5))
    curve_rows = []
    for r in records:
        accs = r.session_accuracies()
        ax.plot(range(len(accs)), accs, marker="o", label=r.run_id)
        curve_rows.extend([r.run_id, t, a] for t, a in enumerate(accs))
    ax.set_xlabel("session")
    ax.set_ylabel("total accuracy")
    ax.legend(fontsize=7)
    fig.text(0.01, 0.01, footer, fontsize=6)
    fig.tight_layout()
    fig.savefig(out / "session_accuracy.png", dpi=120)
    plt.close(fig)
    _write_csv(out / "session_accuracy.csv", ["run_id", "session", "accuracy"], curve_rows, footer)
    written += [out / "session_accuracy.png", out / "session_accuracy.csv"]

    # Cumulative distance distributions of the final session geometry.
    for kind in ("inter", "intra"):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        cdf_rows = []
        for r in records:
            geom = r.geometry[-1]
            values = geom.inter_values() if kind == "inter" else geom.intra_values()
            if not values:
                continue
            cdf = cumulative_distance_distribution(values)
            xs = [t for t, _ in cdf]
            ys = [p for _, p in cdf]
            ax.plot(xs, ys, label=r.run_id)
            cdf_rows.extend([r.run_id, t, p] for t, p in cdf)
        ax.set_xlabel(f"{kind}-class distance")
        ax.set_ylabel("cumulative probability")
        ax.legend(fontsize=7)
        fig.text(0.01, 0.01, footer, fontsize=6)
        fig.tight_layout()
        fig.savefig(out / f"cdf_{kind}.png", dpi=120)
        plt.close(fig)
        _write_csv(
            out / f"cdf_{kind}.csv", ["run_id", "threshold", "cumulative_p"], cdf_rows, footer
        )
        written += [out / f"cdf_{kind}.png", out / f"cdf_{kind}.csv"]

    # Separation bars (final session).
    fig, ax = plt.subplots(figsize=(5, 3.5))
    groups = ("all", "base", "novel")
    width = 0.8 / len(records)
    sep_rows = []
    for i, r in enumerate(records):
        sep = r.geometry[-1].separation
        vals = [sep.get(g) if sep.get(g) is not None else 0.0 for g in groups]
        ax.bar(np.arange(len(groups)) + i * width, vals, width=width, label=r.run_id)
        sep_rows.extend([r.run_id, g, sep.get(g)] for g in groups)
    ax.set_xticks(np.arange(len(groups)) + 0.4 - width / 2)
    ax.set_xticklabels(groups)
    ax.set_ylabel("class separation")
    ax.legend(fontsize=7)
    fig.text(0.01, 0.01, footer, fontsize=6)
    fig.tight_layout()
    fig.savefig(out / "separation.png", dpi=120)
    plt.close(fig)
    _write_csv(out / "separation.csv", ["run_id", "group", "separation"], sep_rows, footer)
    written += [out / "separation.png", out / "separation.csv"]

    # Confusion heatmaps (final session, one per run).
    for r in records:
        final = r.sessions[-1]
        fig, ax = plt.subplots(figsize=(4, 3.5))
        im = ax.imshow(final.confusion, cmap="viridis")
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(r.run_id, fontsize=8)
        fig.colorbar(im, ax=ax)
        fig.text(0.01, 0.01, f"runs: {r.run_id}", fontsize=6)
        fig.tight_layout()
        path = out / f"confusion_{r.run_id}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        conf_rows = [
            [r.run_id, final.class_order[i], final.class_order[j], int(final.confusion[i, j])]
            for i in range(final.confusion.shape[0])
            for j in range(final.confusion.shape[1])
        ]
        csv_path = out / f"confusion_{r.run_id}.csv"
        _write_csv(csv_path, ["run_id", "true_class", "predicted_class", "count"], conf_rows, f"runs: {r.run_id}")
        written += [path, csv_path]
    return written
