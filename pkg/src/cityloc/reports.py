"""Report writers: canonical JSON, CSV tables, optional SVG chart.

The JSON report is canonical (sorted keys, no timing), so identical
runs produce identical bytes; wall-clock goes to a sidecar file.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path


def write_report_files(out_dir: Path, report, svg: bool = False) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.canonical_json() + "\n")
    (out_dir / "timing.json").write_text(json.dumps(
        {"wall_clock_sec": report.wall_clock_sec}) + "\n")
    rows = report_rows(report)
    with open(out_dir / "tables.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(rows)
    if svg:
        recall = report.retrieval_recall or {}
        labels = [f"k={k}" for k in recall]
        write_svg_bar_chart(out_dir / "recall.svg", labels,
                            [recall[k] for k in recall],
                            title="submap retrieval recall")


def report_rows(report) -> list[tuple[str, float]]:
    rows: list[tuple[str, float]] = []
    for k, v in (report.retrieval_recall or {}).items():
        rows.append((f"retrieval_recall@{k}", v))
    for key, v in (report.localization_recall or {}).items():
        rows.append((f"localization_{key}", v))
    if report.fine_mean_l1 is not None:
        rows.append(("fine_mean_l1", report.fine_mean_l1))
    if report.epoch_losses:
        rows.append(("final_train_loss", report.epoch_losses[-1]["loss"]))
    return rows


def write_ablation_files(out_dir: Path, result: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(
        json.dumps(result, sort_keys=True, indent=1) + "\n")
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell", "stage", "metric", "median",
                         *[f"seed_{s}" for s in result["seeds"]]])
        for cell, info in result["cells"].items():
            for metric, median in info["median"].items():
                writer.writerow([
                    cell, info["stage"], metric, median,
                    *[row[metric] for row in info["per_seed"]],
                ])


def write_svg_bar_chart(path: Path, labels: list[str], values: list[float],
                        title: str = "", width: int = 480,
                        height: int = 280) -> None:
    """A dependency-free bar chart; values are assumed to lie in [0, 1]."""
    n = max(len(values), 1)
    margin, base = 40, height - 40
    bar_w = (width - 2 * margin) / n * 0.7
    step = (width - 2 * margin) / n
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{width / 2}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{base}" x2="{width - margin}" y2="{base}" '
        'stroke="black"/>',
    ]
    for i, (label, value) in enumerate(zip(labels, values)):
        h = max(0.0, min(1.0, value)) * (base - 50)
        x = margin + i * step + (step - bar_w) / 2
        parts.append(f'<rect x="{x:.1f}" y="{base - h:.1f}" width="{bar_w:.1f}" '
                     f'height="{h:.1f}" fill="#4477aa"/>')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{base + 16}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{label}</text>')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{base - h - 4:.1f}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="10">{value:.2f}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
