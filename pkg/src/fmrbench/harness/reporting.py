"""Presentation of evaluation reports: summary tables and a bar chart.

Tables come in CSV and Markdown, always with two-decimal values; undefined
metrics render as an empty CSV cell or "n/a" in Markdown. The chart is a
simple FMR bar plot written as PNG.
"""

from __future__ import annotations

from pathlib import Path

from PIL import Image, ImageDraw

from ..metrics import EvaluationReport, round2


def _fmt(value, undefined: str) -> str:
    if value is None:
        return undefined
    return f"{round2(value):.2f}"


def summary_rows(named_reports) -> list[dict]:
    """One row per (name, EvaluationReport) pair: Model, SA, PA, FMR."""
    rows = []
    for name, report in named_reports:
        rows.append(
            {
                "model": name,
                "sa": report.standard_accuracy,
                "pa": report.perturbed_accuracy,
                "fmr": report.fmr,
            }
        )
    return rows


def summary_csv(named_reports) -> str:
    lines = ["Model,SA,PA,FMR"]
    for row in summary_rows(named_reports):
        lines.append(
            f"{row['model']},{_fmt(row['sa'], '')},{_fmt(row['pa'], '')},"
            f"{_fmt(row['fmr'], '')}"
        )
    return "\n".join(lines) + "\n"


def summary_markdown(named_reports) -> str:
    lines = [
        "| Model | SA | PA | FMR |",
        "| --- | --- | --- | --- |",
    ]
    for row in summary_rows(named_reports):
        lines.append(
            f"| {row['model']} | {_fmt(row['sa'], 'n/a')} | "
            f"{_fmt(row['pa'], 'n/a')} | {_fmt(row['fmr'], 'n/a')} |"
        )
    return "\n".join(lines) + "\n"


def per_class_rows(report: EvaluationReport) -> list[dict]:
    """Per-class SA/VR/FMR rows plus a Total row, ordered by class index."""
    rows = []
    items = sorted(report.per_class.items(), key=lambda kv: kv[1]["label"])
    for name, stats in items:
        rows.append(
            {
                "class": name,
                "sa": stats["sa"],
                "vr": stats["vr"],
                "fmr": stats["fmr"],
            }
        )
    rows.append(
        {
            "class": "Total",
            "sa": report.standard_accuracy,
            "vr": report.validation_rate,
            "fmr": report.fmr,
        }
    )
    return rows


def per_class_csv(report: EvaluationReport) -> str:
    lines = ["Class,SA,VR,FMR"]
    for row in per_class_rows(report):
        lines.append(
            f"{row['class']},{_fmt(row['sa'], '')},{_fmt(row['vr'], '')},"
            f"{_fmt(row['fmr'], '')}"
        )
    return "\n".join(lines) + "\n"


def per_class_markdown(report: EvaluationReport) -> str:
    lines = [
        "| Class | SA | VR | FMR |",
        "| --- | --- | --- | --- |",
    ]
    for row in per_class_rows(report):
        lines.append(
            f"| {row['class']} | {_fmt(row['sa'], 'n/a')} | "
            f"{_fmt(row['vr'], 'n/a')} | {_fmt(row['fmr'], 'n/a')} |"
        )
    return "\n".join(lines) + "\n"


def fmr_bar_chart(named_reports, path, width: int = 640, height: int = 360) -> None:
    """Write a PNG bar chart of FMR per model (0-100 axis)."""
    rows = summary_rows(named_reports)
    img = Image.new("RGB", (width, height), "white")
    draw = ImageDraw.Draw(img)
    left, right, top, bottom = 50, 20, 20, 50
    plot_w = width - left - right
    plot_h = height - top - bottom

    # Axes and horizontal gridlines every 20 points.
    draw.line([(left, top), (left, top + plot_h)], fill="black")
    draw.line([(left, top + plot_h), (left + plot_w, top + plot_h)], fill="black")
    for tick in range(0, 101, 20):
        y = top + plot_h - int(plot_h * tick / 100)
        draw.line([(left - 4, y), (left + plot_w, y)], fill="lightgray")
        draw.text((6, y - 6), f"{tick}", fill="black")

    if rows:
        slot = plot_w / len(rows)
        bar_w = max(int(slot * 0.6), 2)
        for i, row in enumerate(rows):
            value = 0.0 if row["fmr"] is None else max(0.0, min(100.0, row["fmr"]))
            x0 = left + int(slot * i + (slot - bar_w) / 2)
            bar_h = int(plot_h * value / 100)
            y0 = top + plot_h - bar_h
            draw.rectangle(
                [x0, y0, x0 + bar_w, top + plot_h], fill="steelblue", outline="black"
            )
            label = str(row["model"])[:12]
            draw.text((x0, top + plot_h + 6), label, fill="black")
            mark = "n/a" if row["fmr"] is None else f"{round2(row['fmr']):.2f}"
            draw.text((x0, max(top, y0 - 14)), mark, fill="black")

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
