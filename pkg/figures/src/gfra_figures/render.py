"""Turn one benchmark CSV into one line plot plus an optional markdown
snippet.

The CSV contract: a header row with at least the chosen x axis, the
metric column (aer or ce_mse_db) and the series column (typically
algorithm); one data row per (grid point, algorithm). Rendering is a
pure function of the file contents: the same CSV always yields the same
plotted data arrays.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

Y_METRICS = {"aer": "AER", "ce_mse_db": "CE-MSE [dB]"}


class FigureError(ValueError):
    """Raised for contract violations: bad columns, empty data, bad metric."""


@dataclass(frozen=True)
class FigureSpec:
    csv_path: str
    x_axis: str
    y_metric: str
    series_by: str
    output_path: str
    log_y: bool = False
    markdown_path: str | None = None


@dataclass
class RenderResult:
    """Plotted data per series label, sorted by x within each series."""

    series: dict = field(default_factory=dict)  # label -> (x list, y list)
    image_path: str = ""
    markdown_path: str | None = None


def load_rows(csv_path):
    """Read the CSV; returns (column names, list of row dicts of strings)."""
    try:
        with open(csv_path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            columns = reader.fieldnames
            rows = list(reader)
    except OSError as exc:
        raise FigureError(f"cannot read {csv_path}: {exc}") from exc
    if not columns:
        raise FigureError(f"{csv_path} has no header row")
    return list(columns), rows


def _parse_float(raw, column, csv_path):
    try:
        return float(raw)
    except (TypeError, ValueError) as exc:
        raise FigureError(
            f"{csv_path}: column {column!r} holds non-numeric value {raw!r}"
        ) from exc


def extract_series(spec: FigureSpec):
    """Group and sort the plotted data without touching matplotlib."""
    if spec.y_metric not in Y_METRICS:
        raise FigureError(
            f"unsupported metric {spec.y_metric!r}; choose from "
            f"{sorted(Y_METRICS)}")
    columns, rows = load_rows(spec.csv_path)
    for needed in (spec.x_axis, spec.y_metric, spec.series_by):
        if needed not in columns:
            raise FigureError(
                f"{spec.csv_path} has no column {needed!r}; available "
                f"columns: {columns}")
    if not rows:
        raise FigureError(
            f"{spec.csv_path} contains no data rows; nothing to select for "
            f"series column {spec.series_by!r}")

    grouped: dict[str, list] = {}
    for row in rows:
        label = row[spec.series_by]
        x = _parse_float(row[spec.x_axis], spec.x_axis, spec.csv_path)
        y = _parse_float(row[spec.y_metric], spec.y_metric, spec.csv_path)
        grouped.setdefault(label, []).append((x, y))
    series = {}
    for label in sorted(grouped):
        points = sorted(grouped[label], key=lambda p: p[0])
        series[label] = ([p[0] for p in points], [p[1] for p in points])
    return series


def render(spec: FigureSpec) -> RenderResult:
    """Render the figure (and markdown snippet, when requested).

    One line with markers per series value, log-scaled y on request; no
    file is written when validation fails.
    """
    series = extract_series(spec)

    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
    for label, (xs, ys) in series.items():
        shown = [y if math.isfinite(y) else math.nan for y in ys]
        ax.plot(xs, shown, marker="o", label=f"{spec.series_by}={label}")
    if spec.log_y:
        ax.set_yscale("log")
    ax.set_xlabel(spec.x_axis)
    ax.set_ylabel(Y_METRICS[spec.y_metric])
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(spec.output_path)
    plt.close(fig)

    if spec.markdown_path:
        _write_markdown(spec, series)
    return RenderResult(series=series, image_path=spec.output_path,
                        markdown_path=spec.markdown_path)


def _write_markdown(spec: FigureSpec, series) -> None:
    lines = [f"## {Y_METRICS[spec.y_metric]} vs {spec.x_axis}", ""]
    lines.append(f"![{spec.y_metric} vs {spec.x_axis}]({spec.output_path})")
    lines.append("")
    header = [spec.x_axis] + list(series)
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    xs = sorted({x for pts in series.values() for x in pts[0]})
    lookup = {label: dict(zip(pts[0], pts[1])) for label, pts in series.items()}
    for x in xs:
        cells = [f"{x:g}"]
        for label in series:
            y = lookup[label].get(x)
            cells.append("" if y is None else f"{y:.6g}")
        lines.append("| " + " | ".join(cells) + " |")
    with open(spec.markdown_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
