"""Command-line wrapper: figures --csv <path> --x <axis> --y <metric>
--series <col> [--logy] --out <image> [--md <report>]."""

from __future__ import annotations

import argparse
import sys

from .render import FigureError, FigureSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figures",
        description="Plot one metric from a benchmark sweep CSV")
    parser.add_argument("--csv", required=True, help="input CSV path")
    parser.add_argument("--x", required=True, dest="x_axis",
                        help="column for the x axis (e.g. snr_db, l_p, m)")
    parser.add_argument("--y", required=True, dest="y_metric",
                        choices=["aer", "ce_mse_db"], help="metric column")
    parser.add_argument("--series", required=True, dest="series_by",
                        help="column that distinguishes the lines")
    parser.add_argument("--logy", action="store_true", help="log-scale y axis")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--md", default=None,
                        help="also write a markdown snippet here")
    parser.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(csv_path=args.csv, x_axis=args.x_axis,
                      y_metric=args.y_metric, series_by=args.series_by,
                      log_y=args.logy, output_path=args.out,
                      markdown_path=args.md)
    try:
        result = render(spec)
    except FigureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        labels = ", ".join(result.series)
        print(f"wrote {result.image_path} ({len(result.series)} series: {labels})")
        if result.markdown_path:
            print(f"wrote {result.markdown_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
