"""Command line entry: `plots <figure-kind> --in <csv> --out <img>`."""

import argparse
import sys

from .figures import FIGURE_KINDS, EmptyDataError, FigureSpec, SchemaError, plot


def build_parser():
    parser = argparse.ArgumentParser(
        prog="plots",
        description="Regenerate experiment figures from risq CSV outputs")
    parser.add_argument("kind", choices=FIGURE_KINDS)
    parser.add_argument("--in", dest="csv_path", required=True,
                        help="input CSV path")
    parser.add_argument("--out", dest="output_path", required=True,
                        help="output image path (.png or .svg)")
    parser.add_argument("--title", default="")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    spec = FigureSpec(csv_path=args.csv_path, kind=args.kind,
                      output_path=args.output_path, title=args.title)
    try:
        result = plot(spec)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except EmptyDataError as exc:
        print(f"empty data: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 4
    print(f"wrote {result.output_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
