"""Script entry point: render one figure from experiment output files.

Usage: cdslab-plots --kind KIND --in FILE [--in FILE ...] --out IMAGE
                    [--title TEXT] [--label TEXT ...]

Prints one JSON line of figure annotations on success. Exit codes:
0 success, 1 usage or missing input, 2 input does not match its schema.
"""

import argparse
import json
import sys

from cdslab_plots.figures import KINDS, FigureSpec, SchemaError, render_figure


class _Parser(argparse.ArgumentParser):
    """Parser whose usage errors exit 1, keeping 2 for schema errors."""

    def error(self, message):
        print(f"error: {message}\n{self.format_usage()}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cdslab-plots", description=__doc__)
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--in", dest="inputs", required=True,
                        action="append", metavar="FILE",
                        help="input file; repeat to overlay trajectories")
    parser.add_argument("--out", required=True, help="image file to write")
    parser.add_argument("--title", default=None)
    parser.add_argument("--label", dest="labels", action="append",
                        default=None, help="legend label, one per input")
    return parser


def main(argv=None) -> None:
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(kind=args.kind, inputs=tuple(args.inputs),
                          out_path=args.out, title=args.title,
                          labels=tuple(args.labels) if args.labels else None)
        annotations = render_figure(spec)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(2) from exc
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(1) from exc
    print(json.dumps(annotations, sort_keys=True))


if __name__ == "__main__":
    main()
