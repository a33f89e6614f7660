"""Command line entry: boostfigs render --kind <k> --in <csv...> --out <path>."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import KINDS, FigureSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boostfigs")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render a figure from experiment CSVs")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--in", dest="inputs", required=True, nargs="+", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--title", default="")
    p.add_argument("--style-seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(inputs=tuple(args.inputs), kind=args.kind,
                          output=args.out, title=args.title,
                          style_seed=args.style_seed)
        path = render(spec)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
