"""Command-line front end: `plot rates|bias-variance --in CSV --out PNG/SVG`."""

from __future__ import annotations

import argparse
import sys

from .figures import plot_bias_variance, plot_rates
from .frames import NoDataError, SchemaError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plot", description="Render figures from experiment CSV tables."
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    rates = sub.add_parser("rates", help="log-log rate curves with reference slopes")
    rates.add_argument("--in", dest="infile", required=True, metavar="CSV")
    rates.add_argument("--out", required=True, metavar="IMAGE", help="png or svg path")
    blocks = sub.add_parser("bias-variance", help="per-block bias/variance decomposition")
    blocks.add_argument("--in", dest="infile", required=True, metavar="CSV")
    blocks.add_argument("--out", required=True, metavar="IMAGE", help="png or svg path")
    blocks.add_argument("--rho", type=float, default=0.5, metavar="R",
                        help="window fraction marking the burn-in cutoff (default 0.5)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.kind == "rates":
            plot_rates(args.infile, args.out)
        else:
            plot_bias_variance(args.infile, args.rho, args.out)
    except (SchemaError, NoDataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
