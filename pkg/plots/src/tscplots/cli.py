"""Command line front end: curves and eval-table subcommands."""

from __future__ import annotations

import argparse
import sys

from .plots import plot_eval_table, plot_training_curves


def main(argv=None):
    parser = argparse.ArgumentParser(prog="tscplots",
                                     description="render experiment CSVs to figures")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curves", help="training-curve lines from one or more CSVs")
    p.add_argument("csvs", nargs="+", help="training CSVs (episode,mean_cum_reward,...)")
    p.add_argument("--labels", nargs="+", default=None)
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--smooth", type=int, default=1, help="rolling-mean window")

    p = sub.add_parser("eval-table", help="grouped bar chart from an eval summary CSV")
    p.add_argument("csv")
    p.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    if args.command == "curves":
        out = plot_training_curves(args.csvs, args.labels, args.out, args.smooth)
    else:
        out = plot_eval_table(args.csv, args.out)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
