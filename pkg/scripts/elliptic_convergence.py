#!/usr/bin/env python3
"""Coarse-mesh convergence sweep for the rough-coefficient source problem.

Runs the multiscale method with global patches over a range of coarse
mesh sizes and both constraint families, writing one CSV per run.  With
``--quick`` the fine mesh drops to 1/32 so the whole study finishes in
well under a minute.
"""
import argparse
import pathlib
import sys

from holod import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outdir", default="results", help="directory for CSVs")
    ap.add_argument("--mode", default="dg", choices=["dg", "cg"])
    ap.add_argument("--quick", action="store_true", help="small fine mesh")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    outdir = pathlib.Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    fine = "1/32" if args.quick else "1/128"
    rc = 0
    for p, hs in ((1, "1/2,1/4,1/8,1/16"), (2, "1/2,1/4,1/8")):
        out = outdir / f"convergence_{args.mode}_p{p}.csv"
        rc |= cli.main(
            [
                "run-convergence",
                "--mode", args.mode,
                "--p", str(p),
                "--H", hs,
                "--ell", "global",
                "--fine-h", fine,
                "--coeff", "a1:m=32",
                "--source", "f1",
                "--threads", str(args.threads),
                "--out", str(out),
            ]
        )
        print(f"wrote {out}")
    return rc


if __name__ == "__main__":
    sys.exit(main())
