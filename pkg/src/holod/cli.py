"""Command-line front end.

Subcommands: run-convergence, run-decay, run-helmholtz, run-gpe,
export-coefficient.  Every flag can instead come from a config file
(``--config``) holding one ``key = value`` per line with ``#`` comments;
explicit flags win over the file, the file wins over built-in defaults.
Exit codes: 0 success, 1 at least one failed experiment cell (partial CSV
still written), 2 usage or configuration errors.
"""
from __future__ import annotations

import argparse
import sys
from fractions import Fraction

from . import harness
from .problems import save_grid

_SWEEP_COMMANDS = ("run-convergence", "run-decay", "run-helmholtz", "run-gpe")

_DEFAULTS = {
    "run-convergence": {
        "mode": "dg", "p": 1, "H": "1/2,1/4,1/8,1/16", "ell": "global",
        "fine_h": "1/128", "fine_q": 1, "coeff": "a1:m=32", "vcoeff": "const:value=1",
        "source": "f1", "seed": 0, "kappa": 16.0, "sigma": 1.0, "kappa_g": 100.0,
        "out": None, "threads": 1, "drop_tol": None,
    },
    "run-decay": {
        "mode": "dg", "p": 1, "H": "1/16", "ell": "1,2,3,4",
        "fine_h": "1/128", "fine_q": 1, "coeff": "a1:m=32", "vcoeff": "const:value=1",
        "source": "f2", "seed": 0, "kappa": 16.0, "sigma": 1.0, "kappa_g": 100.0,
        "out": None, "threads": 1, "drop_tol": None,
    },
    "run-helmholtz": {
        "mode": "dg", "p": 2, "H": "1/16", "ell": "3",
        "fine_h": "1/128", "fine_q": 1, "coeff": "const:value=1",
        "vcoeff": "const:value=1", "source": "f3", "seed": 0,
        "kappa": 16.0, "sigma": 1.0, "kappa_g": 100.0,
        "out": None, "threads": 1, "drop_tol": None,
    },
    "run-gpe": {
        "mode": "dg", "p": 2, "H": "3/2,3/4,3/8", "ell": "4",
        "fine_h": "1/16", "fine_q": 1, "coeff": "trap:m=48",
        "vcoeff": "const:value=1", "source": "f1", "seed": 0,
        "kappa": 16.0, "sigma": 1.0, "kappa_g": 100.0,
        "out": None, "threads": 1, "drop_tol": None,
    },
}

_PROBLEM = {
    "run-convergence": "elliptic",
    "run-decay": "elliptic",
    "run-helmholtz": "helmholtz",
    "run-gpe": "gpe",
}

_RUNNERS = {
    "run-convergence": (harness.run_convergence, harness.ELLIPTIC_COLUMNS),
    "run-decay": (harness.run_decay, harness.ELLIPTIC_COLUMNS),
    "run-helmholtz": (harness.run_helmholtz, harness.HELMHOLTZ_COLUMNS),
    "run-gpe": (harness.run_gpe, harness.GPE_COLUMNS),
}

_CONVERT = {
    "mode": str, "p": int, "H": str, "ell": str, "fine_h": str, "fine_q": int,
    "coeff": str, "vcoeff": str, "source": str, "seed": int, "kappa": float,
    "sigma": float, "kappa_g": float, "out": str, "threads": int,
    "drop_tol": float, "config": str,
}


def _fraction_list(text: str) -> list[Fraction]:
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    if not items:
        raise ValueError("empty mesh-size list")
    return [Fraction(t) for t in items]


def _ell_list(text: str) -> list:
    out = []
    for t in str(text).split(","):
        t = t.strip()
        if not t:
            continue
        if t == "global":
            out.append("global")
            continue
        val = int(t)
        if val < 0:
            raise ValueError(f"patch radius must be non-negative, got {val}")
        out.append(val)
    if not out:
        raise ValueError("empty patch-radius list")
    return out


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None, help="key = value file with the same names")
    sub.add_argument("--mode", choices=("cg", "dg"), default=None)
    sub.add_argument("--p", type=int, default=None)
    sub.add_argument("--H", default=None, help="comma list of rationals, e.g. 1/2,1/4")
    sub.add_argument("--ell", default=None, help="comma list of ints and/or 'global'")
    sub.add_argument("--fine-h", dest="fine_h", default=None, help="fine mesh size, rational")
    sub.add_argument("--fine-q", dest="fine_q", type=int, default=None)
    sub.add_argument("--coeff", default=None, help="e.g. a1:m=32,seed=7 | const:value=1 | trap:m=96 | file:path=...")
    sub.add_argument("--source", default=None, help="f1 | f2 | f3")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--out", default=None, help="CSV path, '-' for stdout")
    sub.add_argument("--threads", type=int, default=None)
    sub.add_argument("--drop-tol", dest="drop_tol", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="holod",
        description="Higher-order localized multiscale experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run-convergence", "run-decay"):
        s = sub.add_parser(name)
        _add_common(s)
    s = sub.add_parser("run-helmholtz")
    _add_common(s)
    s.add_argument("--kappa", type=float, default=None)
    s.add_argument("--sigma", type=float, default=None)
    s.add_argument("--vcoeff", default=None, help="squared refraction index spec")
    s = sub.add_parser("run-gpe")
    _add_common(s)
    s.add_argument("--kappa-g", dest="kappa_g", type=float, default=None)
    s = sub.add_parser("export-coefficient")
    s.add_argument("--config", default=None)
    s.add_argument("--coeff", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None, required=False)
    return parser


def _read_config(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {raw!r}")
            key = key.strip().replace("-", "_")
            if key not in _CONVERT:
                raise ValueError(f"{path}:{lineno}: unknown option {key!r}")
            out[key] = _CONVERT[key](val.strip())
    return out


def _effective(args: argparse.Namespace, defaults: dict) -> dict:
    layered = dict(defaults)
    if getattr(args, "config", None):
        layered.update(_read_config(args.config))
    for key in defaults:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            layered[key] = cli_val
    return layered


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command

    try:
        if command == "export-coefficient":
            opts = _effective(args, {"coeff": "a1:m=32", "seed": 0, "out": None})
            if not opts["out"]:
                raise ValueError("export-coefficient needs --out")
            field, _ = harness.build_coefficient(opts["coeff"], opts["seed"])
            save_grid(opts["out"], field)
            return 0

        opts = _effective(args, _DEFAULTS[command])
        cfg = harness.ExperimentConfig(
            problem=_PROBLEM[command],
            mode=opts["mode"],
            p=opts["p"],
            hs=_fraction_list(opts["H"]),
            ells=_ell_list(opts["ell"]),
            fine_h=Fraction(opts["fine_h"]),
            fine_q=opts["fine_q"],
            coeff=opts["coeff"],
            vcoeff=opts["vcoeff"],
            source=opts["source"],
            seed=opts["seed"],
            kappa=opts["kappa"],
            sigma=opts["sigma"],
            kappa_g=opts["kappa_g"],
            out=opts["out"],
            threads=opts["threads"],
            drop_tol=opts["drop_tol"],
        )
    except (ValueError, OSError) as err:
        print(f"holod: {err}", file=sys.stderr)
        return 2

    runner, columns = _RUNNERS[command]
    try:
        records, comments = runner(cfg)
    except (ValueError, OSError) as err:
        print(f"holod: {err}", file=sys.stderr)
        return 2
    harness.write_csv(cfg.out, columns, records, comments)
    failures = sum(1 for r in records if r.error is not None)
    if failures:
        print(f"holod: {failures} cell(s) failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
