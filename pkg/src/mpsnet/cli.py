"""Command line entry point: ``mpsnet <subcommand> [--config F] [--seed S] [--out D] ...``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import MpsError
from .experiments.config import load_config
from .experiments.runs import run

SUBCOMMANDS = {
    "identity-shift": "identity_shift",
    "layer-spectra": "layer_spectra",
    "train": "train",
    "gradcheck": "gradcheck",
    "worst-case": "worst_case",
    "bounds-report": "bounds_report",
}

HELP = {
    "identity-shift": "spectra of random A against Id + A",
    "layer-spectra": "block-Jacobian spectra of chain, residual and avg-pool residual networks",
    "train": "full-batch gradient descent with PL diagnostics and the convergence certificate",
    "gradcheck": "analytic derivatives against central finite differences",
    "worst-case": "Euler iterates of the worst-case weight growth against the exact flow",
    "bounds-report": "layer bound constants, hypothesis checks and regularity probes",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mpsnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in HELP.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="overrides the config seed (and the data seed)")
        p.add_argument("--out", dest="output_dir", help="output directory")
        p.add_argument("--trials", type=int)
        p.add_argument("--bins", dest="bin_count", type=int)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in ("seed", "output_dir", "trials", "bin_count")}
    try:
        cfg = load_config(args.config, SUBCOMMANDS[args.command], overrides)
        result = run(cfg)
    except (MpsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for key, value in sorted(result.summary.items()):
        if key not in ("config", "assertions"):
            print(f"{key}: {value}")
    for name, ok in result.assertions.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"wrote {len(result.files)} files to {cfg.output_dir}")
    if result.failed:
        print(f"failed assertion: {', '.join(result.failed)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
