"""Command-line entry point: ``progspace {synth,run,replicate}``.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import ProgspaceError, ValidationError

log = logging.getLogger("progspace")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="master seed (overrides seed)")
    common.add_argument("--out", help="output directory (overrides paths.out)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. --set gmm.n_init=20")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="progspace", description="Progression-space subtyping pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="write a synthetic visit cohort and its planted truth")

    run = sub.add_parser("run", parents=[common], help="fit the full pipeline on a visit CSV")
    run.add_argument("--input", help="visit CSV (overrides paths.input)")
    run.add_argument("--truth", help="planted-truth CSV; adds an ARI to the summary")
    run.add_argument("--method", choices=("nmf", "pca", "ica"), help="dimension reduction method")
    run.add_argument("--k-range", help="GMM component range, e.g. 1-6")

    rep = sub.add_parser("replicate", parents=[common], help="score a trained pipeline on an external cohort")
    rep.add_argument("--artifacts", help="output directory of a previous run")
    rep.add_argument("--external", help="external visit CSV")
    return p


def _k_range(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition("-")
    try:
        return (int(lo), int(hi)) if sep else (int(lo), int(lo))
    except ValueError:
        raise ValidationError(f"--k-range expects LO-HI, got {text!r}") from None


def build_config(args):
    cfg = load_config(args.config)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.paths.out = args.out
    for attr, key in (("input", "paths.input"), ("truth", "paths.truth"), ("method", "dimred.method"),
                      ("artifacts", "paths.artifacts"), ("external", "paths.external")):
        value = getattr(args, attr, None)
        if value:
            cfg.set(key, value)
    if getattr(args, "k_range", None):
        cfg.gmm.k_min, cfg.gmm.k_max = _k_range(args.k_range)
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        if args.command == "synth":
            counts = pipeline.cmd_synth(cfg)
            for group, n in counts.items():
                print(f"{group}\t{n}")
            print(f"wrote {cfg.paths.out}/visits.csv and {cfg.paths.out}/truth.csv")
        elif args.command == "run":
            summary = pipeline.cmd_run(cfg)
            print(json.dumps({"chosen_k": summary["chosen_k"],
                              "macro_auc": {w: v["macro_auc"] for w, v in summary["windows"].items()}}))
        else:
            report = pipeline.cmd_replicate(cfg)
            print(json.dumps({"n_patients": report["n_patients"], "macro_auc": report["macro_auc"]}))
    except ProgspaceError as exc:
        stage = getattr(exc, "stage", None)
        prefix = f"stage {stage}: " if stage else ""
        print(f"progspace: error: {prefix}{exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"progspace: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
