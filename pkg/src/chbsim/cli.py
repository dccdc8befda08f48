"""Command line entry point.

    chbsim validate <config>
    chbsim run <config>
    chbsim certify <suite> <config>
    chbsim ladder <axis> <config>

Exit codes: 0 pass, 1 certificate failure, 2 config error, 3 numerical abort.
CHBSIM_OUTPUT_DIR and CHBSIM_THREADS override the output directory and the
number of worker processes.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from . import config as cf
from . import runner


def _load(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config {path}: {exc}", file=sys.stderr)
        return None
    try:
        return cf.parse_config(text)
    except cf.ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return None


def _with_experiment(cfg, **changes):
    cfg = dataclasses.replace(cfg, experiment=dataclasses.replace(cfg.experiment, **changes))
    errs = cf.validate(cfg)
    if errs:
        for e in errs:
            print(f"config error: {e}", file=sys.stderr)
        return None
    return cfg


def _report(summary: runner.RunSummary) -> int:
    for name, rep in summary.suites.items():
        status = "PASS" if rep.get("pass") else "FAIL"
        print(f"{status} {name}")
    if summary.aborted:
        print(f"ABORT {summary.aborted}")
    print(json.dumps({"config_hash": summary.config_hash, "output_dir": summary.output_dir,
                      "files": len(summary.files), "timing": summary.timing,
                      "exit_code": summary.exit_code}))
    return summary.exit_code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chbsim", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="verb", required=True)
    p = sub.add_parser("validate", help="parse and validate a config")
    p.add_argument("config")
    p = sub.add_parser("run", help="run the experiment selected in the config")
    p.add_argument("config")
    p = sub.add_parser("certify", help="run one certificate suite")
    p.add_argument("suite", choices=cf.SUITES)
    p.add_argument("config")
    p = sub.add_parser("ladder", help="run a refinement ladder")
    p.add_argument("axis", choices=cf.LADDER_AXES)
    p.add_argument("config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _load(args.config)
    if cfg is None:
        return runner.EXIT_CONFIG
    if args.verb == "validate":
        print(f"valid {cf.config_hash(cfg)}")
        return runner.EXIT_PASS
    if args.verb == "certify":
        cfg = _with_experiment(cfg, kind="certify", suite=args.suite)
    elif args.verb == "ladder":
        cfg = _with_experiment(cfg, kind="ladder", axis=args.axis)
    if cfg is None:
        return runner.EXIT_CONFIG
    try:
        summary = runner.run(cfg)
    except ValueError as exc:
        # bad environment override values
        print(f"config error: {exc}", file=sys.stderr)
        return runner.EXIT_CONFIG
    return _report(summary)


if __name__ == "__main__":
    sys.exit(main())
