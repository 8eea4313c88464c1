"""Command-line entry point: ``chainedbell <subcommand> [--config FILE | flags]``.

Exit codes: 0 on success, 2 when some sweep points failed, 1 on a config error.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

from . import __version__
from .experiments import CACHE_ENV, EXPERIMENTS, ExperimentConfig, InvalidConfig, run_experiment


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidConfig(message)


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _settings(text: str) -> List[List[int]]:
    # "1,1;1,2" -> [[1, 1], [1, 2]]
    return [_ints(part) for part in text.split(";") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chainedbell", description=(
        "Chained Bell bounds for two-qubit states and device-independent randomness. "
        f"Set {CACHE_ENV} to move the result cache."))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="experiment", required=True, parser_class=_Parser)
    helps = {"bound": "singular-value bound for a state",
             "tightness": "check whether the bound is attained and print saturating settings",
             "gram": "solve the Gram-matrix program",
             "witness": "Werner visibility above which the chained value witnesses entanglement",
             "fig1": "swarm maximum vs the bound on the X-state family",
             "fig2": "certified randomness vs visibility for n settings",
             "fig3": "CHSH, chained and J_gamma randomness curves"}
    for name in EXPERIMENTS:
        s = sub.add_parser(name, help=helps[name])
        s.add_argument("--config", help="JSON config file; flags given here override it")
        s.add_argument("--seed", type=int)
        s.add_argument("--level", help="NPA level: q1, 1+ab or q2")
        s.add_argument("--out-dir", dest="out_dir")
        s.add_argument("--n", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--no-cache", dest="use_cache", action="store_false", default=None)
        if name in ("bound", "tightness"):
            s.add_argument("--state", help="singlet, mixed, werner:<p> or xstate:<nu>,<l>")
            s.add_argument("--rel-tol", dest="rel_tol", type=float)
        if name == "fig1":
            s.add_argument("--nu-grid", dest="nu_grid", type=_floats)
        if name in ("fig2", "fig3"):
            s.add_argument("--p-grid", dest="p_grid", type=_floats)
            s.add_argument("--mode", dest="modes", action="append",
                           choices=["violation", "full"])
            s.add_argument("--settings", type=_settings,
                           help='1-based pairs, e.g. "1,1;1,2"')
            s.add_argument("--inequality", action="store_true", default=None,
                           help="constrain the Bell value from below instead of fixing it")
        if name == "fig3":
            s.add_argument("--gamma-grid", dest="gamma_grid", type=_floats)
            s.add_argument("--chained-ns", dest="chained_ns", type=_ints)
            s.add_argument("--no-onsets", dest="onsets", action="store_false", default=None)
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidConfig("config must be a JSON object")
        given = data.get("experiment")
        if given is not None and ExperimentConfig(given).resolved().experiment != args.experiment:
            raise InvalidConfig(f"config is for {given!r}, not {args.experiment!r}")
    data["experiment"] = args.experiment
    for key, value in vars(args).items():
        if key in ("config", "experiment", "level") or value is None:
            continue
        data[key] = value
    if args.level is not None:
        data["levels"] = [args.level]
    return ExperimentConfig.from_dict(data)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = config_from_args(args)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    report = run_experiment(cfg)
    if cfg.experiment not in ("fig1", "fig2", "fig3"):
        for row in report.tables[cfg.experiment]:
            for k, v in row.items():
                print(f"{k}: {v}")
    note = " (cached)" if report.cached else ""
    print(f"config {report.config_hash}{note}; wrote {', '.join(str(p) for p in report.paths)}")
    if report.failures:
        print(f"{report.failures} sweep point(s) failed", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
