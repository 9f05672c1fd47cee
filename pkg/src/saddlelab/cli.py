"""Command line entry point: ``saddlelab <subcommand> [--config FILE] [flags]``.

Every subcommand runs one scenario and writes ``<out>/<scenario>.csv`` plus
any binary grids. Flags override config values; the thread count comes
only from ``SADDLELAB_THREADS``.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import SCENARIOS, ConfigError, ScenarioConfig, coerce, load_config, with_overrides
from .extension import SamplingError
from .partition import PreconditionError
from .scenarios import run_scenario, write_result

HELP = {
    "eval": "evaluate E f on the grid over B_R and dump it",
    "norms": "L^p norms of E f against ||f||_2^(2/q) ||f||_inf^(1-2/q)",
    "broad": "broad-part norms and A/B/C/D point counts",
    "classify": "dump the A/B/C/D label grid",
    "knapp": "Knapp-example exponents against -1 + 2/p",
    "geolemma": "fuzz the strip covering lemma over random cap families",
    "packets": "wave packet audit",
    "partition": "polynomial partitioning and tube audit",
    "scan": "growth exponent of the broad-part ratio",
}

_FLAGS = ["gamma", "R", "K", "epsilon", "alpha", "mu", "p", "q", "N", "M", "seed", "out", "n_f", "D",
          "delta", "trials", "method"]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="saddlelab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd, scen in SCENARIOS.items():
        sp = sub.add_parser(cmd, help=HELP[cmd], description=f"{HELP[cmd]} (scenario {scen})")
        sp.add_argument("--config", help="key = value config file with a schema line")
        for name in _FLAGS:
            flag = "--" + name.replace("_", "-")
            sp.add_argument(flag, dest=name, metavar=name.upper(),
                            help="comma-separated list" if name in ("gamma", "R", "K", "p", "q", "D") else None)
    return ap


def resolve_config(args) -> ScenarioConfig:
    scen = SCENARIOS[args.command]
    base = ScenarioConfig(scenario=scen)
    cfg = load_config(args.config, base) if args.config else base
    if cfg.scenario != scen:
        raise ConfigError(f"{args.config}: scenario {cfg.scenario!r} does not match subcommand {args.command!r}")
    over = {}
    for name in _FLAGS:
        raw = getattr(args, name)
        if raw is None:
            continue
        try:
            over[name] = coerce(name, raw)
        except ValueError as exc:
            raise ConfigError(f"--{name.replace('_', '-')}: {exc}") from None
    return with_overrides(cfg, **over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        res = run_scenario(cfg)
        paths = write_result(res, cfg.out, cfg.scenario)
    except (ConfigError, SamplingError, PreconditionError, ValueError) as exc:
        print(f"saddlelab: error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
