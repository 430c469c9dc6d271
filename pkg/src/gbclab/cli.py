"""Command-line entry point: ``gbclab <subcommand> --config PATH ...``."""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from importlib import resources

from .scenarios.config import ConfigError, ScenarioConfig, load_config, parse_config
from .scenarios.output import OutputError, write_outputs

SUBCOMMANDS = {
    "simulate": "simulate",
    "measure": "measurement",
    "nosignal": "nosignaling",
    "relax": "relaxation",
    "dilute": "dilute",
    "fock": "dilute",
}


def default_config_text(kind: str) -> str:
    name = {"simulate": "simulate", "measurement": "measure", "nosignaling": "nosignal",
            "relaxation": "relax", "dilute": "dilute"}[kind]
    return resources.files("gbclab.scenarios.defaults").joinpath(f"{name}.cfg").read_text()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gbclab", description="Bohmian-sourced gravitational collapse scenarios.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="scenario config file (default: the bundled one)")
    common.add_argument("--seed", type=int, metavar="U64", help="override run.seed")
    common.add_argument("--out", metavar="DIR", help="output directory (default: run.output)")
    common.add_argument("--workers", type=int, metavar="N", help="worker processes")
    common.add_argument("--snapshot-stride", type=int, metavar="K",
                        help="record every K steps")
    common.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind in SUBCOMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=f"run the {kind} scenario")
        if name == "fock":
            p.set_defaults(fock=True)
        if name == "measure":
            p.add_argument("--no-sweep", action="store_true", help="skip the amplification sweep")
    sub.add_parser("show-config", help="print a bundled default config").add_argument(
        "scenario", choices=sorted(SUBCOMMANDS))
    return parser


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    changes = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError([(0, "--seed must be an unsigned 64-bit integer")])
        changes["seed"] = args.seed
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError([(0, "--workers must be >= 1")])
        changes["workers"] = args.workers
    if args.snapshot_stride is not None:
        if args.snapshot_stride < 1:
            raise ConfigError([(0, "--snapshot-stride must be >= 1")])
        changes["snapshot_stride"] = args.snapshot_stride
    if args.out is not None:
        changes["output"] = args.out
    return replace(cfg, run=replace(cfg.run, **changes)) if changes else cfg


def run_scenario(cfg: ScenarioConfig, *, sweep: bool = True, fock_mode: bool = False):
    """Run the configured scenario and return its output bundles."""
    if cfg.kind == "measurement":
        from .scenarios.measurement import run_measurement_scenario
        return [run_measurement_scenario(cfg, sweep=sweep).bundle()]
    if cfg.kind == "nosignaling":
        from .scenarios.nosignaling import run_nosignaling_scenario
        return [run_nosignaling_scenario(cfg).bundle()]
    if cfg.kind == "relaxation":
        from .scenarios.relaxation import run_relaxation_scenario
        return [run_relaxation_scenario(cfg).bundle()]
    if cfg.kind == "dilute":
        from .scenarios.dilute import run_dilute_scenario
        bundle = run_dilute_scenario(cfg).bundle("fock" if fock_mode else "dilute")
        if fock_mode:
            _add_oracle_check(cfg, bundle)
        return [bundle]
    from .scenarios.simulate import run_simulation
    return [run_simulation(cfg).bundle()]


def _add_oracle_check(cfg: ScenarioConfig, bundle):
    """Compare the mode-sum correlation with explicit ladder algebra when small."""
    from . import fock
    from .grid import make_grid
    from .scenarios.dilute import mode_set
    if cfg.state.kind != "modes":
        bundle.warnings.append("fock subcommand expects state.kind = modes")
        return
    ms = mode_set(cfg)
    if ms.mode_count > fock.ORACLE_MAX_MODES or ms.particle_count > fock.ORACLE_MAX_PARTICLES:
        bundle.results["oracle_max_difference"] = None
        return
    g = make_grid(cfg.grid.d, 1, cfg.grid.points, cfg.grid.extent).physical()
    a, b = fock.fock_correlation(ms, g), fock.fock_correlation_oracle(ms, g)
    bundle.results["oracle_max_difference"] = float(abs(a.values - b.values).max())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "show-config":
        print(default_config_text(SUBCOMMANDS[args.scenario]), end="")
        return 0
    kind = SUBCOMMANDS[args.command]
    started = time.time()
    try:
        cfg = load_config(args.config) if args.config else parse_config(
            default_config_text(kind))
        if cfg.kind != kind:
            raise ConfigError([(0, f"config is for run.kind = {cfg.kind}, "
                                   f"but '{args.command}' runs {kind}")])
        cfg = _apply_overrides(cfg, args)
    except ConfigError as exc:
        print(f"gbclab: invalid configuration\n{exc}", file=sys.stderr)
        return 2
    try:
        bundles = run_scenario(cfg, sweep=not getattr(args, "no_sweep", False),
                               fock_mode=getattr(args, "fock", False))
    except (ValueError, FloatingPointError) as exc:
        print(f"gbclab: run failed: {exc}", file=sys.stderr)
        return 1
    try:
        written = write_outputs(bundles, cfg.run.output, config=cfg.echo(), seed=cfg.run.seed,
                                figures=not args.no_figures, started=started)
    except OutputError as exc:
        print(f"gbclab: {exc}", file=sys.stderr)
        return 1
    for b in bundles:
        for w in b.warnings:
            print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {len(written)} files to {cfg.run.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
