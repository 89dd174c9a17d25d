#!/usr/bin/env python3
"""
revoke-bd - Entry Point
Run with: python -m revoke_bd <command> --config PATH [--set section.key=value ...]
"""

import argparse
import json
import signal
import sys
from pathlib import Path
from typing import List, Optional

from . import __app_name__, __version__
from .config import PRESETS, ExperimentConfig
from .errors import ConfigError, RevokeBDError
from .evaluation.protocol import SWEEP_PARAMETERS
from .logger import Logger

STAGE_COMMANDS = ('pretrain', 'train-generator', 'attack', 'revoke', 'evaluate', 'defend',
                  'sweep', 'ablate', 'plot', 'status')

TOP_LEVEL_KEYS = ('seed', 'output_dir', 'device', 'precision')


def parse_overrides(items: Optional[List[str]]) -> dict:
    """`--set section.key=value` pairs as a partial config dict; values are read as JSON when possible."""
    data: dict = {}
    for item in items or []:
        key, sep, raw = item.partition('=')
        if not sep or not key:
            raise ConfigError(f"Override '{item}' is not of the form KEY=VALUE")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        section, dot, field = key.partition('.')
        if dot:
            if section not in ExperimentConfig.SECTIONS:
                raise ConfigError(f"Unknown config section '{section}'",
                                  {'allowed': sorted(ExperimentConfig.SECTIONS)})
            data.setdefault(section, {})[field] = value
        elif key in TOP_LEVEL_KEYS:
            data[key] = value
        else:
            raise ConfigError(f"Unknown config key '{key}'", {'allowed': list(TOP_LEVEL_KEYS)})
    return data


def signal_handler(signum, frame):
    print("\n🛑 Interrupted, stopping revoke-bd...")
    sys.exit(130)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="revoke-bd",
        description=f"{__app_name__} - revocable backdoors via unlearning-aware triggers"
    )
    parser.add_argument("--version", "-v", action="version",
                        version=f"{__app_name__} v{__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    init = sub.add_parser("init", help="Write a full default configuration file")
    init.add_argument("--config", "-c", type=str, required=True, help="Path to write")
    init.add_argument("--preset", choices=sorted(PRESETS), default="desk",
                      help="Scale preset (default: desk)")
    init.add_argument("--seed", type=int, default=None, help="Override the seed")
    init.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                      help="Override a config value, e.g. trigger.eta=0.1 (repeatable)")
    init.add_argument("--debug", action="store_true", help="Enable debug logging")

    for name in STAGE_COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", "-c", type=str, required=True,
                         help="Path to configuration file")
        cmd.add_argument("--seed", type=int, default=None, help="Override the seed")
        cmd.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="Override a config value, e.g. trigger.eta=0.1 (repeatable)")
        cmd.add_argument("--debug", action="store_true", help="Enable debug logging")
        if name not in ('plot', 'status'):
            cmd.add_argument("--force", action="store_true",
                             help="Rerun even if the stage is complete for this config")
        if name == 'evaluate':
            cmd.add_argument("--grid", action="store_true",
                             help="Also run the simulation x revocation method grid")
        if name == 'sweep':
            cmd.add_argument("--parameter", choices=SWEEP_PARAMETERS, required=True)
            cmd.add_argument("--values", type=float, nargs="+", required=True)
    return parser


def load_config(args) -> ExperimentConfig:
    if not Path(args.config).exists():
        raise ConfigError(f"Config file {args.config} not found; "
                          f"create it with `revoke-bd init --config {args.config}`")
    config = ExperimentConfig(args.config)
    config.update(parse_overrides(args.set))
    if args.seed is not None:
        config.seed = args.seed
    return config


def run_command(args) -> dict:
    """Dispatch one parsed command; returns the command's summary."""
    if args.command == 'init':
        config = ExperimentConfig.from_preset(args.preset)
        config.update(parse_overrides(args.set))
        if args.seed is not None:
            config.seed = args.seed
        config.validate()
        config.save(args.config)
        return {'config': args.config, 'preset': args.preset, 'config_hash': config.config_hash()}

    from .core import ExperimentCore

    core = ExperimentCore(load_config(args), Logger())
    force = getattr(args, 'force', False)
    if args.command == 'pretrain':
        return core.cmd_pretrain(force=force)
    if args.command == 'train-generator':
        return core.cmd_train_generator(force=force)
    if args.command == 'attack':
        return core.cmd_attack(force=force)
    if args.command == 'revoke':
        return core.cmd_revoke(force=force)
    if args.command == 'evaluate':
        return core.cmd_evaluate(grid=args.grid, force=force)
    if args.command == 'defend':
        return core.cmd_defend(force=force)
    if args.command == 'sweep':
        return core.cmd_sweep(args.parameter, args.values, force=force)
    if args.command == 'ablate':
        return core.cmd_ablate(force=force)
    if args.command == 'plot':
        return core.cmd_plot()
    return core.status()


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    # Signal handlers
    signal.signal(signal.SIGINT, signal_handler)
    signal.signal(signal.SIGTERM, signal_handler)

    logger = Logger(debug=args.debug)
    log = logger.get_logger("main")
    log.info("=" * 60)
    log.info(f"🔬 {__app_name__} v{__version__}: {args.command}")
    log.info("=" * 60)

    try:
        result = run_command(args)
    except RevokeBDError as e:
        log.error(f"❌ {type(e).__name__}: {e.message}")
        if e.details:
            log.debug(json.dumps(e.to_dict(), indent=2, default=str))
        return 1

    log.info(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
