"""Command-line surface.

Subcommands mirror the command registry: ``fibospec trace-map cocycle --v 0.01``
runs the ``trace-map.cocycle`` command. Flags override values from an optional
JSON config file, and environment settings fill in the rest.
"""

import argparse
import json
import os
from dataclasses import replace
from typing import Any

from loguru import logger
from pydantic import ValidationError

from fibospec.commands import COMMANDS
from fibospec.config import Settings, load_config
from fibospec.errors import ConfigInvalid, IoError
from fibospec.models import ExperimentConfig, RunManifest, VerifyReport
from fibospec.runner import ExperimentRunner
from fibospec.verify import CRITERIA, SCALES, verify

# No typing imports needed here due to Python 3.10+ syntax


def _common_options(parser: argparse.ArgumentParser) -> None:
    """Options accepted both before and after the subcommand."""
    sup = argparse.SUPPRESS
    parser.add_argument("--config", "-c", default=sup, help="JSON experiment config")
    parser.add_argument("--env", default=sup, help="Path to .env file")
    parser.add_argument("--workers", "-w", type=int, default=sup, help="Worker count")
    parser.add_argument("--seed", type=int, default=sup, help="Run seed")
    parser.add_argument(
        "--format", dest="output_format", choices=["json", "csv"], default=sup
    )
    parser.add_argument("--output", "-o", default=sup, help="Artifact path")
    parser.add_argument("--output-dir", default=sup, help="Artifact directory")
    parser.add_argument(
        "--replay", default=sup, help="Re-run the config of a stored manifest"
    )
    parser.add_argument(
        "--debug", "-d", action="store_true", default=sup, help="Enable debug logging"
    )


def _add_param_flags(parser: argparse.ArgumentParser, name: str) -> None:
    for field_name, info in COMMANDS[name].params.model_fields.items():
        parser.add_argument(
            f"--{field_name.replace('_', '-')}",
            dest=f"param_{field_name}",
            default=argparse.SUPPRESS,
            metavar=field_name.upper(),
            help=info.description or "",
        )


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand group per module."""
    common = argparse.ArgumentParser(add_help=False)
    _common_options(common)
    parser = argparse.ArgumentParser(
        prog="fibospec",
        description="Numerical experiments on the Fibonacci Hamiltonian",
        parents=[common],
    )
    groups = parser.add_subparsers(dest="group", metavar="GROUP")

    actions: dict[str, Any] = {}
    for name in COMMANDS:
        group, action = name.split(".", 1)
        if group not in actions:
            sub = groups.add_parser(group, help=f"{group} experiments")
            actions[group] = sub.add_subparsers(
                dest="action", metavar="ACTION", required=True
            )
        leaf = actions[group].add_parser(
            action, help=COMMANDS[name].help, parents=[common]
        )
        _add_param_flags(leaf, name)

    check = groups.add_parser(
        "verify", help="Run an acceptance suite", parents=[common]
    )
    check.add_argument("--suite", choices=sorted(SCALES), default="fast")
    check.add_argument(
        "--only", default=None, help=f"Comma-separated subset of {', '.join(CRITERIA)}"
    )
    return parser


def settings_from_args(ns: argparse.Namespace) -> Settings:
    """Environment settings with command-line overrides.

    Raises:
        ConfigInvalid: If an environment variable or flag is malformed
    """
    try:
        settings = load_config(getattr(ns, "env", None))
    except ValueError as e:
        raise ConfigInvalid(str(e)) from e
    overrides: dict[str, Any] = {}
    if getattr(ns, "workers", None) is not None:
        if ns.workers < 1:
            raise ConfigInvalid("--workers must be at least 1")
        overrides["workers"] = ns.workers
    if getattr(ns, "seed", None) is not None:
        overrides["seed"] = ns.seed
    if getattr(ns, "output_dir", None):
        overrides["output_dir"] = ns.output_dir
    if getattr(ns, "output_format", None):
        overrides["output_format"] = ns.output_format
    if getattr(ns, "debug", False):
        overrides["log_level"] = "DEBUG"
    return replace(settings, **overrides)


def _read_config_file(path: str) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise IoError(f"Cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"Config {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigInvalid(f"Config {path} must hold a JSON object")
    return data


def config_from_args(ns: argparse.Namespace, settings: Settings) -> ExperimentConfig:
    """Merge the config file, the subcommand and its flags into one config.

    Raises:
        ConfigInvalid: If no command is given or the result does not validate
    """
    data: dict[str, Any] = {}
    if getattr(ns, "config", None):
        data = _read_config_file(ns.config)
    if getattr(ns, "group", None):
        data["command"] = f"{ns.group}.{ns.action}"
    if "command" not in data:
        raise ConfigInvalid("No command given; pass a subcommand or --config")

    params = dict(data.get("params") or {})
    for key, value in vars(ns).items():
        if key.startswith("param_"):
            params[key[len("param_") :]] = value
    data["params"] = params
    data.setdefault("seed", settings.seed)
    if getattr(ns, "seed", None) is not None:
        data["seed"] = ns.seed
    data.setdefault("output_format", settings.output_format)
    if getattr(ns, "output_format", None):
        data["output_format"] = ns.output_format
    if getattr(ns, "output", None):
        data["output"] = ns.output
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigInvalid(f"Invalid experiment config: {e}") from e


def run_verify(ns: argparse.Namespace, settings: Settings) -> VerifyReport:
    """Run a suite and write its report as JSON."""
    only = [name.strip() for name in ns.only.split(",")] if ns.only else None
    try:
        report = verify(ns.suite, settings, only)
    except ValueError as e:
        raise ConfigInvalid(str(e)) from e
    path = getattr(ns, "output", None) or os.path.join(
        settings.output_dir, f"verify-{ns.suite}.json"
    )
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(report.model_dump(mode="json"), f, sort_keys=True, indent=2)
    except OSError as e:
        logger.error(f"Error writing report {path}: {e}")
        raise IoError(f"Cannot write {path}: {e}") from e
    logger.info(f"Verify report written to {path}")
    return report


def execute(ns: argparse.Namespace, settings: Settings) -> int:
    """Run what the parsed arguments ask for and return the exit code."""
    if getattr(ns, "group", None) == "verify":
        report = run_verify(ns, settings)
        if not report.passed:
            logger.error(f"Failed criteria: {', '.join(report.failed)}")
            return 1
        logger.info(f"All {len(report.criteria)} criteria passed")
        return 0

    runner = ExperimentRunner(settings)
    manifest: RunManifest
    if getattr(ns, "replay", None):
        manifest = runner.replay(ns.replay)
    else:
        manifest = runner.run(config_from_args(ns, settings))
    logger.info(f"Artifact: {manifest.artifact}")
    return 0
