"""Experiment runner.

Validates an ExperimentConfig, dispatches it to its command and writes the
artifact (JSON or CSV) next to a manifest that is enough to replay the run.
"""

import csv
import hashlib
import json
import os
import time
from itertools import zip_longest
from typing import Any

import numpy as np
import pydantic
import scipy
from loguru import logger
from pydantic import ValidationError

from fibospec.commands import COMMANDS, Artifact, RunContext
from fibospec.config import Settings
from fibospec.errors import ConfigInvalid, FibospecError, IoError, ModuleError
from fibospec.models import ExperimentConfig, OutputFormat, RunManifest
from fibospec.parallel import ParallelMap

# No typing imports needed here due to Python 3.10+ syntax


def canonical_json(data: Any) -> str:
    """Compact JSON with sorted keys."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=True)


def manifest_hash(config: ExperimentConfig) -> str:
    """sha256 of the canonical config echo."""
    echo = config.model_dump(mode="json", exclude={"output"})
    return hashlib.sha256(canonical_json(echo).encode("utf-8")).hexdigest()


def artifact_name(config: ExperimentConfig) -> str:
    """Base file name of a run: the output stem, or the command name."""
    if config.output:
        return os.path.splitext(os.path.basename(config.output))[0]
    return config.command.replace(".", "-")


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def versions() -> dict[str, str]:
    from fibospec import __version__

    return {
        "fibospec": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pydantic": pydantic.VERSION,
    }


class ExperimentRunner:
    """Runs experiments and keeps their artifacts on disk."""

    def __init__(self, settings: Settings, output_dir: str | None = None):
        """Initialize the runner.

        Args:
            settings: Loaded settings
            output_dir: Directory for artifacts (defaults to settings.output_dir)
        """
        self.settings = settings
        self.output_dir = output_dir or settings.output_dir
        self.pmap = ParallelMap(settings.workers)

    def validate(self, config: ExperimentConfig) -> Any:
        """Parameter model of the config's command.

        Raises:
            ConfigInvalid: If the command is unknown or a parameter is invalid
        """
        entry = COMMANDS.get(config.command)
        if entry is None:
            known = ", ".join(sorted(COMMANDS))
            raise ConfigInvalid(f"Unknown command {config.command!r}; known: {known}")
        try:
            return entry.params.model_validate(config.params)
        except ValidationError as e:
            raise ConfigInvalid(f"Invalid parameters for {config.command}: {e}") from e

    def compute(self, config: ExperimentConfig) -> Artifact:
        """Run the command without writing anything.

        Raises:
            ConfigInvalid: If validation or a module precondition fails
            ModuleError: If the numerical operation fails
        """
        params = self.validate(config)
        ctx = RunContext(self.settings, config.seed, self.pmap)
        try:
            return COMMANDS[config.command].run(params, ctx)
        except FibospecError:
            raise
        except ValueError as e:
            raise ConfigInvalid(f"{config.command}: {e}") from e

    def run(self, config: ExperimentConfig) -> RunManifest:
        """Run an experiment and write its artifact and manifest.

        Raises:
            ConfigInvalid: If the configuration is rejected
            ModuleError: If the numerical operation fails
            IoError: If the artifact cannot be written
        """
        digest = manifest_hash(config)
        logger.info(f"Running {config.command} (seed {config.seed}, {digest[:12]})")
        start = time.perf_counter()
        manifest = RunManifest(
            config=config, manifest_hash=digest, wall_time=0.0, versions=versions()
        )
        try:
            artifact = self.compute(config)
        except ModuleError as e:
            manifest.wall_time = time.perf_counter() - start
            manifest.success = False
            manifest.error_message = str(e)
            self._save_manifest(config, manifest)
            raise
        manifest.wall_time = time.perf_counter() - start
        manifest.checks = {name: bool(ok) for name, ok in artifact.checks.items()}
        manifest.artifact = self._save_artifact(config, artifact, digest)
        self._save_manifest(config, manifest)
        failed = [name for name, ok in artifact.checks.items() if not ok]
        if failed:
            logger.warning(f"{config.command}: checks failed: {', '.join(failed)}")
        logger.info(f"Finished {config.command} in {manifest.wall_time:.2f}s")
        return manifest

    def replay(self, manifest_path: str) -> RunManifest:
        """Re-run the configuration stored in a manifest."""
        stored = self.load_manifest(manifest_path)
        logger.info(f"Replaying {stored.config.command} from {manifest_path}")
        return self.run(stored.config)

    def _path(self, config: ExperimentConfig, suffix: str) -> str:
        if config.output and os.path.dirname(config.output):
            directory = os.path.dirname(config.output)
        else:
            directory = self.output_dir
        return os.path.join(directory, artifact_name(config) + suffix)

    def _write(self, path: str, writer: Any) -> None:
        try:
            directory = os.path.dirname(path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer(f)
        except OSError as e:
            logger.error(f"Error writing {path}: {e}")
            raise IoError(f"Cannot write {path}: {e}") from e

    def _save_artifact(
        self, config: ExperimentConfig, artifact: Artifact, digest: str
    ) -> str:
        """Write the artifact with its manifest hash embedded."""
        if config.output_format == OutputFormat.CSV:
            path = self._path(config, ".csv")
            self._write(path, lambda f: write_csv(f, artifact, digest))
        else:
            path = self._path(config, ".json")
            record = {**_plain(artifact.record), "manifest_hash": digest}

            def dump(f: Any) -> None:
                json.dump(record, f, sort_keys=True, indent=2)
                f.write("\n")

            self._write(path, dump)
        logger.info(f"Wrote {path}")
        return path

    def _save_manifest(self, config: ExperimentConfig, manifest: RunManifest) -> None:
        if not self.settings.write_manifest:
            return
        path = self._path(config, ".manifest.json")
        data = manifest.model_dump(mode="json")
        self._write(path, lambda f: json.dump(data, f, sort_keys=True, indent=2))
        logger.debug(f"Saved manifest to {path}")

    @staticmethod
    def load_manifest(path: str) -> RunManifest:
        """Read a stored manifest.

        Raises:
            IoError: If the file is missing or unreadable
            ConfigInvalid: If it does not hold a valid manifest
        """
        if not os.path.exists(path):
            raise IoError(f"Manifest not found: {path}")
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Error loading manifest {path}: {e}")
            raise IoError(f"Cannot read {path}: {e}") from e
        try:
            return RunManifest.model_validate(data)
        except ValidationError as e:
            raise ConfigInvalid(f"Invalid manifest {path}: {e}") from e


def write_csv(f: Any, artifact: Artifact, digest: str) -> None:
    """RFC 4180 table, one column per array, manifest hash in the last column.

    Artifacts without a table get one row of their scalar record fields.
    """
    table = artifact.table or {
        k: [v]
        for k, v in artifact.record.items()
        if isinstance(v, (int, float, str, bool)) or v is None
    }
    columns = list(table)
    writer = csv.writer(f, lineterminator="\r\n")
    writer.writerow([*columns, "manifest_hash"])
    rows = zip_longest(*(_plain(table[c]) for c in columns), fillvalue="")
    for index, row in enumerate(rows):
        cells = [repr(v) if isinstance(v, float) else v for v in row]
        writer.writerow([*cells, digest if index == 0 else ""])
