"""Tests for the experiment runner."""

import csv
import json
import os
from dataclasses import replace
from unittest.mock import patch

import numpy as np
import pytest

from fibospec.commands import Artifact
from fibospec.errors import ConfigInvalid, IoError, NoRootInBracket
from fibospec.models import ExperimentConfig, OutputFormat, RunManifest
from fibospec.runner import (
    ExperimentRunner,
    artifact_name,
    canonical_json,
    manifest_hash,
)


@pytest.fixture
def runner(sample_settings):
    """Runner writing into a temporary directory."""
    return ExperimentRunner(sample_settings)


@pytest.fixture
def cocycle_config():
    """Small trace-map cocycle run."""
    return ExperimentConfig(command="trace-map.cocycle", params={"v": 0.01}, seed=3)


class TestManifestHash:
    """Test config hashing."""

    def test_canonical_json(self):
        """Keys are sorted and separators compact."""
        assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'

    def test_hash_ignores_output(self, cocycle_config):
        """The output path is not part of the experiment."""
        moved = cocycle_config.model_copy(update={"output": "elsewhere/run.json"})
        assert manifest_hash(moved) == manifest_hash(cocycle_config)

    def test_hash_depends_on_params_and_seed(self, cocycle_config):
        """Any change of params or seed changes the hash."""
        digest = manifest_hash(cocycle_config)
        assert len(digest) == 64
        other_v = cocycle_config.model_copy(update={"params": {"v": 0.02}})
        other_seed = cocycle_config.model_copy(update={"seed": 4})
        assert manifest_hash(other_v) != digest
        assert manifest_hash(other_seed) != digest

    def test_artifact_name(self, cocycle_config):
        """Command name by default, output stem if given."""
        assert artifact_name(cocycle_config) == "trace-map-cocycle"
        named = cocycle_config.model_copy(update={"output": "out/cocycle.json"})
        assert artifact_name(named) == "cocycle"


class TestValidate:
    """Test config validation."""

    def test_unknown_command(self, runner):
        """Unknown commands list the known ones."""
        config = ExperimentConfig(command="trace-map.nothing")
        with pytest.raises(ConfigInvalid) as excinfo:
            runner.validate(config)
        assert "trace-map.cocycle" in str(excinfo.value)

    def test_invalid_params(self, runner):
        """Parameter errors become ConfigInvalid."""
        config = ExperimentConfig(command="trace-map.cocycle", params={"v": 5})
        with pytest.raises(ConfigInvalid):
            runner.validate(config)

    def test_value_error_from_command(self, runner):
        """Precondition failures inside a command are config errors."""
        config = ExperimentConfig(
            command="spectrum.fit-decay", params={"t_min": 50, "t_max": 10}
        )
        with pytest.raises(ConfigInvalid):
            runner.compute(config)


class TestRun:
    """Test running and writing artifacts."""

    def test_json_artifact(self, runner, cocycle_config, output_dir):
        """JSON artifact carries the manifest hash."""
        manifest = runner.run(cocycle_config)

        assert manifest.success
        assert manifest.artifact == os.path.join(output_dir, "trace-map-cocycle.json")
        assert manifest.checks == {"nonzero": True, "near_limit": True}
        assert manifest.versions["fibospec"]
        with open(manifest.artifact) as f:
            record = json.load(f)
        assert record["manifest_hash"] == manifest.manifest_hash
        assert record["V"] == 0.01

        manifest_path = os.path.join(output_dir, "trace-map-cocycle.manifest.json")
        assert os.path.exists(manifest_path)

    def test_csv_artifact(self, runner, output_dir):
        """CSV has a header, one row per entry and the hash in the first row."""
        config = ExperimentConfig(
            command="thermo.words",
            params={"system": "triadic", "n": 2},
            output_format=OutputFormat.CSV,
        )
        manifest = runner.run(config)

        with open(manifest.artifact, newline="") as f:
            raw = f.read()
        assert "\r\n" in raw
        rows = list(csv.reader(raw.splitlines()))
        assert rows[0] == ["word", "weight", "mass", "manifest_hash"]
        assert len(rows) == 1 + 8
        assert rows[1][-1] == manifest.manifest_hash
        assert all(row[-1] == "" for row in rows[2:])
        assert float(rows[1][2]) == pytest.approx(0.125)

    def test_csv_without_table(self, runner):
        """Scalar record fields become a single row."""
        config = ExperimentConfig(
            command="trace-map.fixed-point",
            params={"v": 0.01},
            output_format=OutputFormat.CSV,
        )
        manifest = runner.run(config)

        with open(manifest.artifact, newline="") as f:
            rows = list(csv.reader(f))
        assert "lambda_V" in rows[0]
        assert "point" not in rows[0]
        assert len(rows) == 2

    def test_numpy_checks_in_manifest(self, runner, cocycle_config, output_dir):
        """numpy booleans from checks are stored as plain booleans."""
        artifact = Artifact(
            {"value": np.float64(1.5)},
            checks={"ok": np.bool_(True), "small": np.float64(2.0) < 1.0},
        )
        with patch.object(ExperimentRunner, "compute", return_value=artifact):
            manifest = runner.run(cocycle_config)

        assert manifest.checks == {"ok": True, "small": False}
        path = os.path.join(output_dir, "trace-map-cocycle.manifest.json")
        stored = ExperimentRunner.load_manifest(path)
        assert stored.checks == {"ok": True, "small": False}
        assert all(type(v) is bool for v in stored.checks.values())

    def test_fixed_point_manifest(self, runner, output_dir):
        """Fixed-point runs leave both artifact and manifest."""
        config = ExperimentConfig(command="trace-map.fixed-point", params={"v": 0.01})
        manifest = runner.run(config)

        assert manifest.success
        assert all(manifest.checks.values())
        stem = os.path.join(output_dir, "trace-map-fixed-point")
        assert os.path.exists(stem + ".json")
        assert os.path.exists(stem + ".manifest.json")

    def test_output_path(self, runner, cocycle_config, tmp_path):
        """An output path with a directory overrides the output dir."""
        target = tmp_path / "nested" / "cocycle.json"
        config = cocycle_config.model_copy(update={"output": str(target)})
        manifest = runner.run(config)

        assert manifest.artifact == str(target)
        assert (tmp_path / "nested" / "cocycle.manifest.json").exists()

    def test_rerun_is_byte_identical(self, runner, output_dir):
        """Same config, same bytes."""
        config = ExperimentConfig(
            command="spectrum.dos",
            params={"v": 0.5, "sites": 64, "phases": 2, "bins": 8},
        )
        with open(runner.run(config).artifact, "rb") as f:
            first = f.read()
        with open(runner.run(config).artifact, "rb") as f:
            second = f.read()
        assert first == second

    def test_module_error_writes_manifest(self, runner, output_dir):
        """A failed run leaves a manifest with the error."""
        config = ExperimentConfig(command="trace-map.cocycle", params={"v": 0.01})
        with patch(
            "fibospec.commands.anosov_cocycle",
            side_effect=NoRootInBracket("no root"),
        ):
            with pytest.raises(NoRootInBracket):
                runner.run(config)

        path = os.path.join(output_dir, "trace-map-cocycle.manifest.json")
        stored = ExperimentRunner.load_manifest(path)
        assert not stored.success
        assert stored.error_message == "no root"
        assert stored.artifact is None

    def test_no_manifest(self, sample_settings, cocycle_config, output_dir):
        """Manifests can be switched off."""
        runner = ExperimentRunner(replace(sample_settings, write_manifest=False))
        runner.run(cocycle_config)
        assert os.listdir(output_dir) == ["trace-map-cocycle.json"]

    def test_write_error(self, runner, cocycle_config, tmp_path):
        """An unwritable path raises IoError."""
        blocker = tmp_path / "file"
        blocker.write_text("")
        config = cocycle_config.model_copy(
            update={"output": str(blocker / "cocycle.json")}
        )
        with pytest.raises(IoError):
            runner.run(config)


class TestReplay:
    """Test manifest loading and replay."""

    def test_replay(self, runner, cocycle_config, output_dir):
        """Replaying reproduces hash and artifact."""
        first = runner.run(cocycle_config)
        with open(first.artifact, "rb") as f:
            original = f.read()

        path = os.path.join(output_dir, "trace-map-cocycle.manifest.json")
        second = runner.replay(path)

        assert second.manifest_hash == first.manifest_hash
        assert second.config == first.config
        with open(second.artifact, "rb") as f:
            assert f.read() == original

    def test_missing_manifest(self, tmp_path):
        """Missing files are I/O errors."""
        with pytest.raises(IoError):
            ExperimentRunner.load_manifest(str(tmp_path / "missing.json"))

    def test_corrupt_manifest(self, tmp_path):
        """Unparseable JSON is an I/O error."""
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(IoError):
            ExperimentRunner.load_manifest(str(path))

    def test_invalid_manifest(self, tmp_path):
        """Valid JSON that is not a manifest is a config error."""
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"command": "trace-map.cocycle"}))
        with pytest.raises(ConfigInvalid):
            ExperimentRunner.load_manifest(str(path))

    def test_manifest_round_trip(self, runner, cocycle_config, output_dir):
        """Stored manifests validate as RunManifest."""
        manifest = runner.run(cocycle_config)
        path = os.path.join(output_dir, "trace-map-cocycle.manifest.json")
        with open(path) as f:
            stored = RunManifest.model_validate(json.load(f))
        assert stored.checks == manifest.checks
        assert stored.artifact == manifest.artifact
