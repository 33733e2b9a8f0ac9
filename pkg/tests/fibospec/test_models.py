"""Tests for the models module."""

import numpy as np
import pytest
from pydantic import ValidationError

from fibospec.models import (
    CocycleValue,
    CorrelationSeries,
    CriterionResult,
    DosHistogram,
    ExperimentConfig,
    OutputFormat,
    RunManifest,
    SpectrumCover,
    VerifyReport,
)


class TestModels:
    """Test the data models."""

    def test_cocycle_value_scaled(self):
        """Test that the scaled cocycle multiplies by V squared."""
        value = CocycleValue(value=-96_000.0, V=0.03)
        assert value.scaled == pytest.approx(-86.4)
        assert value.partials == {}

    def test_spectrum_cover_measure_and_contains(self):
        """Test the measure and membership helpers of a cover."""
        cover = SpectrumCover(
            V=1.0, resolution=0.1, intervals=[(-1.0, -0.5), (0.2, 0.3)]
        )

        assert cover.measure == pytest.approx(0.6)
        assert cover.contains(-0.7)
        assert not cover.contains(0.0)
        assert cover.contains(0.35, pad=0.1)

    def test_dos_histogram_centers(self):
        """Test the bin centers of a histogram."""
        dos = DosHistogram(V=0.1, bin_edges=[0.0, 1.0, 3.0], masses=[0.5, 0.5])
        assert np.allclose(dos.centers, [0.5, 2.0])

    def test_correlation_series_from_arrays(self):
        """Test building a series from complex arrays."""
        series = CorrelationSeries.from_arrays(
            np.array([0.0, 1.0]), np.array([1.0 + 0.0j, 0.5 - 0.25j]), n_phases=4
        )

        assert series.re == [1.0, 0.5]
        assert series.im == [0.0, -0.25]
        assert series.n_phases == 4
        assert np.allclose(series.values, [1.0, 0.5 - 0.25j])

    def test_experiment_config_defaults(self):
        """Test the defaults of an experiment config."""
        config = ExperimentConfig(command="trace-map.cocycle")

        assert config.params == {}
        assert config.seed == 20240501
        assert config.output is None
        assert config.output_format == OutputFormat.JSON

    def test_experiment_config_strips_command(self):
        """Test that surrounding whitespace is removed from the command."""
        assert ExperimentConfig(command=" spectrum.dos ").command == "spectrum.dos"

    @pytest.mark.parametrize("command", ["", "spectrum dos"])
    def test_experiment_config_rejects_bad_command(self, command):
        """Test that empty or spaced command names are rejected."""
        with pytest.raises(ValidationError):
            ExperimentConfig(command=command)

    def test_experiment_config_rejects_bad_format(self):
        """Test that unknown artifact formats are rejected."""
        with pytest.raises(ValidationError):
            ExperimentConfig(command="spectrum.dos", output_format="xml")

    def test_run_manifest_round_trip(self):
        """Test that a manifest survives JSON serialization."""
        manifest = RunManifest(
            config=ExperimentConfig(command="thermo.words", params={"n": 3}),
            manifest_hash="abc",
            wall_time=0.5,
            checks={"unit_mass": True},
        )
        restored = RunManifest.model_validate_json(manifest.model_dump_json())

        assert restored == manifest
        assert restored.success is True
        assert restored.error_message is None

    def test_verify_report_failed(self):
        """Test that failed lists the names of failing criteria."""
        report = VerifyReport(
            suite="fast",
            passed=False,
            criteria=[
                CriterionResult(name="cocycle", passed=True),
                CriterionResult(name="qnl", passed=False, detail="few pairs"),
            ],
        )
        assert report.failed == ["qnl"]
