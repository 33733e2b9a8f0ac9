"""Tests for the acceptance suites."""

from fractions import Fraction
from unittest.mock import patch

import pytest

from fibospec.errors import BudgetExceeded
from fibospec.models import CocycleValue
from fibospec.trace_map import anosov_cocycle, fricke_vogt
from fibospec.verify import CRITERIA, SCALES, angle_cycle, verify


class TestSuites:
    """Test suite definitions."""

    def test_scales(self):
        """Fast is never larger than full."""
        assert set(SCALES) == {"fast", "full"}
        fast, full = SCALES["fast"], SCALES["full"]
        assert fast.free_sites <= full.free_sites
        assert fast.period_cap <= full.period_cap
        assert fast.qnl_pairs <= full.qnl_pairs

    def test_criteria(self):
        """Every acceptance criterion is registered once."""
        assert list(CRITERIA) == [
            "fixed-point",
            "eigenvalues",
            "cocycle",
            "taylor",
            "fricke-vogt",
            "free-case",
            "decay-sign",
            "cantor",
            "thermo",
            "delta",
            "qnl",
            "sum-product",
            "determinism",
        ]

    def test_unknown_suite(self, sample_settings):
        """Only fast and full exist."""
        with pytest.raises(ValueError):
            verify("medium", sample_settings)

    def test_unknown_criterion(self, sample_settings):
        """Unknown names in only are rejected up front."""
        with pytest.raises(ValueError):
            verify("fast", sample_settings, only=["cocycle", "nothing"])


class TestAngleCycle:
    """Test rational-angle orbits on the Cayley cubic."""

    def test_cycle_closes_on_surface(self):
        """Points lie on I = 0 and the cycle returns to its start."""
        cycle = angle_cycle(Fraction(1, 11), Fraction(3, 11))
        assert len(cycle) > 1
        for point in cycle:
            assert abs(fricke_vogt(point)) < 1e-12


class TestVerify:
    """Test running criteria."""

    def test_trace_map_criteria_pass(self, sample_settings):
        """Closed-form criteria pass in the fast suite."""
        report = verify(
            "fast",
            sample_settings,
            only=["fixed-point", "eigenvalues", "cocycle", "taylor", "fricke-vogt"],
        )
        assert report.passed
        assert report.failed == []
        assert [c.name for c in report.criteria] == [
            "fixed-point",
            "eigenvalues",
            "cocycle",
            "taylor",
            "fricke-vogt",
        ]
        assert all(c.detail for c in report.criteria)

    def test_broken_cocycle_fails(self, sample_settings):
        """A wrong cocycle is reported, not raised."""
        broken = CocycleValue(value=1.0, V=0.1)
        with patch("fibospec.verify.anosov_cocycle", return_value=broken):
            report = verify("fast", sample_settings, only=["cocycle", "eigenvalues"])

        assert not report.passed
        assert report.failed == ["cocycle"]

    def test_sign_flipped_cocycle_fails(self, sample_settings):
        """A cocycle of the wrong sign misses the limit."""

        def flipped(V):
            value = anosov_cocycle(V)
            return value.model_copy(update={"value": -value.value})

        with patch("fibospec.verify.anosov_cocycle", side_effect=flipped):
            report = verify("fast", sample_settings, only=["cocycle"])

        assert report.failed == ["cocycle"]

    def test_crashing_criterion_is_contained(self, sample_settings):
        """Module errors fail the criterion and the suite goes on."""
        with patch(
            "fibospec.verify.linearize_at_pV", side_effect=BudgetExceeded("budget")
        ):
            report = verify("fast", sample_settings, only=["eigenvalues", "taylor"])

        assert report.failed == ["eigenvalues"]
        assert "BudgetExceeded" in report.criteria[0].detail
        assert report.criteria[1].passed
