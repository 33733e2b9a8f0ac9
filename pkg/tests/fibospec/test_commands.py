"""Tests for the command registry and command functions."""

import json
import math
from unittest.mock import patch

import numpy as np
import pytest
from pydantic import ValidationError

from fibospec.commands import (
    COMMANDS,
    LINEAR_RADIUS,
    CocycleParams,
    CouplingParams,
    DosParams,
    RunContext,
    SampleParams,
    SumParams,
    load_system,
    near_pairs,
    near_triples,
    sigma_grid,
)
from fibospec.config import Settings
from fibospec.errors import IoError, NonConvergence
from fibospec.hyperbolic import HolonomyIdentity, cat_sampler
from fibospec.models import DosMethod
from fibospec.parallel import SERIAL
from fibospec.trace_map import COCYCLE_LIMIT


@pytest.fixture
def ctx():
    """Serial context with a fixed seed."""
    return RunContext(Settings(workers=1), 5, SERIAL)


def run(name, ctx, **params):
    entry = COMMANDS[name]
    return entry.run(entry.params.model_validate(params), ctx)


class TestRegistry:
    """Test the command registry."""

    def test_all_groups_registered(self):
        """Every module contributes its commands."""
        groups = {name.split(".")[0] for name in COMMANDS}
        assert groups == {
            "trace-map",
            "spectrum",
            "thermo",
            "hyperbolic",
            "sumproduct",
        }
        for name in (
            "trace-map.cocycle",
            "spectrum.fit-decay",
            "thermo.regular",
            "hyperbolic.qnl",
            "hyperbolic.holonomy",
            "sumproduct.nc",
        ):
            assert name in COMMANDS

    def test_help_from_docstring(self):
        """The first docstring line becomes the help text."""
        assert COMMANDS["hyperbolic.counts"].help.startswith("Periodic point counts")


class TestParams:
    """Test parameter models."""

    def test_unknown_key_rejected(self):
        """Parameters outside the model are an error."""
        with pytest.raises(ValidationError):
            CouplingParams.model_validate({"v": 0.01, "w": 1})

    def test_range_enforced(self):
        """The cocycle is only defined for small couplings."""
        with pytest.raises(ValidationError):
            CocycleParams(v=0.3)
        with pytest.raises(ValidationError):
            CouplingParams(v=0.0)

    def test_comma_separated_lists(self):
        """String values of list fields are split on commas."""
        params = CocycleParams.model_validate({"v": "0.01", "v_grid": "0.1, 0.01,"})
        assert params.v == 0.01
        assert params.v_grid == [0.1, 0.01]

        sums = SumParams.model_validate({"ns": "4,6,8"})
        assert sums.ns == [4, 6, 8]

    def test_method_from_string(self):
        """Enum fields accept their values."""
        params = DosParams.model_validate({"method": "trace-map-cover"})
        assert params.method == DosMethod.TRACE_MAP_COVER

    def test_sample_defaults(self):
        """Sampling commands default to the trace map."""
        params = SampleParams()
        assert params.system == "trace-map"
        assert params.radius is None


class TestHelpers:
    """Test helper functions."""

    def test_sigma_grid(self):
        """Log-spaced and strictly decreasing."""
        grid = sigma_grid(1e-1, 1e-4, 4)
        assert grid == pytest.approx([1e-1, 1e-2, 1e-3, 1e-4])
        assert all(b < a for a, b in zip(grid, grid[1:]))

    def test_load_system_normalized(self):
        """Built-in systems come normalized, keeping their pressure."""
        system = load_system("golden-mean")
        assert system.normalized
        golden = (1 + math.sqrt(5)) / 2
        assert system.log_rho == pytest.approx(math.log(golden), abs=1e-10)

    def test_near_pairs(self):
        """Pairs are within the radius on the torus, and seeded."""
        sample = cat_sampler(5, seed=1)
        points = np.mod(sample.points(), 1.0)
        pairs = near_pairs(sample, 0.1, 20, seed=2)
        assert pairs
        assert len(pairs) <= 20
        for i, j in pairs:
            gap = np.abs(points[i] - points[j])
            gap = np.minimum(gap, 1.0 - gap)
            assert np.hypot(*gap) <= 0.1 + 1e-12
        assert near_pairs(sample, 0.1, 20, seed=2) == pairs

    def test_near_pairs_none(self):
        """Nothing within a tiny radius."""
        sample = cat_sampler(2, seed=1)
        assert near_pairs(sample, 1e-9, 10, seed=2) == []

    def test_near_triples(self):
        """Triples have three distinct members."""
        sample = cat_sampler(5, seed=1)
        triples = near_triples(sample, 0.15, 5, seed=2)
        assert triples
        for p, s, y in triples:
            assert len({p, s, y}) == 3


class TestTraceMapCommands:
    """Test trace-map commands."""

    def test_fixed_point(self, ctx):
        """p_V and its eigenvalues pass their checks."""
        artifact = run("trace-map.fixed-point", ctx, v=0.01)
        assert all(artifact.checks.values())
        assert artifact.record["asymptotic_ratio"] == pytest.approx(1.0, abs=0.03)
        assert len(artifact.record["point"]) == 3

    def test_cocycle(self, ctx):
        """Scaled cocycle is near its limit."""
        artifact = run("trace-map.cocycle", ctx, v=0.01)
        assert artifact.checks == {"nonzero": True, "near_limit": True}
        assert artifact.record["limit"] == COCYCLE_LIMIT
        assert artifact.table == {}

    def test_cocycle_fit(self, ctx):
        """A V grid adds the regression and a table."""
        artifact = run("trace-map.cocycle", ctx, v=0.01, v_grid=[0.02, 0.01, 0.005])
        assert artifact.table["V"] == [0.02, 0.01, 0.005]
        assert artifact.record["fit"]["limit"] == pytest.approx(
            COCYCLE_LIMIT, rel=0.05
        )


class TestSpectrumCommands:
    """Test spectrum commands."""

    def test_dos(self, ctx):
        """Histogram masses sum to one."""
        artifact = run("spectrum.dos", ctx, v=0.5, sites=128, bins=16)
        assert artifact.checks["unit_mass"]
        assert len(artifact.table["center"]) == 16

    def test_fit_decay_from_file(self, ctx, tmp_path):
        """A correlate artifact can be fitted later."""
        times = np.linspace(0.0, 400.0, 1601)
        envelope = np.where(times > 0, np.maximum(times, 1.0) ** -0.5, 1.0)
        path = tmp_path / "correlate.json"
        path.write_text(
            json.dumps(
                {
                    "V": 0.0,
                    "times": times.tolist(),
                    "re": envelope.tolist(),
                    "im": [0.0] * len(times),
                    "manifest_hash": "abc",
                }
            )
        )
        artifact = run(
            "spectrum.fit-decay",
            ctx,
            input=str(path),
            t_min=10.0,
            t_max=400.0,
            n_times=1601,
            blocks=20,
        )
        assert artifact.record["rho_hat"] == pytest.approx(0.5, abs=0.02)
        assert artifact.checks["positive_decay"]

    def test_fit_decay_missing_file(self, ctx, tmp_path):
        """An unreadable input is an I/O error."""
        with pytest.raises(IoError):
            run("spectrum.fit-decay", ctx, input=str(tmp_path / "missing.json"))

    def test_fit_decay_bad_window(self, ctx):
        """t_min must be below t_max."""
        with pytest.raises(ValueError):
            run("spectrum.fit-decay", ctx, t_min=50.0, t_max=10.0)


class TestThermoCommands:
    """Test thermodynamic commands."""

    def test_words(self, ctx):
        """All triadic words of n + 1 symbols, equally weighted."""
        artifact = run("thermo.words", ctx, system="triadic", n=3)
        assert artifact.record["count"] == 16
        assert artifact.checks["unit_mass"]
        assert artifact.table["mass"] == pytest.approx([1 / 16] * 16)

    def test_constants(self, ctx):
        """Triadic Lyapunov exponent is ln 3."""
        artifact = run("thermo.constants", ctx, system="triadic")
        assert artifact.record["lyapunov"] == pytest.approx(math.log(3), rel=1e-8)
        assert artifact.checks["positive_lyapunov"]


class TestHyperbolicCommands:
    """Test hyperbolic commands."""

    def test_frame_linear(self, ctx):
        """Cat-map frame is exact."""
        artifact = run("hyperbolic.frame", ctx, system="linear-test", depth=20)
        assert artifact.checks["invariance"]
        assert artifact.record["residual"] <= 1e-8
        golden = (1 + math.sqrt(5)) / 2
        assert artifact.record["expansion"] == pytest.approx(
            2 * math.log(golden), rel=1e-8
        )

    def test_delta_linear(self, ctx):
        """Temporal distances vanish for the cat map."""
        artifact = run(
            "hyperbolic.delta",
            ctx,
            system="linear-test",
            period_cap=5,
            pairs=10,
            tol=1e-8,
        )
        assert artifact.record["radius"] == LINEAR_RADIUS
        assert artifact.record["self_distance"] == 0.0
        assert artifact.checks["vanishes"]
        assert artifact.record["n_pairs"] + artifact.record["n_skipped"] <= 10

    def test_holonomy_all_triples(self, ctx):
        """Identity and coverage pass when every triple is evaluated."""
        agreeing = HolonomyIdentity(delta_plus=0.25, distortion=0.25, horizon=16)
        with patch("fibospec.commands.forward_half_identity", return_value=agreeing):
            artifact = run(
                "hyperbolic.holonomy",
                ctx,
                system="linear-test",
                period_cap=5,
                pairs=10,
                radius=0.2,
            )
        assert artifact.record["n_triples"] == 10
        assert artifact.record["n_skipped"] == 0
        assert artifact.checks == {"holonomy_identity": True, "coverage": True}

    def test_holonomy_skipped_triples_fail_coverage(self, ctx):
        """A few agreeing triples do not stand in for the requested count."""
        agreeing = HolonomyIdentity(delta_plus=0.25, distortion=0.25, horizon=16)
        outcomes = [agreeing] * 6 + [NonConvergence("tail")] * 4
        with patch(
            "fibospec.commands.forward_half_identity", side_effect=outcomes
        ):
            artifact = run(
                "hyperbolic.holonomy",
                ctx,
                system="linear-test",
                period_cap=5,
                pairs=10,
                radius=0.2,
            )
        assert artifact.record["n_triples"] == 6
        assert artifact.record["n_skipped"] == 4
        assert artifact.checks["holonomy_identity"]
        assert not artifact.checks["coverage"]

    def test_unknown_system(self, ctx):
        """Only the trace map and the linear test are sampled."""
        with pytest.raises(ValueError):
            run("hyperbolic.delta", ctx, system="henon")

    def test_counts(self, ctx):
        """Surface counts match the closed form."""
        artifact = run("hyperbolic.counts", ctx, v=0.5, period_cap=4)
        assert artifact.record["counts"] == [4, 8, 22, 48]
        assert artifact.checks["counts"]


class TestSumProductCommands:
    """Test sum-product commands."""

    def test_zeta(self, ctx):
        """One block of zeta values, one column per slot."""
        artifact = run("sumproduct.zeta", ctx, system="triadic", n=4, k=2)
        assert set(artifact.table) == {"zeta_1", "zeta_2"}
        assert artifact.record["log_spread"] == pytest.approx(0.0, abs=1e-12)

    def test_sum_triadic(self, ctx):
        """Triadic sums never decay."""
        artifact = run("sumproduct.sum", ctx, system="triadic", ns="4,6", k=2)
        assert artifact.record["sup_modulus"] == pytest.approx([1.0, 1.0], abs=1e-12)
        assert artifact.checks["bounded"]

    def test_nc_bad_grid(self, ctx):
        """sigma_min must be below sigma_max."""
        with pytest.raises(ValueError):
            run("sumproduct.nc", ctx, sigma_min=0.5, sigma_max=0.1)
