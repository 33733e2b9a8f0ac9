"""Tests for the sumproduct module."""

import math

import numpy as np
import pytest

from fibospec.config import Budgets
from fibospec.errors import BudgetExceeded, EmptySlot, InsufficientEnvelope
from fibospec.sumproduct import (
    DEFAULT_K,
    ExpSumConfig,
    ZetaTable,
    bridge_expression,
    build_zeta,
    default_eps0,
    delta_nc_bridge,
    eta_grid,
    exp_sum,
    fit_nc_exponent,
    nc_counter,
    phase_modulus,
    sup_modulus_scan,
    zeta_blocks,
)
from fibospec.thermo import word_array


def equispaced_table(size):
    """A one-slot table with values 0, 1/size, 2/size, ..."""
    return ZetaTable(
        system="synthetic",
        n=1,
        eps=0.1,
        block=np.zeros((2, 2), dtype=int),
        slots=[np.zeros((size, 2), dtype=int)],
        values=[np.arange(size) / size],
        lyapunov=1.0,
    )


class TestWindow:
    """Test the frequency window and its configuration."""

    def test_eta_grid(self):
        """Test that the grid spans the window."""
        grid = eta_grid(8, 0.1, size=5)
        assert grid[0] == pytest.approx(math.exp(0.4))
        assert grid[-1] == pytest.approx(math.exp(1.6))
        assert np.all(np.diff(grid) > 0)
        with pytest.raises(ValueError):
            eta_grid(0, 0.1)

    def test_default_eps0(self, triadic_system):
        """Test the window constant of the triadic map."""
        assert default_eps0(triadic_system) == pytest.approx(math.log(3.0) / 16.0)

    def test_config_validation(self, triadic_system):
        """Test that k and the grid are validated."""
        cfg = ExpSumConfig.for_system(triadic_system, 6)
        assert cfg.k == DEFAULT_K
        with pytest.raises(ValueError):
            ExpSumConfig(n=6, k=0, eps0=0.1, eta_grid=eta_grid(6, 0.1))
        with pytest.raises(ValueError):
            ExpSumConfig(n=6, k=3, eps0=0.1, eta_grid=np.array([100.0]))


class TestZeta:
    """Test blocks and zeta tables."""

    def test_blocks_are_seeded_and_admissible(self, nonlinear_system):
        """Test that blocks join admissibly and depend only on the seed."""
        first = zeta_blocks(nonlinear_system, 4, count=2, seed=9)
        second = zeta_blocks(nonlinear_system, 4, count=2, seed=9)

        assert len(first) == 2
        assert first[0].shape == (DEFAULT_K + 1, 5)
        assert all(np.array_equal(a, b) for a, b in zip(first, second))

    def test_no_regular_words(self, nonlinear_system):
        """Test that an empty regular set raises EmptySlot."""
        with pytest.raises(EmptySlot):
            zeta_blocks(nonlinear_system, 4, eps=1e-6)

    def test_triadic_zeta_is_one(self, triadic_system):
        """Test that zeta is identically one for the linear Cantor map."""
        block = zeta_blocks(triadic_system, 4, seed=1)[0]
        table = build_zeta(triadic_system, block, 4)

        assert table.k == DEFAULT_K
        assert table.sizes == [len(s) for s in table.slots]
        assert table.log_spread <= 1e-12

    def test_nonlinear_zeta_spread(self, nonlinear_system):
        """Test that zeta stays within the regular window but is not constant."""
        block = zeta_blocks(nonlinear_system, 5, seed=2)[0]
        table = build_zeta(nonlinear_system, block, 5)
        assert 1e-6 < table.log_spread < 4.0 * 0.1 * 5 * 2 + 1.0

    def test_build_zeta_rejects_block_shape(self, triadic_system):
        """Test block shape validation."""
        with pytest.raises(ValueError):
            build_zeta(triadic_system, word_array(triadic_system, 3)[:1], 3)


class TestExponentialSums:
    """Test phase moduli and exponential sums."""

    def test_antipodal_values_cancel(self):
        """Test that two values half a turn apart give modulus zero."""
        eta = 7.0
        modulus = phase_modulus([np.array([1.0, 1.0 + math.pi / eta])], np.array([eta]))
        assert modulus[0] == pytest.approx(0.0, abs=1e-12)

    def test_product_of_slots(self):
        """Test that multi-slot sums run over all products."""
        values = [np.array([1.0, 2.0]), np.array([1.0, -1.0]), np.array([0.5])]
        eta = np.array([0.3])
        products = [a * b * c for a in values[0] for b in values[1] for c in values[2]]
        expected = abs(np.mean(np.exp(1j * 0.3 * np.array(products))))
        assert phase_modulus(values, eta)[0] == pytest.approx(expected)

    def test_term_budget(self):
        """Test that the term budget raises BudgetExceeded."""
        values = [np.ones(4), np.ones(4)]
        with pytest.raises(BudgetExceeded):
            phase_modulus(values, np.array([1.0]), Budgets(term_budget=10))

    def test_triadic_sum_does_not_decay(self, triadic_system):
        """Test that constant zeta gives modulus one."""
        block = zeta_blocks(triadic_system, 4, seed=1)[0]
        table = build_zeta(triadic_system, block, 4)
        result = exp_sum(table, ExpSumConfig.for_system(triadic_system, 4))

        assert result.sup_modulus == pytest.approx(1.0, abs=1e-12)
        assert result.n_terms == math.prod(table.sizes)
        with pytest.raises(ValueError):
            exp_sum(table, ExpSumConfig.for_system(triadic_system, 4, k=2))

    def test_sup_modulus_scan(self, nonlinear_system):
        """Test the scan over word lengths."""
        results, slope = sup_modulus_scan(nonlinear_system, [4, 6], seed=3)
        assert [r.n for r in results] == [4, 6]
        assert all(0.0 <= r.sup_modulus <= 1.0 for r in results)
        assert math.isfinite(slope)


class TestNonConcentration:
    """Test the pair counts of nearby zeta values."""

    def test_equispaced_counts_double(self):
        """Test that doubling sigma about doubles the pair count."""
        table = equispaced_table(1000)
        small, large = nc_counter(table, [0.0105, 0.0205], gamma=1.0)

        assert large.pair_count / small.pair_count == pytest.approx(2.0, rel=0.05)
        assert small.bound_ratio == pytest.approx(
            small.pair_count / (1000**2 * 0.0105)
        )

    def test_diagonal_is_counted(self):
        """Test that tiny sigma counts only the diagonal."""
        (counter,) = nc_counter(equispaced_table(50), [1e-6], gamma=1.0)
        assert counter.pair_count == 50

    def test_sigma_must_be_positive(self):
        """Test sigma validation."""
        with pytest.raises(ValueError):
            nc_counter(equispaced_table(10), [0.0], gamma=1.0)

    def test_fit_exponent(self):
        """Test the fitted exponent of equispaced values."""
        sigmas = list(np.geomspace(0.2, 0.02, 6) + 1e-4)
        counters = nc_counter(equispaced_table(1000), sigmas, gamma=1.0)
        assert fit_nc_exponent(counters, 1000) == pytest.approx(1.0, abs=0.1)

    def test_fit_needs_informative_scales(self):
        """Test that saturated counts cannot be fitted."""
        counters = nc_counter(equispaced_table(10), [5.0, 2.0, 1.5], gamma=1.0)
        with pytest.raises(InsufficientEnvelope):
            fit_nc_exponent(counters, 10)


class TestBridge:
    """Test the four-term Birkhoff expression."""

    def test_triadic_bridge_vanishes(self, triadic_system):
        """Test that a constant-slope map gives zero."""
        hist = delta_nc_bridge(triadic_system, 4, [1e-2, 1e-4, 1e-8], n_samples=256)
        assert hist.degenerate

    def test_bridge_antisymmetry(self, nonlinear_system):
        """Test that swapping words or points changes the sign."""
        words = word_array(nonlinear_system, 3)
        a, b = words[:4], words[4:8]
        lo, hi = nonlinear_system.intervals[0]
        a[:, -1] = b[:, -1] = 0
        x = np.full(4, lo + 0.1 * (hi - lo))
        y = np.full(4, lo + 0.8 * (hi - lo))

        forward = bridge_expression(nonlinear_system, a, b, x, y)
        assert np.allclose(bridge_expression(nonlinear_system, b, a, x, y), -forward)
        assert np.allclose(bridge_expression(nonlinear_system, a, b, y, x), -forward)
        assert np.allclose(bridge_expression(nonlinear_system, a, a, x, y), 0.0)

    def test_nonlinear_bridge_profile(self, nonlinear_system):
        """Test that the nonlinear map spreads the expression."""
        hist = delta_nc_bridge(
            nonlinear_system, 4, list(np.geomspace(1e-1, 1e-4, 6)), n_samples=512
        )
        assert not hist.degenerate
        assert hist.n_pairs == 512
