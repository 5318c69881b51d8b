"""
Tests for theorem-prescribed schedules and explicit bound constants
"""
import math

import pytest

from muon_bench_core.exceptions import ConfigurationError
from muon_bench_core.models.enums import Theorem
from muon_bench_core.modules import schedules


class TestBatchFree:
    """Test the batch-free thm22 schedule"""

    def test_reference_values(self):
        """R = L = sigma = 1, T = 100, n = 2 gives alpha = 0.1 and eta = sqrt(4/10400)"""
        p = schedules.thm22_batch_free(1.0, 1.0, 1.0, 2, 100)
        assert p.alpha == pytest.approx(0.1)
        assert p.beta == pytest.approx(0.9)
        assert p.eta == pytest.approx(math.sqrt(4 / 10400))
        assert p.eta == pytest.approx(0.019612, abs=1e-6)
        assert p.batch == 1
        assert p.valid

    def test_noise_free_alpha(self):
        """sigma = 0 clamps alpha at 1"""
        p = schedules.thm22_batch_free(1.0, 1.0, 0.0, 3, 500)
        assert p.alpha == 1.0
        assert p.beta == 0.0

    def test_single_step(self):
        """T = 1 with n = 1: alpha = 1, eta = sqrt(4/12)"""
        p = schedules.thm22_batch_free(1.0, 1.0, 1.0, 1, 1)
        assert p.alpha == 1.0
        assert p.eta == pytest.approx(math.sqrt(4 / 12))
        assert p.eta == pytest.approx(0.57735, abs=1e-5)

    @pytest.mark.parametrize(
        "args", [(0.0, 1.0, 1.0, 2, 10), (1.0, -1.0, 1.0, 2, 10), (1.0, 1.0, 1.0, 2, 0),
                 (1.0, 1.0, -1.0, 2, 10), (1.0, 1.0, 1.0, 0, 10)]
    )
    def test_rejected(self, args):
        """Nonpositive R, L, T, n and negative sigma"""
        with pytest.raises(ConfigurationError):
            schedules.thm22_batch_free(*args)

    def test_monotone(self):
        """eta strictly decreases in T and n"""
        etas_t = [schedules.thm22_batch_free(1.0, 1.0, 1.0, 3, T).eta for T in (10, 100, 1000)]
        etas_n = [schedules.thm22_batch_free(1.0, 1.0, 1.0, n, 100).eta for n in (1, 2, 8)]
        assert etas_t[0] > etas_t[1] > etas_t[2]
        assert etas_n[0] > etas_n[1] > etas_n[2]

    def test_dimensional_scaling(self):
        """Scaling R by c scales eta by sqrt(c) once alpha is clamped"""
        base = schedules.thm22_batch_free(1.0, 2.0, 0.0, 3, 100).eta
        scaled = schedules.thm22_batch_free(9.0, 2.0, 0.0, 3, 100).eta
        assert scaled == pytest.approx(3.0 * base)


class TestBigAndPowerBatch:
    """Test the batched thm22 schedules"""

    def test_big_batch_reference(self):
        """beta = 0.5, R = L = 1, n = 2, T = 100: eta = sqrt(4/2400), B = T"""
        p = schedules.thm22_big_batch(1.0, 1.0, 2, 100, 0.5)
        assert p.eta == pytest.approx(math.sqrt(4 / 2400))
        assert p.eta == pytest.approx(0.040825, abs=1e-6)
        assert p.batch == 100
        assert p.alpha == 0.5

    def test_beta_zero_matches_batch_free(self):
        """beta = 0 reproduces the alpha = 1 batch-free step"""
        big = schedules.thm22_big_batch(2.0, 3.0, 4, 250, 0.0)
        free = schedules.thm22_batch_free(2.0, 3.0, 0.0, 4, 250)
        assert big.eta == pytest.approx(free.eta, rel=1e-15)

    def test_big_batch_rejects(self):
        """T = 0 and beta = 1 are errors"""
        with pytest.raises(ConfigurationError):
            schedules.thm22_big_batch(1.0, 1.0, 2, 0, 0.5)
        with pytest.raises(ConfigurationError):
            schedules.thm22_big_batch(1.0, 1.0, 2, 10, 1.0)

    def test_power_batch(self):
        """ceil(T^p) with exact powers not bumped up"""
        assert schedules.thm22_power_batch(1.0, 1.0, 2, 100, 0.9, 0.5).batch == 10
        assert schedules.thm22_power_batch(1.0, 1.0, 2, 1000, 0.9, 0.5).batch == 32
        assert schedules.thm22_power_batch(1.0, 1.0, 2, 1000, 0.9, 1 / 3).batch == 10

    @pytest.mark.parametrize("power", [0.0, 1.0, 1.5])
    def test_power_open_interval(self, power):
        """power must lie in (0, 1)"""
        with pytest.raises(ConfigurationError):
            schedules.thm22_power_batch(1.0, 1.0, 2, 100, 0.9, power)

    def test_eta_decreases_with_smaller_alpha(self):
        """Larger beta (smaller alpha) shrinks eta"""
        etas = [schedules.thm22_big_batch(1.0, 1.0, 2, 100, b).eta for b in (0.0, 0.5, 0.9)]
        assert etas[0] > etas[1] > etas[2]


class TestThm31:
    """Test the spectral-descent step-size cap"""

    def test_reference_values(self):
        """L = 1, beta = 0.25 gives 1/8; beta = 0.1, L = 2 gives 1/8 as well"""
        assert schedules.thm31_eta_cap(1.0, 0.25).eta == pytest.approx(0.125)
        assert schedules.thm31_eta_cap(2.0, 0.1).eta == pytest.approx(0.125)

    @pytest.mark.parametrize("beta", [0.0, 0.5, 0.7])
    def test_invalid_beta(self, beta):
        """beta = 0 and beta >= 1/2 are reported invalid with a reason"""
        p = schedules.thm31_eta_cap(1.0, beta)
        assert not p.valid
        assert p.eta == 0.0
        assert p.reason

    def test_beta_out_of_range(self):
        """beta outside [0, 1) and nonpositive L are errors"""
        with pytest.raises(ConfigurationError):
            schedules.thm31_eta_cap(1.0, 1.0)
        with pytest.raises(ConfigurationError):
            schedules.thm31_eta_cap(0.0, 0.25)

    def test_cap_decreases_in_beta(self):
        """The cap shrinks as beta grows toward 1/2"""
        caps = [schedules.thm31_eta_cap(1.0, b).eta for b in (0.05, 0.1, 0.25, 0.4, 0.49)]
        assert all(a > b for a, b in zip(caps, caps[1:]))

    def test_fraction(self):
        """thm31_schedule scales the cap; invalid inputs pass through"""
        assert schedules.thm31_schedule(1.0, 0.25, 10, 0.5).eta == pytest.approx(0.0625)
        assert schedules.thm31_schedule(1.0, 0.25, 10, 0.5).batch == 10
        assert not schedules.thm31_schedule(1.0, 0.6).valid
        with pytest.raises(ConfigurationError):
            schedules.thm31_schedule(1.0, 0.25, eta_fraction=1.5)

    def test_constants(self):
        """gamma = 1 at beta = 1/4; K and C positive below the cap"""
        eta = schedules.thm31_schedule(3.0, 0.25).eta
        consts = schedules.thm31_constants(3.0, 0.25, eta)
        assert consts["gamma"] == pytest.approx(1.0)
        assert consts["K"] > 0.0
        assert consts["C"] > 0.0
        assert consts["K"] < eta / 2

    def test_constants_rejected(self):
        """beta >= 1/2 or a huge eta leave no valid constants"""
        with pytest.raises(ConfigurationError):
            schedules.thm31_constants(1.0, 0.5, 0.01)
        with pytest.raises(ConfigurationError):
            schedules.thm31_constants(1.0, 0.25, 10.0)

    def test_rhs_noise_free_and_batch(self):
        """sigma = 0 leaves 2R/(KT); the variance part shrinks like 1/B"""
        eta = schedules.thm31_schedule(3.0, 0.25).eta
        k = schedules.thm31_constants(3.0, 0.25, eta)["K"]
        clean = schedules.thm31_explicit_rhs(1.0, 3.0, 0.0, 3, 1000, 0.25, eta, 1)
        assert clean == pytest.approx(2.0 / (k * 1000))
        small = schedules.thm31_explicit_rhs(1.0, 3.0, 1.0, 3, 1000, 0.25, eta, 10)
        large = schedules.thm31_explicit_rhs(1.0, 3.0, 1.0, 3, 1000, 0.25, eta, 1000)
        assert (small - clean) == pytest.approx(100.0 * (large - clean))


class TestProofHelpers:
    """Test the explicit thm22 expressions"""

    @pytest.mark.parametrize("beta", [0.0, 0.5, 0.9])
    def test_balance_point_round_trip(self, beta):
        """At the prescribed eta both deterministic terms equal the balance point"""
        R, L, n, T = 2.0, 3.0, 4, 500
        eta = schedules.thm22_big_batch(R, L, n, T, beta).eta
        terms = schedules.thm22_deterministic_terms(eta, R, L, n, T, beta)
        point = schedules.thm22_balance_point(R, L, n, T, beta)
        assert terms["initial_gap"] == pytest.approx(point, rel=1e-10)
        assert terms["step_length"] == pytest.approx(point, rel=1e-10)

    def test_explicit_sum_literal(self):
        """Hand-evaluated explicit sum"""
        eta, R, L, sigma, n, T, beta, batch = 0.01, 1.0, 2.0, 0.5, 3, 100, 0.5, 4
        expected = (
            4 * R / eta
            + 10 * sigma / ((1 - beta) * 2)
            + 10 * T * math.sqrt(1 - beta) * sigma / 2
            + 10 * T * eta * L / (1 - beta)
            + 2 * eta * n * L * T
        )
        got = schedules.thm22_explicit_sum(eta, R, L, sigma, n, T, beta, batch)
        assert got == pytest.approx(expected, rel=1e-14)
        corrected = schedules.thm22_explicit_sum(
            eta, R, L, sigma, n, T, beta, batch, sqrt_n_momentum_drift=True
        )
        drift = 10 * T * eta * L / (1 - beta)
        assert corrected - got == pytest.approx(drift * (math.sqrt(3) - 1))

    def test_closed_form_monotone_in_sigma(self):
        """More noise, larger batch-free bound"""
        values = [schedules.thm22_batch_free_closed_form(1.0, 1.0, s, 3, 1000) for s in (0, 1, 4)]
        assert values[0] < values[1] < values[2]

    def test_rate_terms(self):
        """Noise-free rate keeps only the deterministic term"""
        terms = schedules.thm22_rate_terms(1.0, 1.0, 0.0, 4, 100)
        assert terms["deterministic"] == pytest.approx(0.2)
        assert terms["variance"] == 0.0
        assert terms["noise_dominated"] == 0.0

    def test_schedule_for_dispatch(self):
        """Dispatch by theorem name and missing arguments"""
        free = schedules.schedule_for(Theorem.THM22_BATCH_FREE, 1.0, 1.0, 1.0, 2, 100)
        assert free.theorem is Theorem.THM22_BATCH_FREE
        power = schedules.schedule_for("thm22-power-batch", 1.0, 1.0, 1.0, 2, 100, 0.9, 0.5)
        assert power.batch == 10
        capped = schedules.schedule_for(Theorem.THM31, 1.0, 1.0, 0.0, 2, 100, beta=0.25)
        assert capped.eta == pytest.approx(0.0625)
        with pytest.raises(ConfigurationError):
            schedules.schedule_for(Theorem.THM22_BIG_BATCH, 1.0, 1.0, 1.0, 2, 100)
        with pytest.raises(ConfigurationError):
            schedules.schedule_for(Theorem.THM22_POWER_BATCH, 1.0, 1.0, 1.0, 2, 100, beta=0.5)
