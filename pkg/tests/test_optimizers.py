"""
Tests for the update rules and the trial loop
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from muon_bench_core.exceptions import (
    ConfigurationError,
    DimensionError,
    DivergedError,
    NonFiniteError,
)
from muon_bench_core.models.enums import NoiseModel, Orthogonalizer, UpdateRule
from muon_bench_core.modules import optimizers
from muon_bench_core.modules.matrix_core import (
    frobenius_inner,
    frobenius_norm,
    nuclear_norm,
    polar_factor,
    random_semi_orthogonal,
    spectral_norm,
)
from muon_bench_core.modules.optimizers import init_state
from muon_bench_core.modules.problems import NoisyQuadratic, exact_gradient


def _quadratic(sigma=0.0, seed=7):
    return NoisyQuadratic((4, 3), spectrum=[1.0, 0.8, 0.6, 0.5], sigma=sigma, seed_base=seed)


class TestInitState:
    """Test state construction and hyperparameter validation"""

    def test_fresh_state(self):
        """Zero momentum and t = 0"""
        state = init_state(UpdateRule.MUON_HEAVY_BALL, (4, 3), 0.9, 0.01, batch_size=8)
        assert state.step_count == 0
        assert state.shape == (4, 3)
        assert not np.any(state.momentum)
        assert state.batch_size == 8

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"beta": 1.0},
            {"beta": -0.1},
            {"eta_schedule": 0.0},
            {"eta_schedule": [0.1, -0.1]},
            {"eta_schedule": []},
            {"batch_size": 0},
            {"shape": (0, 3)},
            {"rank_tol": 1.0},
        ],
    )
    def test_rejected(self, kwargs):
        """Invalid hyperparameters are configuration errors"""
        args = {
            "rule": UpdateRule.MUON_HEAVY_BALL,
            "shape": (4, 3),
            "beta": 0.9,
            "eta_schedule": 0.01,
        }
        args.update(kwargs)
        with pytest.raises(ConfigurationError):
            init_state(**args)

    def test_eta_schedule(self):
        """Per-step eta sequences are indexed from step 1"""
        state = init_state(UpdateRule.MUON_SUM, (2, 2), 0.5, [0.3, 0.2, 0.1])
        assert state.eta_at(1) == 0.3
        assert state.eta_at(3) == 0.1
        with pytest.raises(ConfigurationError):
            state.eta_at(4)


class TestAccumulateMomentum:
    """Test heavy-ball and sum-form momentum"""

    def setup_method(self):
        self.g = np.array([[1.0, -2.0], [0.5, 3.0]])

    def test_heavy_ball_zero_init(self):
        """B_1 = 0.5 G, then B_2 = 0.75 G"""
        state = init_state(UpdateRule.MUON_HEAVY_BALL, (2, 2), 0.5, 0.1, init_first_full=False)
        assert_allclose(optimizers.accumulate_momentum(state, self.g), 0.5 * self.g)
        assert_allclose(optimizers.accumulate_momentum(state, self.g), 0.75 * self.g)

    def test_heavy_ball_first_full(self):
        """B_1 = G by default"""
        state = init_state(UpdateRule.MUON_HEAVY_BALL, (2, 2), 0.5, 0.1)
        assert_allclose(optimizers.accumulate_momentum(state, self.g), self.g)
        assert_allclose(optimizers.accumulate_momentum(state, 3.0 * self.g), 2.0 * self.g)

    def test_sum_form(self):
        """B_1 = G, B_2 = mu G + G"""
        state = init_state(UpdateRule.MUON_SUM, (2, 2), 0.95, 0.1)
        assert_allclose(optimizers.accumulate_momentum(state, self.g), self.g)
        assert_allclose(optimizers.accumulate_momentum(state, self.g), 1.95 * self.g)

    def test_geometric_sum(self):
        """Zero-initialized heavy ball equals (1 - beta) sum beta^k G_{t-k}"""
        rng = np.random.default_rng(3)
        beta = 0.8
        grads = [rng.standard_normal((3, 2)) for _ in range(12)]
        state = init_state(UpdateRule.MUON_HEAVY_BALL, (3, 2), beta, 0.1, init_first_full=False)
        for g in grads:
            buffer = optimizers.accumulate_momentum(state, g)
        expected = (1 - beta) * sum(beta**k * g for k, g in enumerate(reversed(grads)))
        assert_allclose(buffer, expected, atol=1e-12)

    def test_input_errors(self):
        """Wrong shape and non-finite gradients"""
        state = init_state(UpdateRule.MUON_HEAVY_BALL, (2, 2), 0.5, 0.1)
        with pytest.raises(DimensionError):
            optimizers.accumulate_momentum(state, np.ones((3, 2)))
        with pytest.raises(NonFiniteError):
            optimizers.accumulate_momentum(state, np.array([[np.nan, 0.0], [0.0, 1.0]]))


class TestMuonStep:
    """Test one Muon step"""

    def test_positive_diagonal(self):
        """g = diag(3, 4), eta = 0.1 moves x by -0.1 I"""
        state = init_state(UpdateRule.MUON_HEAVY_BALL, (2, 2), 0.0, 0.1)
        x = np.zeros((2, 2))
        out = optimizers.muon_step(state, x, np.diag([3.0, 4.0]))
        assert_allclose(out.new_x, -0.1 * np.eye(2), atol=1e-15)
        assert out.rank == 2
        assert out.nuclear_norm_momentum == pytest.approx(7.0)
        assert not out.skipped
        assert state.step_count == 1

    @pytest.mark.parametrize("beta", [0.0, 0.3, 0.9, 0.99])
    def test_first_step_beta_independent(self, beta):
        """Polar scale invariance makes the first direction independent of beta"""
        g = np.random.default_rng(1).standard_normal((4, 3))
        for first_full in (True, False):
            state = init_state(
                UpdateRule.MUON_HEAVY_BALL, (4, 3), beta, 0.1, init_first_full=first_full
            )
            out = optimizers.muon_step(state, np.zeros((4, 3)), g)
            assert_allclose(out.direction, polar_factor(g), atol=1e-12)

    def test_zero_gradient_skips(self):
        """Rank-zero momentum leaves x unchanged"""
        state = init_state(UpdateRule.MUON_HEAVY_BALL, (2, 3), 0.5, 0.1)
        x = np.ones((2, 3))
        out = optimizers.muon_step(state, x, np.zeros((2, 3)))
        assert out.skipped
        assert out.rank == 0
        assert np.array_equal(out.new_x, x)
        assert state.step_count == 1

    def test_direction_norms(self):
        """||O||_F^2 = rank and ||O||_2 = 1"""
        g = np.random.default_rng(2).standard_normal((5, 3))
        state = init_state(UpdateRule.MUON_SUM, (5, 3), 0.9, 0.05)
        out = optimizers.muon_step(state, np.zeros((5, 3)), g)
        assert frobenius_norm(out.direction) ** 2 == pytest.approx(out.rank)
        assert spectral_norm(out.direction) == pytest.approx(1.0)

    def test_single_column_is_normalized_momentum(self):
        """For n = 1 the polar factor is B / ||B||"""
        g = np.array([[3.0], [4.0]])
        state = init_state(UpdateRule.MUON_HEAVY_BALL, (2, 1), 0.5, 1.0)
        out = optimizers.muon_step(state, np.zeros((2, 1)), g)
        assert_allclose(out.direction, g / 5.0, atol=1e-15)

    def test_newton_schulz_direction(self):
        """NS direction on a well-conditioned gradient is close to the exact one"""
        g = np.diag([1.0, 1.5, 1.2])
        state = init_state(
            UpdateRule.MUON_HEAVY_BALL,
            (3, 3),
            0.5,
            0.1,
            orthogonalizer=Orthogonalizer.NEWTON_SCHULZ,
            ns_prescale="spectral",
        )
        out = optimizers.muon_step(state, np.zeros((3, 3)), g)
        assert frobenius_norm(out.direction - np.eye(3)) <= 1e-6
        assert out.rank == 3

    def test_wrong_rule(self):
        """muon_step refuses a spectral-descent state and vice versa"""
        sd = init_state(UpdateRule.SPECTRAL_DESCENT, (2, 2), 0.25, 0.1)
        with pytest.raises(ConfigurationError):
            optimizers.muon_step(sd, np.zeros((2, 2)), np.eye(2))
        mu = init_state(UpdateRule.MUON_HEAVY_BALL, (2, 2), 0.25, 0.1)
        with pytest.raises(ConfigurationError):
            optimizers.spectral_descent_step(mu, np.zeros((2, 2)), np.eye(2))


class TestSpectralDescentStep:
    """Test the spectral steepest-descent step"""

    def test_positive_diagonal(self):
        """B = diag(3, 4), eta = 0.1 gives Delta = -0.7 I and <Delta, B> = -4.9"""
        state = init_state(UpdateRule.SPECTRAL_DESCENT, (2, 2), 0.0, 0.1)
        out = optimizers.spectral_descent_step(state, np.zeros((2, 2)), np.diag([3.0, 4.0]))
        assert_allclose(out.direction, -0.7 * np.eye(2), atol=1e-14)
        assert frobenius_inner(out.direction, np.diag([3.0, 4.0])) == pytest.approx(-4.9)

    def test_semi_orthogonal_momentum(self):
        """Semi-orthogonal B gives Delta = -eta n B"""
        q = random_semi_orthogonal(5, 3, 17)
        state = init_state(UpdateRule.SPECTRAL_DESCENT, (5, 3), 0.0, 0.2)
        out = optimizers.spectral_descent_step(state, np.zeros((5, 3)), q)
        assert_allclose(out.direction, -0.2 * 3 * q, atol=1e-12)
        assert spectral_norm(out.direction) == pytest.approx(0.6)

    def test_identities_on_random_momentum(self):
        """<Delta, B> = -eta ||B||_*^2 and ||Delta||_2 = eta ||B||_*"""
        rng = np.random.default_rng(4)
        state = init_state(UpdateRule.SPECTRAL_DESCENT, (4, 3), 0.25, 0.05)
        x = np.zeros((4, 3))
        for _ in range(5):
            out = optimizers.spectral_descent_step(state, x, rng.standard_normal((4, 3)))
            b = out.momentum_after
            nuc = nuclear_norm(b)
            assert frobenius_inner(out.direction, b) == pytest.approx(-0.05 * nuc**2, rel=1e-10)
            assert spectral_norm(out.direction) == pytest.approx(0.05 * nuc, rel=1e-10)
            x = out.new_x

    def test_zero_momentum_skips(self):
        """B = 0 skips"""
        state = init_state(UpdateRule.SPECTRAL_DESCENT, (3, 2), 0.25, 0.1)
        out = optimizers.step(state, np.ones((3, 2)), np.zeros((3, 2)))
        assert out.skipped


class TestRunEpoch:
    """Test the trial loop"""

    def test_single_step_records_exact_gradient(self):
        """T = 1 on a noise-free problem"""
        problem = _quadratic()
        x0 = problem.initial_point(1.0, seed=0)
        state = init_state(UpdateRule.MUON_HEAVY_BALL, (4, 3), 0.9, 0.01)
        rows = optimizers.run_epoch(state, problem, x0, 1, seed=0)
        assert len(rows) == 1
        grad = exact_gradient(problem, x0)
        assert rows[0].grad_fro == frobenius_norm(grad)
        assert rows[0].grad_nuc == nuclear_norm(grad)
        assert rows[0].mom_err_fro == 0.0
        assert rows[0].f_val == pytest.approx(1.0, rel=1e-9)

    def test_same_seed_same_trace(self):
        """Trials are pure functions of their inputs"""
        problem = _quadratic(sigma=1.0)
        x0 = problem.initial_point(1.0, seed=0)
        runs = []
        for _ in range(2):
            state = init_state(UpdateRule.MUON_HEAVY_BALL, (4, 3), 0.9, 0.01)
            runs.append([row.as_row() for row in optimizers.run_epoch(state, problem, x0, 50, 3)])
        assert runs[0] == runs[1]
        state = init_state(UpdateRule.MUON_HEAVY_BALL, (4, 3), 0.9, 0.01)
        other = [row.as_row() for row in optimizers.run_epoch(state, problem, x0, 50, 4)]
        assert other != runs[0]

    def test_deterministic_descent(self):
        """With beta = 0 and sigma = 0, f drops whenever ||grad||_F > 2 eta n L"""
        problem = _quadratic()
        x0 = problem.initial_point(1.0, seed=0)
        eta = 0.01
        state = init_state(UpdateRule.MUON_HEAVY_BALL, (4, 3), 0.0, eta)
        rows = optimizers.run_epoch(state, problem, x0, 300, seed=0)
        threshold = 2 * eta * problem.n * problem.lipschitz_fro
        for cur, nxt in zip(rows, rows[1:]):
            if cur.grad_fro > threshold:
                assert nxt.f_val < cur.f_val

    def test_spectral_descent_monotone(self):
        """Exact-gradient spectral descent with eta = 1/L_dual never increases f"""
        problem = _quadratic()
        x0 = problem.initial_point(1.0, seed=0)
        state = init_state(UpdateRule.SPECTRAL_DESCENT, (4, 3), 0.0, 1.0 / problem.lipschitz_dual)
        rows = optimizers.run_epoch(state, problem, x0, 200, seed=0)
        for cur, nxt in zip(rows, rows[1:]):
            assert nxt.f_val <= cur.f_val + 1e-12

    def test_divergence(self):
        """Objective above the threshold aborts the trial"""
        problem = _quadratic()
        x0 = problem.initial_point(1.0, seed=0)
        state = init_state(UpdateRule.MUON_HEAVY_BALL, (4, 3), 0.9, 0.01)
        with pytest.raises(DivergedError) as info:
            optimizers.run_epoch(state, problem, x0, 10, seed=5, divergence_threshold=1e-3)
        assert info.value.step == 1
        assert info.value.seed == 5

    def test_observer_and_errors(self):
        """Observer sees every step; T = 0 and mismatched shapes are refused"""
        problem = NoisyQuadratic((3, 2), sigma=0.5, noise_model=NoiseModel.GAUSSIAN_ADDITIVE)
        x0 = problem.initial_point(1.0, seed=0)
        seen = []
        state = init_state(UpdateRule.SPECTRAL_DESCENT, (3, 2), 0.25, 0.01)
        optimizers.run_epoch(state, problem, x0, 7, seed=1, observer=seen.append)
        assert [ctx.trace.t for ctx in seen] == list(range(1, 8))
        with pytest.raises(ConfigurationError):
            optimizers.run_epoch(state, problem, x0, 0, seed=1)
        wrong = init_state(UpdateRule.SPECTRAL_DESCENT, (2, 3), 0.25, 0.01)
        with pytest.raises(DimensionError):
            optimizers.run_epoch(wrong, problem, x0, 3, seed=1)
