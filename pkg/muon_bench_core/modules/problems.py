"""
Module: Problems
Synthetic stochastic objectives with certified constants

Every problem exposes f, its exact gradient, a seeded stochastic-gradient oracle
and the constants the convergence bounds need: L in Frobenius and in
spectral/nuclear sense, f*, and the noise variance in both norms.
"""
import copy
from abc import ABC, abstractmethod
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy.optimize import brentq, minimize
from scipy.special import expit

from muon_bench_core.exceptions import CertificationFailed, ConfigurationError, DimensionError
from muon_bench_core.models.enums import NoiseModel, ProblemKind
from muon_bench_core.models.run_config import ProblemConfig
from muon_bench_core.models.trace import CertificationReport
from muon_bench_core.modules.matrix_core import (
    MatrixVar,
    SeedLike,
    as_matrix,
    frobenius_inner,
    frobenius_norm,
    nuclear_norm,
    spectral_norm,
)

LIPSCHITZ_SLACK = 1e-9
DECLARED_CONSTANTS = ("lipschitz_fro", "lipschitz_dual", "f_star", "sigma_sq_fro", "sigma_sq_nuc")
VARIANCE_SE_ALLOWANCE = 4.0


def _entropy(seed_base: int, seed: SeedLike) -> list:
    if isinstance(seed, np.random.SeedSequence):
        return [seed_base, *np.atleast_1d(seed.entropy).tolist()]
    if isinstance(seed, (int, np.integer)):
        return [seed_base, int(seed)]
    return [seed_base, *(int(s) for s in seed)]


class ProblemSpec(ABC):
    """
    Base class for stochastic objectives f(X) = E[F(X, xi)]

    Subclasses implement the deterministic part; noise is added here according
    to noise_model.
    """

    kind: ProblemKind

    def __init__(
        self,
        shape: Tuple[int, int],
        sigma: float,
        noise_model: NoiseModel,
        seed_base: int,
    ):
        m, n = shape
        if m < 1 or n < 1:
            raise ConfigurationError(f"problem shape must be positive, got {shape}")
        if sigma < 0.0:
            raise ConfigurationError("sigma must be nonnegative")
        self.shape: Tuple[int, int] = (int(m), int(n))
        self.noise_model = NoiseModel(noise_model)
        self.seed_base = int(seed_base)
        noisy = self.noise_model is NoiseModel.GAUSSIAN_ADDITIVE
        self.sigma_sq_fro: float = float(sigma) ** 2 if noisy else 0.0
        # safe by ||A||_*^2 <= n ||A||_F^2
        self.sigma_sq_nuc: float = self.shape[1] * self.sigma_sq_fro
        self.lipschitz_fro: float = 0.0
        self.lipschitz_dual: float = 0.0
        self.f_star: float = 0.0
        self.x_star: MatrixVar = np.zeros(self.shape)

    @property
    def n(self) -> int:
        return self.shape[1]

    @abstractmethod
    def objective(self, x: MatrixVar) -> float:
        """f(X)"""

    @abstractmethod
    def gradient(self, x: MatrixVar) -> MatrixVar:
        """grad f(X)"""

    def noise(self, batch: int, rng: np.random.Generator) -> MatrixVar:
        """
        Batch-averaged noise with E||noise||_F^2 = sigma^2 / batch

        The average of `batch` i.i.d. Gaussian draws is drawn directly as one
        Gaussian of the averaged variance.
        """
        if self.noise_model is NoiseModel.NONE or self.sigma_sq_fro == 0.0:
            return np.zeros(self.shape)
        m, n = self.shape
        std = np.sqrt(self.sigma_sq_fro / (m * n * batch))
        return std * rng.standard_normal(self.shape)

    def with_constants(self, **overrides: float) -> "ProblemSpec":
        """Copy of the problem declaring different constants"""
        clone = copy.copy(self)
        for name, value in overrides.items():
            if name not in DECLARED_CONSTANTS:
                raise ConfigurationError(f"{name} is not a declared constant")
            setattr(clone, name, float(value))
        return clone

    def initial_point(self, r_target: float, seed: SeedLike) -> MatrixVar:
        """
        X_1 on a seeded Gaussian ray from x_star with f(X_1) - f* = r_target

        :param r_target: desired initial gap R > 0
        """
        if r_target <= 0.0:
            raise ConfigurationError("r_target must be positive")
        rng = np.random.default_rng(_entropy(self.seed_base, seed))
        direction = rng.standard_normal(self.shape)

        def gap(c: float) -> float:
            return self.objective(self.x_star + c * direction) - self.f_star - r_target

        hi = 1.0
        while gap(hi) < 0.0:
            hi *= 2.0
            if hi > 1e12:
                raise ConfigurationError(f"cannot reach R={r_target} along the sampled ray")
        c = brentq(gap, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return as_matrix(self.x_star + c * direction)

    def describe(self) -> dict:
        return {
            "kind": self.kind.value,
            "m": self.shape[0],
            "n": self.shape[1],
            "lipschitz_fro": self.lipschitz_fro,
            "lipschitz_dual": self.lipschitz_dual,
            "f_star": self.f_star,
            "sigma_sq_fro": self.sigma_sq_fro,
            "sigma_sq_nuc": self.sigma_sq_nuc,
            "noise_model": self.noise_model.value,
        }


class NoisyQuadratic(ProblemSpec):
    """
    f(X) = 1/2 ||A (X - X*)||_F^2 with A = diag(spectrum), optionally rotated

    L_fro = max(spectrum)^2, f* = 0.
    """

    kind = ProblemKind.NOISY_QUADRATIC

    def __init__(
        self,
        shape: Tuple[int, int],
        spectrum: Optional[Sequence[float]] = None,
        sigma: float = 0.0,
        noise_model: NoiseModel = NoiseModel.GAUSSIAN_ADDITIVE,
        seed_base: int = 0,
        rotate: bool = False,
        x_star: Optional[MatrixVar] = None,
    ):
        super().__init__(shape, sigma, noise_model, seed_base)
        m, n = self.shape
        s = np.linspace(1.0, 0.5, m) if spectrum is None else np.asarray(spectrum, dtype=float)
        if s.shape != (m,):
            raise DimensionError(f"spectrum needs {m} entries, got {s.shape}")
        if np.any(s < 0.0):
            raise ConfigurationError("spectrum entries must be nonnegative")
        rng = np.random.default_rng([self.seed_base, 0xA])
        if rotate:
            Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
            self.A = (Q * s) @ Q.T
        else:
            self.A = np.diag(s)
        self.H = self.A.T @ self.A
        self.x_star = as_matrix(rng.standard_normal((m, n)) if x_star is None else x_star)
        self.lipschitz_fro = float(np.max(s) ** 2)
        self.lipschitz_dual = n * self.lipschitz_fro
        self.f_star = 0.0

    def objective(self, x: MatrixVar) -> float:
        r = self.A @ (x - self.x_star)
        return 0.5 * float(np.vdot(r, r))

    def gradient(self, x: MatrixVar) -> MatrixVar:
        return self.H @ (x - self.x_star)


class LeastSquares(ProblemSpec):
    """
    f(X) = 1/(2N) ||D X - Y||_F^2 on a seeded data set (D is N x m, Y is N x n)

    f* and X* come from a least-squares solve; L_fro = lambda_max(D^T D) / N.
    """

    kind = ProblemKind.LEAST_SQUARES

    def __init__(
        self,
        shape: Tuple[int, int],
        n_samples: int = 64,
        sigma: float = 0.0,
        noise_model: NoiseModel = NoiseModel.GAUSSIAN_ADDITIVE,
        seed_base: int = 0,
        label_noise: float = 0.1,
    ):
        super().__init__(shape, sigma, noise_model, seed_base)
        m, n = self.shape
        if n_samples < m:
            raise ConfigurationError("least squares needs at least m samples")
        rng = np.random.default_rng([self.seed_base, 0xB])
        self.D = rng.standard_normal((n_samples, m))
        x_true = rng.standard_normal((m, n))
        self.Y = self.D @ x_true + label_noise * rng.standard_normal((n_samples, n))
        self.n_samples = n_samples
        self.H = self.D.T @ self.D / n_samples
        solution, *_ = np.linalg.lstsq(self.D, self.Y, rcond=None)
        self.x_star = as_matrix(solution)
        self.f_star = self.objective(self.x_star)
        self.lipschitz_fro = float(np.linalg.eigvalsh(self.H)[-1])
        self.lipschitz_dual = n * self.lipschitz_fro

    def objective(self, x: MatrixVar) -> float:
        r = self.D @ x - self.Y
        return 0.5 * float(np.vdot(r, r)) / self.n_samples

    def gradient(self, x: MatrixVar) -> MatrixVar:
        return self.D.T @ (self.D @ x - self.Y) / self.n_samples


class LogisticMatrix(ProblemSpec):
    """
    Multi-output logistic regression with ridge term

    f(X) = 1/N sum_ij log(1 + exp(-Y_ij (D X)_ij)) + l2/2 ||X||_F^2, labels in {-1, 1}.
    f* is certified from below through strong convexity:
    f* >= f(X) - ||grad f(X)||_F^2 / (2 l2) at the L-BFGS solution.
    """

    kind = ProblemKind.LOGISTIC_MATRIX

    def __init__(
        self,
        shape: Tuple[int, int],
        n_samples: int = 64,
        l2: float = 1e-2,
        sigma: float = 0.0,
        noise_model: NoiseModel = NoiseModel.GAUSSIAN_ADDITIVE,
        seed_base: int = 0,
    ):
        super().__init__(shape, sigma, noise_model, seed_base)
        if l2 <= 0.0:
            raise ConfigurationError("logistic problem needs l2 > 0 to certify f*")
        m, n = self.shape
        rng = np.random.default_rng([self.seed_base, 0xC])
        self.D = rng.standard_normal((n_samples, m))
        w = rng.standard_normal((m, n))
        logits = self.D @ w + 0.5 * rng.standard_normal((n_samples, n))
        self.Y = np.where(logits >= 0.0, 1.0, -1.0)
        self.n_samples = n_samples
        self.l2 = float(l2)
        top = float(np.linalg.eigvalsh(self.D.T @ self.D)[-1])
        self.lipschitz_fro = top / (4 * n_samples) + self.l2
        self.lipschitz_dual = n * self.lipschitz_fro
        self._solve_optimum()

    def objective(self, x: MatrixVar) -> float:
        z = self.Y * (self.D @ x)
        return float(np.sum(np.logaddexp(0.0, -z))) / self.n_samples + 0.5 * self.l2 * float(
            np.vdot(x, x)
        )

    def gradient(self, x: MatrixVar) -> MatrixVar:
        z = self.Y * (self.D @ x)
        weights = -self.Y * expit(-z)
        return self.D.T @ weights / self.n_samples + self.l2 * x

    def _solve_optimum(self) -> None:
        shape = self.shape

        def fun(flat: np.ndarray) -> Tuple[float, np.ndarray]:
            x = flat.reshape(shape)
            return self.objective(x), self.gradient(x).ravel()

        result = minimize(
            fun,
            np.zeros(shape[0] * shape[1]),
            jac=True,
            method="L-BFGS-B",
            options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 10_000},
        )
        x_opt = result.x.reshape(shape)
        grad_sq = float(np.vdot(self.gradient(x_opt), self.gradient(x_opt)))
        self.x_star = as_matrix(x_opt)
        self.f_star = self.objective(x_opt) - grad_sq / (2.0 * self.l2)
        logger.debug(
            "Logistic optimum: f={:.12g}, ||grad||^2={:.3g}, iterations={}",
            self.objective(x_opt),
            grad_sq,
            result.nit,
        )


def build_problem(config: ProblemConfig) -> ProblemSpec:
    """
    Construct a problem from its validated config section

    :param config: ProblemConfig from a RunConfig
    :return: ProblemSpec subclass instance
    """
    shape = (config.shape[0], config.shape[1])
    if config.kind is ProblemKind.NOISY_QUADRATIC:
        return NoisyQuadratic(
            shape,
            spectrum=config.spectrum,
            sigma=config.sigma,
            noise_model=config.noise_model,
            seed_base=config.seed,
            rotate=config.rotate,
        )
    if config.kind is ProblemKind.LEAST_SQUARES:
        return LeastSquares(
            shape,
            n_samples=config.n_samples,
            sigma=config.sigma,
            noise_model=config.noise_model,
            seed_base=config.seed,
        )
    return LogisticMatrix(
        shape,
        n_samples=config.n_samples,
        l2=config.l2,
        sigma=config.sigma,
        noise_model=config.noise_model,
        seed_base=config.seed,
    )


def _check_shape(p: ProblemSpec, x: MatrixVar) -> None:
    if np.shape(x) != p.shape:
        raise DimensionError(f"x has shape {np.shape(x)}, problem expects {p.shape}")


def exact_gradient(p: ProblemSpec, x: MatrixVar) -> MatrixVar:
    """Analytic grad f(X)"""
    _check_shape(p, x)
    return p.gradient(x)


def objective_value(p: ProblemSpec, x: MatrixVar) -> float:
    """Analytic f(X)"""
    _check_shape(p, x)
    return p.objective(x)


def stochastic_gradient(
    p: ProblemSpec, x: MatrixVar, batch: int, seed: Union[int, Sequence[int]]
) -> MatrixVar:
    """
    Minibatch gradient G = grad f(X) + noise averaged over `batch` samples

    Deterministic in (problem seed, seed); the stream for seed s never overlaps
    the stream of another seed.
    """
    _check_shape(p, x)
    if batch < 1:
        raise ConfigurationError(f"batch must be >= 1, got {batch}")
    rng = np.random.default_rng(_entropy(p.seed_base, seed))
    return p.gradient(x) + p.noise(batch, rng)


def _sample_pair(
    p: ProblemSpec, rng: np.random.Generator
) -> Tuple[MatrixVar, MatrixVar]:
    m, n = p.shape
    radius = 10.0 ** rng.uniform(-2.0, 1.0)
    x = p.x_star + radius * rng.standard_normal((m, n))
    step = 10.0 ** rng.uniform(-3.0, 0.5)
    mode = rng.integers(3)
    if mode == 0:
        d = rng.standard_normal((m, n))
    elif mode == 1:
        d = np.outer(rng.standard_normal(m), rng.standard_normal(n))
    else:
        q, _ = np.linalg.qr(rng.standard_normal((max(m, n), min(m, n))))
        d = q if m >= n else q.T
    return x, x + step * d


def certify_constants(p: ProblemSpec, trials: int = 200, seed: int = 0) -> CertificationReport:
    """
    Sample pairs and noise draws to check every declared constant

    :param trials: number of (X, Y) pairs and noise draws, >= 100
    :return: CertificationReport with the worst observed values
    :raises CertificationFailed: a declared constant is contradicted
    """
    if trials < 100:
        raise ConfigurationError("certification needs at least 100 trials")
    rng = np.random.default_rng([p.seed_base, 0xCE, seed])

    max_fro = 0.0
    max_dual = 0.0
    min_gap = np.inf
    for _ in range(trials):
        x, y = _sample_pair(p, rng)
        diff_grad = p.gradient(x) - p.gradient(y)
        diff_x = x - y
        max_fro = max(max_fro, frobenius_norm(diff_grad) / frobenius_norm(diff_x))
        max_dual = max(max_dual, nuclear_norm(diff_grad) / spectral_norm(diff_x))
        min_gap = min(min_gap, p.objective(x) - p.f_star, p.objective(y) - p.f_star)

    noise_fro = np.empty(trials)
    noise_nuc = np.empty(trials)
    for i in range(trials):
        xi = p.noise(1, rng)
        noise_fro[i] = frobenius_norm(xi) ** 2
        noise_nuc[i] = nuclear_norm(xi) ** 2
    var_fro, var_nuc = float(noise_fro.mean()), float(noise_nuc.mean())
    se_fro = float(noise_fro.std(ddof=1) / np.sqrt(trials))
    se_nuc = float(noise_nuc.std(ddof=1) / np.sqrt(trials))

    if max_fro > p.lipschitz_fro + LIPSCHITZ_SLACK * max(1.0, p.lipschitz_fro):
        raise CertificationFailed("lipschitz_fro", p.lipschitz_fro, max_fro)
    if max_dual > p.lipschitz_dual + LIPSCHITZ_SLACK * max(1.0, p.lipschitz_dual):
        raise CertificationFailed("lipschitz_dual", p.lipschitz_dual, max_dual)
    if min_gap < -LIPSCHITZ_SLACK * max(1.0, abs(p.f_star)):
        raise CertificationFailed("f_star", p.f_star, p.f_star + min_gap)
    if var_fro - VARIANCE_SE_ALLOWANCE * se_fro > p.sigma_sq_fro + 1e-12:
        raise CertificationFailed("sigma_sq_fro", p.sigma_sq_fro, var_fro)
    if var_nuc - VARIANCE_SE_ALLOWANCE * se_nuc > p.sigma_sq_nuc + 1e-12:
        raise CertificationFailed("sigma_sq_nuc", p.sigma_sq_nuc, var_nuc)

    logger.info(
        "Certified {}: L_fro ratio {:.4g}/{:.4g}, L_dual ratio {:.4g}/{:.4g}",
        p.kind.value,
        max_fro,
        p.lipschitz_fro,
        max_dual,
        p.lipschitz_dual,
    )
    return CertificationReport(
        trials=trials,
        max_ratio_fro=max_fro,
        max_ratio_dual=max_dual,
        variance_fro=var_fro,
        variance_fro_se=se_fro,
        variance_nuc=var_nuc,
        variance_nuc_se=se_nuc,
        min_gap_to_f_star=float(min_gap),
    )


def check_descent_lemma(p: ProblemSpec, x: MatrixVar, y: MatrixVar, dual: bool = False) -> float:
    """
    Slack of f(Y) <= f(X) + <grad f(X), Y - X> + L/2 ||Y - X||^2

    :param dual: use the spectral norm with lipschitz_dual instead of Frobenius
    :return: rhs - lhs (nonnegative when the lemma holds)
    """
    d = y - x
    if dual:
        quad = 0.5 * p.lipschitz_dual * spectral_norm(d) ** 2
    else:
        quad = 0.5 * p.lipschitz_fro * frobenius_norm(d) ** 2
    rhs = p.objective(x) + frobenius_inner(p.gradient(x), d) + quad
    return rhs - p.objective(y)
