"""
Module: Matrix core
Dense matrix helpers: norms, inner products, reduced SVD, polar factors

Every other module consumes matrices through these functions. A MatrixVar is a
read-only 2-D float64 numpy array whose entries are all finite.
"""
from dataclasses import dataclass
from numbers import Real
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from loguru import logger

from muon_bench_core.config import settings
from muon_bench_core.exceptions import (
    ConfigurationError,
    DimensionError,
    NonFiniteError,
    NumericalDivergenceError,
    RankZeroError,
)

MatrixVar = npt.NDArray[np.float64]
CoeffTriple = Tuple[float, float, float]
SeedLike = Union[int, Sequence[int], np.random.SeedSequence]

DEFAULT_RANK_TOL = 1e-12
CUBIC_COEFFS: CoeffTriple = (1.5, -0.5, 0.0)

# Spectral prescale inflates the power-iteration estimate so that singular
# values land in (0, 1] where the cubic map is monotone.
_SPECTRAL_PRESCALE_MARGIN = 1.02
_POWER_ITERATIONS = 20


@dataclass(frozen=True)
class SvdFactors:
    """
    Reduced SVD B = U diag(S) V^T truncated to the numerical rank

    :param U: m x r, orthonormal columns
    :param S: r singular values, nonincreasing, all above rank_tol * s_1
    :param V: n x r, orthonormal columns
    :param rank_tol: relative threshold used for truncation
    """
    U: MatrixVar
    S: npt.NDArray[np.float64]
    V: MatrixVar
    rank_tol: float

    @property
    def rank(self) -> int:
        return int(self.S.shape[0])

    def reconstruct(self) -> MatrixVar:
        return (self.U * self.S) @ self.V.T


def as_matrix(data: npt.ArrayLike) -> MatrixVar:
    """
    Validate and freeze a matrix

    :param data: anything numpy can turn into a 2-D real array
    :return: read-only float64 copy
    :raises DimensionError: not 2-D or an empty axis
    :raises NonFiniteError: NaN or Inf entries
    """
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("matrix contains NaN or Inf entries")
    arr.setflags(write=False)
    return arr


def _require_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")


def frobenius_inner(a: MatrixVar, b: MatrixVar) -> float:
    """
    Frobenius inner product tr(a^T b)

    :raises DimensionError: shapes differ
    """
    _require_same_shape(a, b)
    return float(np.vdot(a, b))


def frobenius_norm(a: MatrixVar) -> float:
    return float(np.linalg.norm(a, "fro"))


def singular_values(b: MatrixVar) -> npt.NDArray[np.float64]:
    """All singular values, nonincreasing, untruncated"""
    return np.linalg.svd(b, compute_uv=False)


def nuclear_norm(b: MatrixVar) -> float:
    """Sum of singular values (dual of the spectral norm)"""
    return float(np.sum(singular_values(b)))


def spectral_norm(b: MatrixVar) -> float:
    """Largest singular value; 0 for the zero matrix"""
    s = singular_values(b)
    return float(s[0]) if s.size else 0.0


def svd_reduced(b: MatrixVar, rank_tol: float = DEFAULT_RANK_TOL) -> SvdFactors:
    """
    Reduced SVD truncated at rank_tol * s_max

    :param b: matrix to factor
    :param rank_tol: relative truncation threshold in [0, 1)
    :return: SvdFactors with r >= 1
    :raises RankZeroError: b is zero or nothing survives the threshold
    """
    if not 0.0 <= rank_tol < 1.0:
        raise ConfigurationError(f"rank_tol must lie in [0, 1), got {rank_tol}")
    U, S, Vt = np.linalg.svd(b, full_matrices=False)
    if S.size == 0 or S[0] <= 0.0:
        raise RankZeroError("matrix is identically zero")
    keep = S > rank_tol * S[0]
    r = int(np.count_nonzero(keep))
    if r == 0:
        raise RankZeroError("no singular value above the rank threshold")
    return SvdFactors(U=U[:, :r], S=S[:r], V=Vt[:r].T, rank_tol=rank_tol)


def polar_factor(b: MatrixVar, rank_tol: float = DEFAULT_RANK_TOL) -> MatrixVar:
    """
    Polar factor O = U V^T of the truncated SVD

    For full-rank b with m >= n this is the semi-orthogonal matrix closest to b
    in Frobenius norm, and <O, b> equals the nuclear norm of b.

    :raises RankZeroError: propagated from svd_reduced
    """
    factors = svd_reduced(b, rank_tol)
    return factors.U @ factors.V.T


def numerical_rank(b: MatrixVar, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    try:
        return svd_reduced(b, rank_tol).rank
    except RankZeroError:
        return 0


def spectral_norm_estimate(b: MatrixVar, iters: int = _POWER_ITERATIONS) -> float:
    """
    Power-iteration estimate of the largest singular value

    Runs on b^T b from a fixed all-ones start so results are deterministic.
    """
    n = b.shape[1]
    v = np.full(n, 1.0 / np.sqrt(n))
    estimate = 0.0
    for _ in range(iters):
        w = b.T @ (b @ v)
        w_norm = np.linalg.norm(w)
        if w_norm == 0.0:
            break
        v = w / w_norm
        estimate = float(np.linalg.norm(b @ v))
    return estimate


def _expand_coeffs(
    coeffs: Optional[Union[CoeffTriple, Sequence[CoeffTriple]]], iters: int
) -> Sequence[CoeffTriple]:
    if coeffs is None:
        return [CUBIC_COEFFS] * iters
    if len(coeffs) == 3 and all(isinstance(c, Real) for c in coeffs):
        return [tuple(float(c) for c in coeffs)] * iters  # type: ignore[list-item]
    schedule = [tuple(float(c) for c in triple) for triple in coeffs]  # type: ignore[union-attr]
    if len(schedule) != iters or any(len(triple) != 3 for triple in schedule):
        raise ConfigurationError(
            f"expected one (a, b, c) triple or {iters} triples, got {len(schedule)}"
        )
    return schedule  # type: ignore[return-value]


def newton_schulz_orthogonalize(
    b: MatrixVar,
    iters: int = 5,
    coeffs: Optional[Union[CoeffTriple, Sequence[CoeffTriple]]] = None,
    prescale: str = "frobenius",
    divergence_threshold: Optional[float] = None,
) -> MatrixVar:
    """
    Approximate polar factor by the odd polynomial iteration
    X <- a X + b (X X^T) X + c (X X^T)^2 X

    :param b: nonzero matrix
    :param iters: number of iterations
    :param coeffs: one (a, b, c) triple for every iteration, or a triple per iteration;
        defaults to the cubic (1.5, -0.5, 0)
    :param prescale: "frobenius" divides by ||b||_F; "spectral" divides by a
        power-iteration estimate of ||b||_2 (capped by ||b||_F)
    :param divergence_threshold: abort when ||X||_F exceeds this value
    :return: approximate U V^T, same shape as b
    :raises RankZeroError: b is zero
    :raises NumericalDivergenceError: iterate norm exploded
    """
    if iters < 1:
        raise ConfigurationError("iters must be positive")
    schedule = _expand_coeffs(coeffs, iters)
    threshold = divergence_threshold or settings.ns_divergence_threshold

    norm_f = frobenius_norm(b)
    if norm_f == 0.0:
        raise RankZeroError("cannot orthogonalize the zero matrix")

    if prescale == "frobenius":
        scale = norm_f
    elif prescale == "spectral":
        estimate = spectral_norm_estimate(b)
        scale = min(norm_f, _SPECTRAL_PRESCALE_MARGIN * estimate) if estimate > 0 else norm_f
    else:
        raise ConfigurationError(f"unknown prescale {prescale!r}")

    transposed = b.shape[0] < b.shape[1]
    X = (b.T if transposed else b) / scale
    for k, (ca, cb, cc) in enumerate(schedule):
        gram = X.T @ X
        X = ca * X + X @ (cb * gram + cc * (gram @ gram))
        x_norm = frobenius_norm(X)
        if not np.isfinite(x_norm) or x_norm > threshold:
            raise NumericalDivergenceError(
                f"Newton-Schulz iterate norm {x_norm:.3g} exceeded {threshold:.3g} "
                f"at iteration {k + 1}"
            )
    result = X.T if transposed else X
    logger.debug("Newton-Schulz finished {} iterations on {} matrix", iters, b.shape)
    return np.ascontiguousarray(result)


def haar_semi_orthogonal_stack(
    m: int, n: int, count: int, rng: np.random.Generator
) -> npt.NDArray[np.float64]:
    """
    Draw count Haar-distributed m x n matrices with orthonormal columns

    QR of Gaussian matrices with the sign of diag(R) folded into Q.

    :return: array of shape (count, m, n)
    """
    if m < n:
        raise DimensionError(f"semi-orthogonal sampling needs m >= n, got {m}x{n}")
    Z = rng.standard_normal((count, m, n))
    Q, R = np.linalg.qr(Z)
    signs = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    signs[signs == 0.0] = 1.0
    return Q * signs[:, None, :]


def random_semi_orthogonal(m: int, n: int, seed: SeedLike) -> MatrixVar:
    """
    Haar-random m x n matrix with orthonormal columns

    :param seed: anything np.random.default_rng accepts; same seed, same matrix
    """
    rng = np.random.default_rng(seed)
    return as_matrix(haar_semi_orthogonal_stack(m, n, 1, rng)[0])


def random_well_conditioned(
    m: int, n: int, condition: float, rng: np.random.Generator
) -> MatrixVar:
    """
    Random m x n matrix with singular values log-uniform in [1, condition]

    Used to feed orthogonalizer comparisons with a controlled spread.
    """
    if condition < 1.0:
        raise ConfigurationError("condition number must be >= 1")
    k = min(m, n)
    U = haar_semi_orthogonal_stack(m, k, 1, rng)[0]
    V = haar_semi_orthogonal_stack(n, k, 1, rng)[0]
    s = np.exp(rng.uniform(0.0, np.log(condition), size=k))
    s[0] = 1.0
    if k > 1:
        s[-1] = condition
    return as_matrix((U * s) @ V.T)
