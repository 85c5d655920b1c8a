"""
Gaussian copula: correlation validation and repair, joint and conditional
sampling, fitting from pseudo-observations, and the closed-form
multivariate-normal law of a Gaussian copula with normal margins.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union
import logging

import numpy as np
from scipy import linalg, special
from scipy.stats import rankdata

from config import CONDITIONING_JITTER, RANK_CLAMP
from services.errors import ConditioningError, FitError, RangeError, ShapeError

logger = logging.getLogger(__name__)

_SYMMETRY_TOL = 1e-12
_PSD_TOL = 1e-10
_REPAIR_TOL = 1e-10
_REPAIR_MAX_ITER = 1000


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Unit-diagonal PSD matrix parameterizing a Gaussian copula."""

    matrix: np.ndarray
    repaired: bool = False

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def block(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        return self.matrix[np.ix_(list(rows), list(cols))]

    def submatrix(self, index: Sequence[int]) -> "CorrelationMatrix":
        return CorrelationMatrix(self.block(index, index).copy(), self.repaired)

    def allclose(self, other: "CorrelationMatrix", atol: float = 1e-8) -> bool:
        return self.dim == other.dim and bool(np.allclose(self.matrix, other.matrix, atol=atol))

    def to_list(self):
        return [[float(v) for v in row] for row in self.matrix]


@dataclass(frozen=True)
class ConditionalCopulaParams:
    """Gaussian conditional law of the target normal score given the others:
    eta | w ~ N(coefficients . w, residual_var)."""

    coefficients: np.ndarray
    residual_var: float


def spearman_to_pearson(rho_s):
    """Pearson correlation of the Gaussian copula with Spearman correlation rho_s."""
    rho = np.asarray(rho_s, dtype=float)
    if np.any(np.abs(rho) > 1.0) or np.any(np.isnan(rho)):
        raise RangeError("Spearman correlation must lie in [-1, 1]")
    out = 2.0 * np.sin(np.pi * rho / 6.0)
    out = np.clip(out, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def pearson_to_spearman(rho):
    """Inverse of spearman_to_pearson."""
    r = np.clip(np.asarray(rho, dtype=float), -1.0, 1.0)
    out = 6.0 / np.pi * np.arcsin(r / 2.0)
    return float(out) if out.ndim == 0 else out


def _is_psd_correlation(matrix: np.ndarray) -> bool:
    if not np.allclose(np.diag(matrix), 1.0, atol=_SYMMETRY_TOL):
        return False
    if np.any(np.abs(matrix) > 1.0 + _SYMMETRY_TOL):
        return False
    return bool(np.linalg.eigvalsh(matrix).min() >= -_PSD_TOL)


def _nearest_correlation(matrix: np.ndarray) -> np.ndarray:
    """Alternating projections with Dykstra's correction onto
    {PSD} and {unit diagonal}."""
    y = matrix.copy()
    delta_s = np.zeros_like(matrix)
    for iteration in range(_REPAIR_MAX_ITER):
        r = y - delta_s
        eigval, eigvec = np.linalg.eigh(r)
        x = (eigvec * np.maximum(eigval, 0.0)) @ eigvec.T
        x = (x + x.T) / 2.0
        delta_s = x - r
        y_next = x.copy()
        np.fill_diagonal(y_next, 1.0)
        change = np.linalg.norm(y_next - y, ord="fro")
        y = y_next
        if change < _REPAIR_TOL:
            break
    else:
        logger.warning(f"Correlation repair stopped after {_REPAIR_MAX_ITER} iterations")

    # final clip and rescale keeps PSD exactly and the diagonal at one
    eigval, eigvec = np.linalg.eigh(y)
    y = (eigvec * np.maximum(eigval, 0.0)) @ eigvec.T
    scale = 1.0 / np.sqrt(np.clip(np.diag(y), 1e-300, None))
    y = y * np.outer(scale, scale)
    y = (y + y.T) / 2.0
    np.fill_diagonal(y, 1.0)
    return np.clip(y, -1.0, 1.0)


def validate_correlation(matrix: Union[np.ndarray, Sequence[Sequence[float]], CorrelationMatrix]) -> CorrelationMatrix:
    """
    Check a correlation matrix and repair it when it is not PSD

    Args:
        matrix: Square, symmetric matrix

    Returns:
        CorrelationMatrix; ``repaired`` is True when projection was needed
    """
    if isinstance(matrix, CorrelationMatrix):
        matrix = matrix.matrix
    r = np.array(matrix, dtype=float)

    if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] == 0:
        raise ShapeError(f"correlation matrix must be square, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ShapeError("correlation matrix has non-finite entries")
    if np.max(np.abs(r - r.T)) > _SYMMETRY_TOL:
        raise ShapeError("correlation matrix must be symmetric")

    if _is_psd_correlation(r):
        np.fill_diagonal(r, 1.0)
        return CorrelationMatrix(r, repaired=False)

    repaired = _nearest_correlation(r)
    logger.warning(
        f"Repaired a non-PSD {r.shape[0]}x{r.shape[0]} correlation matrix "
        f"(min eigenvalue {np.linalg.eigvalsh(r).min():.3g})"
    )
    return CorrelationMatrix(repaired, repaired=True)


def correlation_from_spearman(spearman: Union[np.ndarray, Sequence[Sequence[float]]]) -> CorrelationMatrix:
    """Map an elementwise Spearman matrix to a validated Pearson correlation matrix."""
    s = np.array(spearman, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"Spearman matrix must be square, got shape {s.shape}")
    r = spearman_to_pearson(s)
    r = np.atleast_2d(r)
    np.fill_diagonal(r, 1.0)
    return validate_correlation(r)


def _factor(matrix: np.ndarray) -> np.ndarray:
    """Lower factor L with L L^T = matrix; eigen fallback for semidefinite input."""
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        eigval, eigvec = np.linalg.eigh(matrix)
        return eigvec * np.sqrt(np.maximum(eigval, 0.0))


def clamp_ranks(u):
    return np.clip(u, RANK_CLAMP, 1.0 - RANK_CLAMP)


def normal_scores(u) -> np.ndarray:
    """Phi^-1 of ranks after clamping away from 0 and 1."""
    return special.ndtri(clamp_ranks(np.asarray(u, dtype=float)))


def gauss_copula_normals(r: CorrelationMatrix, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n rows of w ~ MVN(0, R)."""
    if n < 1:
        raise RangeError("sample size must be at least 1")
    factor = _factor(r.matrix)
    return rng.standard_normal((n, r.dim)) @ factor.T


def gauss_copula_sample(r: CorrelationMatrix, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Sample ranks from a Gaussian copula

    Args:
        r: Copula correlation matrix
        n: Number of rows
        rng: Caller-owned generator

    Returns:
        n x dim matrix of ranks, each column marginally U(0, 1)
    """
    return clamp_ranks(special.ndtr(gauss_copula_normals(r, n, rng)))


def conditional_copula_params(r: CorrelationMatrix, target_index: int) -> ConditionalCopulaParams:
    """
    Coefficients and residual variance of the target normal score given the rest

    Args:
        r: Correlation matrix of dimension >= 2
        target_index: Row/column of the conditioned variable

    Returns:
        ConditionalCopulaParams with beta = R_ZZ^-1 R_ZY and residual 1 - R_YZ beta
    """
    if r.dim < 2:
        raise ShapeError("conditioning needs a correlation matrix of dimension >= 2")
    if not -r.dim <= target_index < r.dim:
        raise ShapeError(f"target index {target_index} out of range for dimension {r.dim}")
    target = target_index % r.dim
    others = [i for i in range(r.dim) if i != target]

    r_zz = r.block(others, others)
    r_zy = r.block(others, [target]).ravel()

    try:
        factor = linalg.cho_factor(r_zz, lower=True)
    except linalg.LinAlgError:
        logger.warning(f"Covariate block is near-singular; adding jitter {CONDITIONING_JITTER} to the diagonal")
        try:
            factor = linalg.cho_factor(r_zz + CONDITIONING_JITTER * np.eye(len(others)), lower=True)
        except linalg.LinAlgError as e:
            raise ConditioningError(f"covariate block could not be factorized: {e}") from e

    beta = linalg.cho_solve(factor, r_zy)
    residual = float(np.clip(1.0 - r_zy @ beta, 0.0, 1.0))
    return ConditionalCopulaParams(coefficients=beta, residual_var=residual)


def conditional_copula_sample(params: ConditionalCopulaParams, u_z, rng: np.random.Generator):
    """
    Sample target ranks given conditioning ranks

    Args:
        params: Conditional Gaussian parameters
        u_z: Conditioning ranks, shape (D,) for one row or (n, D)
        rng: Caller-owned generator

    Returns:
        One rank (float) for a single row, otherwise an array of n ranks
    """
    u = np.asarray(u_z, dtype=float)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    if u.shape[1] != len(params.coefficients):
        raise ShapeError(f"expected {len(params.coefficients)} conditioning ranks, got {u.shape[1]}")
    if np.any((u <= 0.0) | (u >= 1.0)) or np.any(np.isnan(u)):
        raise RangeError("conditioning ranks must lie strictly inside (0, 1)")

    mean = normal_scores(u) @ params.coefficients
    eta = mean + np.sqrt(params.residual_var) * rng.standard_normal(len(mean))
    out = clamp_ranks(special.ndtr(eta))
    return float(out[0]) if single else out


def fit_gauss_copula(pseudo_obs) -> CorrelationMatrix:
    """
    Fit a Gaussian copula from pseudo-observations

    Pairwise Spearman correlations are mapped with 2 sin(pi rho / 6) and the
    result is validated (and repaired if needed).
    """
    data = np.asarray(pseudo_obs, dtype=float)
    if data.ndim != 2:
        raise ShapeError(f"pseudo-observations must be an n x dim matrix, got shape {data.shape}")
    if data.shape[0] < 3:
        raise FitError("copula fit needs at least 3 rows")

    constant = [j for j in range(data.shape[1]) if np.ptp(data[:, j]) == 0.0]
    if constant:
        raise FitError(f"copula fit got constant column(s) {constant}")

    ranks = rankdata(data, axis=0)
    spearman = np.atleast_2d(np.corrcoef(ranks, rowvar=False))
    spearman = np.clip((spearman + spearman.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(spearman, 1.0)
    return correlation_from_spearman(spearman)


def mvn_oracle_params(means, sds, r: CorrelationMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """Exact law N(mu, S R S) of Gaussian-copula samples pushed through normal margins."""
    mu = np.asarray(means, dtype=float).ravel()
    sd = np.asarray(sds, dtype=float).ravel()
    if mu.shape != sd.shape or len(mu) != r.dim:
        raise ShapeError(f"means ({len(mu)}), sds ({len(sd)}) and R ({r.dim}) must agree")
    if np.any(sd <= 0.0):
        raise ShapeError("standard deviations must be positive")
    return mu, r.matrix * np.outer(sd, sd)


def rank_uniformity_condition_check(beta, alphas, mus, tol: float = 1e-12) -> Tuple[bool, bool]:
    """
    Whether an affine change of covariate normal scores (w -> alpha w + mu)
    keeps the target ranks uniform under a Gaussian conditional copula.

    Returns:
        (mean_ok, var_ok): sum beta_d mu_d == 0 and
        sum (alpha_d beta_d)^2 == sum beta_d^2
    """
    b = np.asarray(beta, dtype=float).ravel()
    a = np.asarray(alphas, dtype=float).ravel()
    m = np.asarray(mus, dtype=float).ravel()
    if not (b.shape == a.shape == m.shape):
        raise ShapeError("beta, alphas and mus must have equal lengths")

    mean_ok = abs(float(np.sum(b * m))) <= tol
    var_ok = abs(float(np.sum((a * b) ** 2) - np.sum(b ** 2))) <= tol
    return mean_ok, var_ok


def sample_pearson(u: np.ndarray, index: Optional[Sequence[int]] = None) -> np.ndarray:
    """Pearson correlation of the normal scores of rank columns."""
    w = normal_scores(u if index is None else u[:, list(index)])
    return np.corrcoef(w, rowvar=False)
