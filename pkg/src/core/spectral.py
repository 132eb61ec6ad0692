"""
Dense spectral oracle: symmetric eigendecomposition, graph Fourier transform,
exact node-wise heat convolution and quadrature of the expansion coefficients.

Everything here costs O(N^3) or worse and exists to certify (and time against)
the polynomial path in ``src.core.kernel``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy import integrate, sparse
from scipy.special import eval_chebyt, eval_hermite, eval_laguerre

from src.core.errors import CapacityError, DimensionError, InputError, NumericalError
from src.core.kernel import Family, PolynomialBasis, ScaleVector
from src.core.specfun import log_factorial

logger = logging.getLogger(__name__)

DEFAULT_MAX_N = 2000
JACOBI_MAX_N = 256
SYMMETRY_TOLERANCE = 1e-12
HERMITE_HALF_WIDTH = 12.0
LAGUERRE_UPPER = 80.0
QUADRATURE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SpectralDecomposition:
    """Ascending eigenvalues and the matching orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def num_nodes(self) -> int:
        return int(self.eigenvalues.shape[0])


def _as_dense(lap: Union[np.ndarray, sparse.spmatrix]) -> np.ndarray:
    if sparse.issparse(lap):
        return np.asarray(lap.toarray(), dtype=np.float64)
    return np.array(lap, dtype=np.float64, copy=True)


def eigh(lap: Union[np.ndarray, sparse.spmatrix], max_n: int = DEFAULT_MAX_N, method: str = "auto") -> SpectralDecomposition:
    """
    Full eigendecomposition of a symmetric matrix.

    Args:
        lap: symmetric N x N matrix (dense or sparse)
        max_n: capacity cap
        method: "jacobi" (parallel cyclic Jacobi), "lapack" or "auto"
            (Jacobi up to JACOBI_MAX_N nodes, LAPACK above)

    Returns:
        eigenvalues ascending; each eigenvector's largest-magnitude entry positive

    Raises:
        CapacityError: N > max_n
        InputError: non-square or asymmetric input, unknown method
    """
    n = lap.shape[0]
    if lap.shape != (n, n):
        raise InputError(f"matrix must be square, got {lap.shape}")
    if n > max_n:
        raise CapacityError(f"dense eigendecomposition refused: N={n} exceeds the cap of {max_n}")
    dense = _as_dense(lap)
    asymmetry = float(np.max(np.abs(dense - dense.T))) if n else 0.0
    if asymmetry > SYMMETRY_TOLERANCE:
        raise InputError(f"matrix is not symmetric (max |A - A^T| = {asymmetry:.3e})")

    if method == "auto":
        method = "jacobi" if n <= JACOBI_MAX_N else "lapack"
    if method == "jacobi":
        values, vectors = _jacobi_eigh(dense)
    elif method == "lapack":
        values, vectors = np.linalg.eigh(dense)
    else:
        raise InputError(f"unknown eigensolver method '{method}'")

    order = np.argsort(values, kind="stable")
    values, vectors = values[order], vectors[:, order]
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.where(vectors[pivots, np.arange(n)] < 0.0, -1.0, 1.0)
    vectors = vectors * signs
    logger.debug("eigendecomposition of N=%d via %s", n, method)
    return SpectralDecomposition(eigenvalues=values, eigenvectors=vectors)


def _round_robin(n: int) -> list:
    """Rounds of disjoint index pairs covering every pair once (circle method)."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        rounds.append((np.array([p for p, _ in pairs], dtype=np.int64), np.array([q for _, q in pairs], dtype=np.int64)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi_eigh(a: np.ndarray, max_sweeps: int = 100, tolerance: float = 1e-12) -> Tuple[np.ndarray, np.ndarray]:
    n = a.shape[0]
    vectors = np.eye(n)
    if n < 2:
        return np.diag(a).copy(), vectors

    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), vectors
    rounds = _round_robin(n)

    for sweep in range(max_sweeps):
        off = math.sqrt(max(float(np.sum(a * a) - np.sum(np.diag(a) ** 2)), 0.0))
        if off < tolerance * scale:
            logger.debug("Jacobi converged after %d sweeps", sweep)
            return np.diag(a).copy(), vectors
        for p, q in rounds:
            apq = a[p, q]
            rotate = np.abs(apq) > 1e-300
            if not np.any(rotate):
                continue
            p, q, apq = p[rotate], q[rotate], apq[rotate]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            col_p, col_q = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * col_p - s * col_q
            a[:, q] = s * col_p + c * col_q
            row_p, row_q = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * row_p - s[:, None] * row_q
            a[q, :] = s[:, None] * row_p + c[:, None] * row_q
            a[p, q] = 0.0
            a[q, p] = 0.0

            vec_p, vec_q = vectors[:, p].copy(), vectors[:, q].copy()
            vectors[:, p] = c * vec_p - s * vec_q
            vectors[:, q] = s * vec_p + c * vec_q

    raise NumericalError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps (N={n})")


def graph_fourier(dec: SpectralDecomposition, x: np.ndarray) -> np.ndarray:
    """x_hat = U^T x."""
    dense = np.asarray(x, dtype=np.float64)
    if dense.shape[0] != dec.num_nodes:
        raise DimensionError(f"signal has {dense.shape[0]} rows, decomposition has {dec.num_nodes}")
    return dec.eigenvectors.T @ dense


def inverse_graph_fourier(dec: SpectralDecomposition, x_hat: np.ndarray) -> np.ndarray:
    dense = np.asarray(x_hat, dtype=np.float64)
    if dense.shape[0] != dec.num_nodes:
        raise DimensionError(f"spectrum has {dense.shape[0]} rows, decomposition has {dec.num_nodes}")
    return dec.eigenvectors @ dense


def _scale_values(scales: Union[ScaleVector, np.ndarray], n: int) -> np.ndarray:
    values = scales.values if isinstance(scales, ScaleVector) else np.asarray(scales, dtype=np.float64)
    if values.shape != (n,):
        raise DimensionError(f"expected {n} scales, got shape {values.shape}")
    return values


def exact_kernel_rows(dec: SpectralDecomposition, scales: Union[ScaleVector, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """
    (K, dK) with K[p, i] = e^{-s_p lambda_i} u_i(p) and dK = dK/ds_p.

    Row p of K @ (U^T x) is node p filtered with its own scale.
    """
    values = _scale_values(scales, dec.num_nodes)
    decay = np.exp(-np.outer(values, dec.eigenvalues))
    rows = decay * dec.eigenvectors
    return rows, -dec.eigenvalues[None, :] * rows


def exact_heat_conv(dec: SpectralDecomposition, x: np.ndarray, scales: Union[ScaleVector, np.ndarray]) -> np.ndarray:
    """Row p = sum_i e^{-s_p lambda_i} u_i(p) (U^T x)(i, :)."""
    rows, _ = exact_kernel_rows(dec, scales)
    return rows @ graph_fourier(dec, x)


def _chebyshev_integral(s: float, n: int, b: float) -> Tuple[float, float]:
    # lambda = b (t + 1) / 2 maps t in [-1, 1] onto [0, b]; the weight (1-t^2)^{-1/2}
    # is handled by QUADPACK's algebraic-singularity rule.
    def integrand(t: float) -> float:
        return math.exp(-s * b * (t + 1.0) / 2.0) * eval_chebyt(n, t)

    value, error = _quad(integrand, -1.0, 1.0, weight="alg", wvar=(-0.5, -0.5))
    norm = (1.0 if n == 0 else 2.0) / math.pi
    return value * norm, error * norm


def _hermite_integral(s: float, n: int) -> Tuple[float, float]:
    def integrand(lam: float) -> float:
        return math.exp(-s * lam - lam * lam) * eval_hermite(n, lam)

    value, error = _quad(integrand, -HERMITE_HALF_WIDTH, HERMITE_HALF_WIDTH)
    norm = math.exp(-(n * math.log(2.0) + log_factorial(n) + 0.5 * math.log(math.pi)))
    return value * norm, error * norm


def _laguerre_integral(s: float, n: int) -> Tuple[float, float]:
    def integrand(lam: float) -> float:
        return math.exp(-(s + 1.0) * lam) * eval_laguerre(n, lam)

    return _quad(integrand, 0.0, LAGUERRE_UPPER)


def _quad(func, lower: float, upper: float, **kwargs) -> Tuple[float, float]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, error = integrate.quad(func, lower, upper, epsabs=1e-13, epsrel=1e-12, limit=500, **kwargs)
    return float(value), float(error)


def coeff_quadrature(s: float, n: int, basis: PolynomialBasis) -> float:
    """
    c_{s,n} by adaptive Gauss-Kronrod quadrature of the orthogonality integral.

    Raises:
        InputError: s <= 0
        NumericalError: error estimate above QUADRATURE_TOLERANCE
    """
    if not s > 0.0:
        raise InputError(f"scale must be > 0, got {s}")
    if basis.family is Family.CHEBYSHEV:
        value, error = _chebyshev_integral(s, n, basis.b)
    elif basis.family is Family.HERMITE:
        value, error = _hermite_integral(s, n)
    else:
        value, error = _laguerre_integral(s, n)

    if not math.isfinite(value) or error > QUADRATURE_TOLERANCE:
        raise NumericalError(
            f"quadrature for {basis.family.value} s={s:g} n={n} did not converge (error estimate {error:.2e})"
        )
    return value
