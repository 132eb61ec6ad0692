"""
Polynomial approximation of the heat kernel e^{-s lambda} on the normalized
Laplacian spectrum.

Three families are supported, each with closed-form expansion coefficients
c_{s,n} and scale derivatives dc_{s,n}/ds:

    Chebyshev   c_{s,n} = (2 - delta_n0) (-1)^n e^{-sb/2} I_n(sb/2)   on [0, b]
    Hermite     c_{s,n} = (-s/2)^n e^{s^2/4} / n!
    Laguerre    c_{s,n} = s^n / (s + 1)^{n+1}

Every family is written as one three-term recurrence in L:

    P_{n+1} = a_n (L P_n) + b_n P_n + g_n P_{n-1},   P_{-1} = 0,  P_0 = x

so the operator sum_n diag(c_n) P_n(L) x costs one sparse product per order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.errors import DimensionError, InputError, NumericalError
from src.core.graph import SparseMatrix, spmm
from src.core.specfun import bessel_ive_all, bessel_ive_derivatives, log_factorials

logger = logging.getLogger(__name__)

DEFAULT_S_MIN = 1e-3
DEFAULT_S_MAX = 10.0
_LOG_MAX_FLOAT = math.log(np.finfo(np.float64).max)


class Family(str, Enum):
    CHEBYSHEV = "chebyshev"
    HERMITE = "hermite"
    LAGUERRE = "laguerre"


DEFAULT_ORDERS = {Family.CHEBYSHEV: 20, Family.HERMITE: 30, Family.LAGUERRE: 20}


@dataclass(frozen=True)
class PolynomialBasis:
    """Polynomial family, truncation order m and (Chebyshev only) domain length b."""

    family: Family
    order: int
    b: float = 2.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        if int(self.order) < 0:
            raise InputError(f"order must be >= 0, got {self.order}")
        object.__setattr__(self, "order", int(self.order))
        if self.family is Family.CHEBYSHEV and not float(self.b) > 0.0:
            raise InputError(f"Chebyshev b must be > 0, got {self.b}")
        object.__setattr__(self, "b", float(self.b))

    @classmethod
    def of(cls, family: Union[str, Family], order: Optional[int] = None, b: float = 2.0) -> "PolynomialBasis":
        """Build a basis, falling back to the family's default order."""
        try:
            fam = Family(str(family.value if isinstance(family, Family) else family).lower())
        except ValueError as exc:
            raise InputError(f"unknown polynomial family '{family}'") from exc
        return cls(fam, DEFAULT_ORDERS[fam] if order is None else order, b)

    @property
    def size(self) -> int:
        return self.order + 1


@dataclass(frozen=True)
class ScaleVector:
    """Per-node diffusion scales, always inside [s_min, s_max]."""

    values: np.ndarray
    s_min: float = DEFAULT_S_MIN
    s_max: float = DEFAULT_S_MAX

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if not 0.0 < self.s_min <= self.s_max:
            raise InputError(f"scale bounds must satisfy 0 < s_min <= s_max, got [{self.s_min}, {self.s_max}]")
        if not np.all(np.isfinite(values)):
            raise NumericalError("scales must be finite")
        if np.any(values < self.s_min) or np.any(values > self.s_max):
            raise InputError(f"scales must lie in [{self.s_min}, {self.s_max}]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def uniform(cls, num_nodes: int, value: float, s_min: float = DEFAULT_S_MIN, s_max: float = DEFAULT_S_MAX) -> "ScaleVector":
        return cls(np.full(int(num_nodes), float(value)), s_min, s_max)

    def projected(self, values: np.ndarray) -> "ScaleVector":
        """New vector with ``values`` clipped into this vector's bounds."""
        return ScaleVector(np.clip(values, self.s_min, self.s_max), self.s_min, self.s_max)

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class CoefficientTable:
    """Row p holds c_{s_p,n} and dc_{s_p,n}/ds_p for n = 0..m."""

    coeffs: np.ndarray
    dcoeffs: np.ndarray
    basis: PolynomialBasis = field(compare=False)

    @property
    def num_nodes(self) -> int:
        return int(self.coeffs.shape[0])


def _as_scales(s: Union[float, np.ndarray]) -> np.ndarray:
    scales = np.atleast_1d(np.asarray(s, dtype=np.float64))
    if np.any(~(scales > 0.0)):
        raise InputError("scales must be > 0")
    return scales


def _alternating_signs(order: int) -> np.ndarray:
    return np.where(np.arange(order + 1) % 2 == 0, 1.0, -1.0)


def chebyshev_rows(s: np.ndarray, basis: PolynomialBasis) -> Tuple[np.ndarray, np.ndarray]:
    """Chebyshev coefficients and derivatives for a vector of scales."""
    scales = _as_scales(s)
    half = 0.5 * basis.b * scales
    scaled = np.atleast_2d(bessel_ive_all(basis.order, half))
    scaled_deriv = np.atleast_2d(bessel_ive_derivatives(scaled, half))

    weights = 2.0 * _alternating_signs(basis.order)
    weights[0] = 1.0
    coeffs = weights * scaled
    # d/ds [e^{-x} I_n(x)] with x = sb/2 is (b/2) e^{-x} (I_n'(x) - I_n(x))
    dcoeffs = weights * (0.5 * basis.b) * (scaled_deriv - scaled)
    return coeffs, dcoeffs


def hermite_rows(s: np.ndarray, basis: PolynomialBasis) -> Tuple[np.ndarray, np.ndarray]:
    """Hermite coefficients and derivatives, evaluated in log-magnitude form."""
    scales = _as_scales(s)
    orders = np.arange(basis.order + 1, dtype=np.float64)
    log_mag = (
        (scales**2 / 4.0)[:, None]
        + orders[None, :] * np.log(scales / 2.0)[:, None]
        - log_factorials(basis.order)[None, :]
    )
    # dc/ds = c * (s/2 + n/s)
    factor = (scales / 2.0)[:, None] + orders[None, :] / scales[:, None]
    log_deriv = log_mag + np.log(factor)
    worst = float(np.max(np.maximum(log_mag, log_deriv)))
    if worst >= _LOG_MAX_FLOAT:
        raise NumericalError(
            f"Hermite coefficients overflow at s={float(np.max(scales)):g}, m={basis.order}; lower s_max or the order"
        )

    signs = _alternating_signs(basis.order)
    coeffs = signs * np.exp(log_mag)
    dcoeffs = signs * np.exp(log_deriv)
    return coeffs, dcoeffs


def laguerre_rows(s: np.ndarray, basis: PolynomialBasis) -> Tuple[np.ndarray, np.ndarray]:
    """Laguerre coefficients and derivatives by iterative multiplication."""
    scales = _as_scales(s)
    size = basis.order + 1
    ratio = scales / (scales + 1.0)
    coeffs = np.empty((scales.shape[0], size), dtype=np.float64)
    dcoeffs = np.empty_like(coeffs)

    coeffs[:, 0] = 1.0 / (scales + 1.0)
    dcoeffs[:, 0] = -1.0 / (scales + 1.0) ** 2
    # q_n = s^{n-1} / (s+1)^{n+2}, so dc_n/ds = q_n (n - s)
    q = 1.0 / (scales + 1.0) ** 3
    for n in range(1, size):
        coeffs[:, n] = coeffs[:, n - 1] * ratio
        dcoeffs[:, n] = q * (n - scales)
        q = q * ratio
    return coeffs, dcoeffs


_ROW_BUILDERS = {
    Family.CHEBYSHEV: chebyshev_rows,
    Family.HERMITE: hermite_rows,
    Family.LAGUERRE: laguerre_rows,
}


def _scalar_row(s: float, basis: PolynomialBasis, family: Family) -> Tuple[np.ndarray, np.ndarray]:
    if basis.family is not family:
        raise InputError(f"expected a {family.value} basis, got {basis.family.value}")
    if not s > 0.0:
        raise InputError(f"scale must be > 0, got {s}")
    coeffs, dcoeffs = _ROW_BUILDERS[family](np.array([s]), basis)
    return coeffs[0], dcoeffs[0]


def chebyshev_coeffs(s: float, basis: PolynomialBasis) -> Tuple[np.ndarray, np.ndarray]:
    return _scalar_row(s, basis, Family.CHEBYSHEV)


def hermite_coeffs(s: float, basis: PolynomialBasis) -> Tuple[np.ndarray, np.ndarray]:
    return _scalar_row(s, basis, Family.HERMITE)


def laguerre_coeffs(s: float, basis: PolynomialBasis) -> Tuple[np.ndarray, np.ndarray]:
    return _scalar_row(s, basis, Family.LAGUERRE)


def build_coefficient_table(scales: Union[ScaleVector, np.ndarray], basis: PolynomialBasis) -> CoefficientTable:
    """Per-node coefficient rows for the given scales."""
    values = scales.values if isinstance(scales, ScaleVector) else np.asarray(scales, dtype=np.float64)
    coeffs, dcoeffs = _ROW_BUILDERS[basis.family](values, basis)
    if not (np.all(np.isfinite(coeffs)) and np.all(np.isfinite(dcoeffs))):
        raise NumericalError(f"non-finite {basis.family.value} coefficients")
    return CoefficientTable(coeffs=coeffs, dcoeffs=dcoeffs, basis=basis)


def recurrence_terms(basis: PolynomialBasis, n: int) -> Tuple[float, float, float]:
    """(a_n, b_n, g_n) with P_{n+1} = a_n L P_n + b_n P_n + g_n P_{n-1}."""
    if basis.family is Family.CHEBYSHEV:
        # T_n evaluated at (2/b) L - I
        scale = 2.0 / basis.b
        if n == 0:
            return scale, -1.0, 0.0
        return 2.0 * scale, -2.0, -1.0
    if basis.family is Family.HERMITE:
        return 2.0, 0.0, -2.0 * n
    return -1.0 / (n + 1), (2.0 * n + 1.0) / (n + 1), -n / (n + 1.0)


def _check_operands(lap: SparseMatrix, x: np.ndarray) -> np.ndarray:
    dense = np.asarray(x, dtype=np.float64)
    if dense.ndim == 1:
        dense = dense[:, None]
    if dense.ndim != 2 or dense.shape[0] != lap.shape[0]:
        raise DimensionError(f"features {np.shape(x)} do not match Laplacian {lap.shape}")
    return dense


def basis_sequence(lap: SparseMatrix, x: np.ndarray, basis: PolynomialBasis) -> List[np.ndarray]:
    """[P_0(L) x, ..., P_m(L) x], one sparse product per order."""
    dense = _check_operands(lap, x)
    sequence = [dense]
    previous = np.zeros_like(dense)
    for n in range(basis.order):
        a_n, b_n, g_n = recurrence_terms(basis, n)
        current = sequence[-1]
        following = a_n * spmm(lap, current) + b_n * current
        if g_n != 0.0:
            following += g_n * previous
        previous = current
        sequence.append(following)
    return sequence


def adjoint_sequence(lap: SparseMatrix, upstream: Sequence[np.ndarray], basis: PolynomialBasis) -> np.ndarray:
    """
    sum_n P_n(L)^T V_n for per-order inputs V_0..V_m.

    Reverse sweep of the forward recurrence; L is symmetric so L^T = L.
    """
    if len(upstream) != basis.size:
        raise DimensionError(f"expected {basis.size} adjoint terms, got {len(upstream)}")
    adjoints = [np.array(term, dtype=np.float64, copy=True) for term in upstream]
    for n in range(basis.order - 1, -1, -1):
        a_n, b_n, g_n = recurrence_terms(basis, n)
        carried = adjoints[n + 1]
        adjoints[n] += a_n * spmm(lap, carried) + b_n * carried
        if n >= 1 and g_n != 0.0:
            adjoints[n - 1] += g_n * carried
    return adjoints[0]


def combine_sequence(stack: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Row p of the result is sum_n coeffs[p, n] * stack[n, p, :]."""
    return np.einsum("pn,npd->pd", coeffs, stack)


def heat_conv_apply(
    lap: SparseMatrix,
    x: np.ndarray,
    table: CoefficientTable,
    basis: PolynomialBasis,
) -> np.ndarray:
    """Approximate node-wise heat convolution [sum_n diag(c_n) P_n(L)] x."""
    if table.basis != basis or table.coeffs.shape[1] != basis.size:
        raise InputError("coefficient table was built for a different basis")
    if table.num_nodes != lap.shape[0]:
        raise DimensionError(f"coefficient table has {table.num_nodes} rows, Laplacian is {lap.shape}")
    dense = np.asarray(x, dtype=np.float64)
    stack = np.stack(basis_sequence(lap, dense, basis))
    out = combine_sequence(stack, table.coeffs)
    return out.reshape(dense.shape)


def kernel_pointwise(s: float, lam: Union[float, np.ndarray], basis: PolynomialBasis) -> Union[float, np.ndarray]:
    """sum_n c_{s,n} P_n(lambda), vectorised over lambda."""
    coeffs = _ROW_BUILDERS[basis.family](np.array([s]), basis)[0][0]
    grid = np.asarray(lam, dtype=np.float64)
    previous = np.zeros_like(grid)
    current = np.ones_like(grid)
    total = coeffs[0] * current
    for n in range(basis.order):
        a_n, b_n, g_n = recurrence_terms(basis, n)
        following = (a_n * grid + b_n) * current + g_n * previous
        previous, current = current, following
        total = total + coeffs[n + 1] * current
    return float(total) if np.ndim(total) == 0 else total
