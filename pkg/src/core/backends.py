"""
Kernel backends for the heat-convolution layer.

Both backends expose the same five steps so a layer never needs to know which
one it runs on:

    coefficients(scales)            per-node kernel data for the current scales
    prepare(x, coeffs)              per-input work reused by the backward pass
    combine(prep, coeffs)           the convolved output
    scale_grad(prep, coeffs, G)     dLoss/ds_p given G = dLoss/d(output)
    adjoint(coeffs, G)              dLoss/dx

``PolynomialKernel`` never diagonalizes; ``ExactKernel`` uses the dense
spectral oracle and exists as the reference and timing baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from src.core.errors import DimensionError, InputError
from src.core.graph import SparseMatrix
from src.core.kernel import (
    CoefficientTable,
    PolynomialBasis,
    ScaleVector,
    adjoint_sequence,
    basis_sequence,
    build_coefficient_table,
    combine_sequence,
)
from src.core.spectral import DEFAULT_MAX_N, SpectralDecomposition, eigh, exact_kernel_rows
from src.utils.time_utils import Stopwatch

logger = logging.getLogger(__name__)


class PolynomialKernel:
    """Truncated polynomial expansion evaluated by three-term recurrence."""

    name = "polynomial"

    def __init__(self, lap: SparseMatrix, basis: PolynomialBasis):
        self.lap = lap
        self.basis = basis
        self.timer = Stopwatch()

    @property
    def num_nodes(self) -> int:
        return int(self.lap.shape[0])

    @property
    def label(self) -> str:
        return self.basis.family.value

    def coefficients(self, scales: Union[ScaleVector, np.ndarray]) -> CoefficientTable:
        if len(scales) != self.num_nodes:
            raise DimensionError(f"expected {self.num_nodes} scales, got {len(scales)}")
        with self.timer.measure():
            return build_coefficient_table(scales, self.basis)

    def prepare(self, x: np.ndarray, coeffs: CoefficientTable) -> np.ndarray:
        """Stack of P_n(L) x, shape (m+1, N, d); reused by the backward pass."""
        with self.timer.measure():
            return np.stack(basis_sequence(self.lap, x, self.basis))

    def combine(self, prep: np.ndarray, coeffs: CoefficientTable) -> np.ndarray:
        with self.timer.measure():
            return combine_sequence(prep, coeffs.coeffs)

    def scale_grad(self, prep: np.ndarray, coeffs: CoefficientTable, upstream: np.ndarray) -> np.ndarray:
        with self.timer.measure():
            return np.einsum("pn,npd,pd->p", coeffs.dcoeffs, prep, upstream)

    def adjoint(self, coeffs: CoefficientTable, upstream: np.ndarray) -> np.ndarray:
        with self.timer.measure():
            per_order = [coeffs.coeffs[:, n : n + 1] * upstream for n in range(self.basis.size)]
            return adjoint_sequence(self.lap, per_order, self.basis)


@dataclass(frozen=True)
class ExactCoefficients:
    """Kernel rows e^{-s_p lambda_i} u_i(p) and their scale derivatives."""

    decomposition: SpectralDecomposition
    rows: np.ndarray
    drows: np.ndarray


class ExactKernel:
    """
    Exact kernel U diag(e^{-s_p lambda}) U^T via full eigendecomposition.

    With ``amortize=False`` the decomposition is recomputed on every call to
    ``coefficients`` (once per forward pass), which is what a per-epoch timing
    of the exact model measures.
    """

    name = "exact"

    def __init__(self, lap: SparseMatrix, amortize: bool = True, max_n: int = DEFAULT_MAX_N, method: str = "auto"):
        self.lap = lap
        self.amortize = amortize
        self.max_n = max_n
        self.method = method
        self.timer = Stopwatch()
        self._decomposition: Optional[SpectralDecomposition] = None
        if amortize:
            with self.timer.measure():
                self._decomposition = eigh(lap, max_n=max_n, method=method)
        elif lap.shape[0] > max_n:
            # refuse oversized graphs up front, not on the first forward pass
            eigh(lap, max_n=max_n, method=method)

    @property
    def num_nodes(self) -> int:
        return int(self.lap.shape[0])

    @property
    def label(self) -> str:
        return "exact" if self.amortize else "exact-per-epoch"

    def decomposition(self) -> SpectralDecomposition:
        if self._decomposition is None or not self.amortize:
            self._decomposition = eigh(self.lap, max_n=self.max_n, method=self.method)
        return self._decomposition

    def coefficients(self, scales: Union[ScaleVector, np.ndarray]) -> ExactCoefficients:
        with self.timer.measure():
            dec = self.decomposition()
            rows, drows = exact_kernel_rows(dec, scales)
            return ExactCoefficients(decomposition=dec, rows=rows, drows=drows)

    def prepare(self, x: np.ndarray, coeffs: ExactCoefficients) -> np.ndarray:
        """Spectrum U^T x under this forward pass's decomposition."""
        dense = np.asarray(x, dtype=np.float64)
        if dense.shape[0] != self.num_nodes:
            raise DimensionError(f"features have {dense.shape[0]} rows, graph has {self.num_nodes}")
        with self.timer.measure():
            return coeffs.decomposition.eigenvectors.T @ dense

    def combine(self, prep: np.ndarray, coeffs: ExactCoefficients) -> np.ndarray:
        with self.timer.measure():
            return coeffs.rows @ prep

    def scale_grad(self, prep: np.ndarray, coeffs: ExactCoefficients, upstream: np.ndarray) -> np.ndarray:
        # d e^{-s lambda} / ds = -lambda e^{-s lambda}
        with self.timer.measure():
            return np.einsum("pd,pd->p", coeffs.drows @ prep, upstream)

    def adjoint(self, coeffs: ExactCoefficients, upstream: np.ndarray) -> np.ndarray:
        with self.timer.measure():
            return coeffs.decomposition.eigenvectors @ (coeffs.rows.T @ upstream)


KernelBackend = Union[PolynomialKernel, ExactKernel]


def make_backend(
    lap: SparseMatrix,
    basis: Optional[PolynomialBasis],
    exact: bool = False,
    amortize: bool = True,
    max_n: int = DEFAULT_MAX_N,
) -> KernelBackend:
    """Polynomial backend for ``basis``, or the exact one when ``exact`` is set."""
    if exact:
        return ExactKernel(lap, amortize=amortize, max_n=max_n)
    if basis is None:
        raise InputError("a polynomial basis is required unless exact=True")
    return PolynomialKernel(lap, basis)
