"""
Modified Bessel functions of the first kind for all orders at once, and
log-factorials.

Bessel values come from Miller's backward recurrence
I_{n-1}(x) = (2n/x) I_n(x) + I_{n+1}(x), normalised with
e^x = I_0(x) + 2 sum_{k>=1} I_k(x). The scaled form e^{-x} I_n(x) falls straight
out of that normalisation and is what the Chebyshev coefficients consume.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from src.core.errors import InputError

SMALL_ARGUMENT = 1e-8
_RESCALE_ABOVE = 1e250
_RESCALE_BY = 1e-250


@dataclass(frozen=True)
class BesselTable:
    """I_0(x) .. I_{n_max}(x) for one argument."""

    x: float
    values: np.ndarray

    @property
    def n_max(self) -> int:
        return int(self.values.shape[0] - 1)


def _miller_start(n_max: int, x_max: float) -> int:
    return n_max + max(20, int(math.ceil(1.5 * x_max)))


def bessel_ive_all(n_max: int, x: np.ndarray) -> np.ndarray:
    """
    Exponentially scaled e^{-x} I_n(x) for n = 0..n_max, vectorised over x.

    Args:
        n_max: highest order
        x: arguments >= 0 (scalar or 1-D array)

    Returns:
        array of shape x.shape + (n_max + 1,)

    Raises:
        InputError: negative argument or order
    """
    if n_max < 0:
        raise InputError(f"n_max must be >= 0, got {n_max}")
    args = np.asarray(x, dtype=np.float64)
    scalar = args.ndim == 0
    args = np.atleast_1d(args)
    if np.any(args < 0.0) or not np.all(np.isfinite(args)):
        raise InputError("Bessel arguments must be finite and >= 0")

    out = np.zeros((args.shape[0], n_max + 1), dtype=np.float64)
    out[:, 0] = 1.0

    active = args >= SMALL_ARGUMENT
    if np.any(active):
        out[active] = _miller_scaled(n_max, args[active])
    return out[0] if scalar else out


def _miller_scaled(n_max: int, x: np.ndarray) -> np.ndarray:
    start = _miller_start(n_max, float(np.max(x)))
    values = np.zeros((start + 2, x.shape[0]), dtype=np.float64)
    values[start] = 1.0
    for n in range(start, 0, -1):
        values[n - 1] = (2.0 * n / x) * values[n] + values[n + 1]
        overflow = values[n - 1] > _RESCALE_ABOVE
        if np.any(overflow):
            values[:, overflow] *= _RESCALE_BY

    norm = values[0] + 2.0 * values[1:start + 1].sum(axis=0)
    return (values[: n_max + 1] / norm).T


def bessel_i_all(n_max: int, x: float) -> BesselTable:
    """
    I_0(x) .. I_{n_max}(x).

    Raises:
        InputError: x < 0
    """
    if x < 0.0:
        raise InputError(f"Bessel argument must be >= 0, got {x}")
    scaled = bessel_ive_all(n_max, float(x))
    return BesselTable(x=float(x), values=scaled * math.exp(x))


def bessel_ive_derivatives(scaled: np.ndarray, x: np.ndarray) -> np.ndarray:
    """
    e^{-x} I_n'(x) from a table of e^{-x} I_n(x) (last axis = order).

    Uses I_n' = I_{n-1} - (n/x) I_n and I_0' = I_1; below SMALL_ARGUMENT the
    series limit I_1'(0) = 1/2 applies and every other derivative is 0.
    """
    table = np.atleast_2d(scaled)
    args = np.atleast_1d(np.asarray(x, dtype=np.float64))
    n_max = table.shape[1] - 1
    deriv = np.zeros_like(table)

    if n_max >= 1:
        deriv[:, 0] = table[:, 1]
        orders = np.arange(1, n_max + 1, dtype=np.float64)
        active = args >= SMALL_ARGUMENT
        if np.any(active):
            ratio = orders[None, :] / args[active, None]
            deriv[active, 1:] = table[active, :-1] - ratio * table[active, 1:]
        small = ~active
        if np.any(small):
            deriv[small] = 0.0
            deriv[small, 1] = 0.5
    return deriv.reshape(np.shape(scaled))


_LOG_FACTORIALS = np.zeros(1, dtype=np.float64)
_LOG_FACTORIAL_LOCK = threading.Lock()


def log_factorial(n: int) -> float:
    """ln(n!) from a cached cumulative sum of logs."""
    if n < 0:
        raise InputError(f"log_factorial needs n >= 0, got {n}")
    table = _LOG_FACTORIALS
    if n >= table.shape[0]:
        table = _grow_log_factorials(n)
    return float(table[n])


def log_factorials(n_max: int) -> np.ndarray:
    """ln(0!) .. ln(n_max!)."""
    log_factorial(n_max)
    return _LOG_FACTORIALS[: n_max + 1].copy()


def _grow_log_factorials(n: int) -> np.ndarray:
    global _LOG_FACTORIALS
    with _LOG_FACTORIAL_LOCK:
        if n >= _LOG_FACTORIALS.shape[0]:
            size = max(n + 1, 2 * _LOG_FACTORIALS.shape[0], 64)
            logs = np.log(np.arange(1, size, dtype=np.float64))
            _LOG_FACTORIALS = np.concatenate([[0.0], np.cumsum(logs)])
        return _LOG_FACTORIALS
