"""Gaver-Stehfest numerical inversion of Laplace transforms."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

__all__ = ["StehfestTable", "InversionError", "stehfest_coeffs", "invert", "DEFAULT_TERMS"]

DEFAULT_TERMS = 14


class InversionError(ArithmeticError):
    """Raised when a transform cannot be evaluated at a Stehfest node."""

    def __init__(self, message, s=None):
        super().__init__(message if s is None else f"{message} at s={s!r}")
        self.s = s


@dataclass(frozen=True)
class StehfestTable:
    n_terms: int
    v_coeffs: np.ndarray


@lru_cache(maxsize=None)
def stehfest_coeffs(n_terms: int = DEFAULT_TERMS) -> StehfestTable:
    """Stehfest weights V_1..V_n, computed in exact rational arithmetic."""
    if n_terms % 2 or not 2 <= n_terms <= 20:
        raise ValueError("invalid Stehfest order")
    half = n_terms // 2
    fact = math.factorial
    v = []
    for i in range(1, n_terms + 1):
        acc = Fraction(0)
        for k in range((i + 1) // 2, min(i, half) + 1):
            acc += Fraction(k ** half * fact(2 * k),
                            fact(half - k) * fact(k) * fact(k - 1) * fact(i - k) * fact(2 * k - i))
        v.append((-1) ** (i + half) * acc)
    coeffs = np.array([float(c) for c in v])
    coeffs.flags.writeable = False
    return StehfestTable(n_terms, coeffs)


def invert(transform, t: float, table: StehfestTable | None = None):
    """Approximate f(t) from its transform F(s) evaluated at s = i*ln2/t.

    ``transform`` may return a scalar or an array (e.g. a density over an
    x-grid); the result has the same shape.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if table is None:
        table = stehfest_coeffs(DEFAULT_TERMS)
    a = math.log(2.0) / t
    total = 0.0
    for i, v in enumerate(table.v_coeffs, start=1):
        s = i * a
        val = np.asarray(transform(s), dtype=float)
        if not np.all(np.isfinite(val)):
            raise InversionError("transform evaluation failed", s)
        total = total + v * val
    out = a * total
    return float(out) if np.ndim(out) == 0 else out
