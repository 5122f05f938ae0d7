"""Diffusion approximation of the unlimited G/G/1 queue.

The queue length is replaced by a diffusion with drift ``beta`` and
variance ``alpha_d`` per unit time.  Three boundary behaviours at x = 0
are covered: a reflecting barrier (closed-form transient density), an
absorbing barrier (closed form, plus its first-passage density), and the
instantaneous-return barrier, where the process sojourns at zero for a
random time and then jumps to x = 1.  The return process is solved in the
Laplace domain and inverted with Stehfest's method.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr

from .laplace_tools import InversionError, StehfestTable, invert, stehfest_coeffs

__all__ = [
    "TrafficMoments",
    "DiffusionCoeffs",
    "SojournDensity",
    "ExponentialSojourn",
    "ErlangSojourn",
    "InitialCondition",
    "coeffs",
    "reflecting_pdf",
    "steady_state_pdf",
    "steady_state_mean",
    "return_steady_state",
    "discretize",
    "discretize_samples",
    "absorbing_pdf",
    "first_passage_density",
    "gamma_bar",
    "phi_bar",
    "return_process_pdf_transform",
    "return_process_p0_transform",
    "return_process_pdf",
    "return_process_p0",
    "integration_limit",
    "NEGATIVE_TOL",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)

# Stehfest output below this is treated as inversion breakdown, not rounding.
NEGATIVE_TOL = 1e-6


@dataclass(frozen=True)
class TrafficMoments:
    lam: float
    mu: float
    c2_a: float = 1.0
    c2_b: float = 1.0

    def __post_init__(self):
        if self.lam <= 0 or self.mu <= 0:
            raise ValueError("arrival and service rates must be positive")
        if self.c2_a < 0 or self.c2_b < 0:
            raise ValueError("squared coefficients of variation must be >= 0")


@dataclass(frozen=True)
class DiffusionCoeffs:
    beta: float
    alpha_d: float

    def __post_init__(self):
        if not self.alpha_d > 0:
            raise ValueError("alpha_d must be positive")


def coeffs(moments: TrafficMoments) -> DiffusionCoeffs:
    return DiffusionCoeffs(beta=moments.lam - moments.mu,
                           alpha_d=moments.c2_a * moments.lam + moments.c2_b * moments.mu)


class SojournDensity:
    """Density of the time spent on a barrier before the jump back."""

    def pdf(self, t):
        raise NotImplementedError

    def cdf(self, t):
        raise NotImplementedError

    def laplace(self, s):
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class ExponentialSojourn(SojournDensity):
    """Exponential sojourn; ``rate = 0`` means the barrier is never left."""

    rate: float

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("sojourn rate must be >= 0")

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, self.rate * np.exp(-self.rate * t), 0.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t > 0, -np.expm1(-self.rate * np.maximum(t, 0.0)), 0.0)

    def laplace(self, s):
        return self.rate / (self.rate + s)

    @property
    def mean(self) -> float:
        return math.inf if self.rate == 0 else 1.0 / self.rate


@dataclass(frozen=True)
class ErlangSojourn(SojournDensity):
    stages: int
    rate: float  # per-stage rate

    def __post_init__(self):
        if self.stages < 1 or self.rate <= 0:
            raise ValueError("Erlang sojourn needs stages >= 1 and rate > 0")

    def pdf(self, t):
        from scipy.stats import gamma
        return gamma.pdf(t, self.stages, scale=1.0 / self.rate)

    def cdf(self, t):
        from scipy.stats import gamma
        return gamma.cdf(t, self.stages, scale=1.0 / self.rate)

    def laplace(self, s):
        return (self.rate / (self.rate + s)) ** self.stages

    @property
    def mean(self) -> float:
        return self.stages / self.rate


@dataclass(frozen=True)
class InitialCondition:
    """Start of the process: interior mass plus boundary masses.

    The interior part is either a point mass at ``x0`` or a density sampled
    on ``grid``.  ``density`` carries the actual interior mass, i.e. it
    integrates to ``1 - p0 - pN``, not to one.
    """

    x0: float | None = None
    grid: np.ndarray | None = None
    density: np.ndarray | None = None
    p0: float = 0.0
    pN: float = 0.0

    @classmethod
    def point(cls, x0: float) -> "InitialCondition":
        if x0 <= 0:
            raise ValueError("point mass must sit at x0 > 0")
        return cls(x0=float(x0))

    @classmethod
    def at_zero(cls) -> "InitialCondition":
        return cls(p0=1.0)

    @classmethod
    def at_capacity(cls) -> "InitialCondition":
        return cls(pN=1.0)

    @classmethod
    def from_density(cls, grid, density, p0: float = 0.0, pN: float = 0.0,
                     tol: float = 5e-3) -> "InitialCondition":
        grid = np.asarray(grid, dtype=float)
        density = np.asarray(density, dtype=float)
        if grid.shape != density.shape:
            raise ValueError("grid and density differ in shape")
        if np.any(density < -NEGATIVE_TOL):
            raise ValueError("initial density must be nonnegative")
        density = np.maximum(density, 0.0)
        total = np.trapezoid(density, grid) + p0 + pN
        if abs(total - 1.0) > tol:
            raise ValueError(f"initial condition carries mass {total:.6g}, expected 1")
        return cls(grid=grid, density=density, p0=float(p0), pN=float(pN))

    @property
    def interior_mass(self) -> float:
        if self.density is not None:
            return float(np.trapezoid(self.density, self.grid))
        if self.x0 is not None:
            return 1.0 - self.p0 - self.pN
        return 0.0


# -- reflecting barrier ------------------------------------------------------

def reflecting_pdf(x, t: float, x0: float, c: DiffusionCoeffs):
    """Transient density with a reflecting barrier at zero.

    Derivative in x of Phi((x-x0-bt)/s) - exp(2bx/a) Phi((-x-x0-bt)/s),
    s = sqrt(a t), written out as Gaussian terms.
    """
    x = np.asarray(x, dtype=float)
    b, a = c.beta, c.alpha_d
    s = math.sqrt(a * t)
    z1 = (x - x0 - b * t) / s
    z2 = (-x - x0 - b * t) / s
    lin = 2.0 * b * x / a
    out = (np.exp(-0.5 * z1 * z1) + np.exp(lin - 0.5 * z2 * z2)) / (s * _SQRT2PI)
    out = out - (2.0 * b / a) * np.exp(lin + log_ndtr(z2))
    return np.where(x >= 0, out, 0.0)


def _require_stable(c: DiffusionCoeffs):
    if c.beta >= 0:
        raise ValueError("no steady state")


def steady_state_pdf(c: DiffusionCoeffs):
    _require_stable(c)
    rate = -2.0 * c.beta / c.alpha_d

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, rate * np.exp(-rate * np.maximum(x, 0.0)), 0.0)

    return f


def steady_state_mean(c: DiffusionCoeffs) -> float:
    _require_stable(c)
    return c.alpha_d / (2.0 * abs(c.beta))


def return_steady_state(c: DiffusionCoeffs, l0: SojournDensity):
    """Stationary (p0, density) of the instantaneous-return process.

    The probability current is constant on (0, 1) and zero beyond the
    jump point, so the density rises as 1 - exp(-z x) up to x = 1 and decays
    as exp(-z x) after it, with z = 2|beta|/alpha_d.  The barrier mass follows
    from balancing the outflow p0/E[l0] against the total interior mass.
    """
    _require_stable(c)
    z = -2.0 * c.beta / c.alpha_d
    out_rate = 1.0 / l0.mean
    p0 = 1.0 / (1.0 + out_rate / abs(c.beta))
    amp = out_rate * p0 / abs(c.beta)

    def f(x):
        x = np.asarray(x, dtype=float)
        inner = amp * -np.expm1(-z * x)
        outer = amp * np.expm1(z) * np.exp(-z * x)
        return np.where(x < 0, 0.0, np.where(x < 1.0, inner, outer))

    return p0, f


# -- discretization to queue-length probabilities ----------------------------

def discretize(density, cutoff: int | None = None, tail_tol: float = 1e-12) -> np.ndarray:
    """Bin a normalized density on x >= 0 into p(0), p(1), ...

    p(0) integrates over [0, 0.5] and p(n) over [n-0.5, n+0.5].  With a finite
    ``cutoff`` the last bin also takes the remainder 1 - sum(p); with
    ``cutoff=None`` bins are added until the remainder drops below
    ``tail_tol`` and the remainder goes into the final bin.
    """
    def mass(lo, hi):
        return integrate.quad(lambda u: float(density(u)), lo, hi, limit=200)[0]

    if cutoff is not None:
        if cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        p = [mass(0.0, 0.5)] + [mass(n - 0.5, n + 0.5) for n in range(1, cutoff)]
        p.append(mass(cutoff - 0.5, cutoff + 0.5))
        p[-1] += max(0.0, 1.0 - sum(p))
        return np.array(p)
    p = [mass(0.0, 0.5)]
    n = 1
    while 1.0 - sum(p) > tail_tol and n < 100_000:
        p.append(mass(n - 0.5, n + 0.5))
        n += 1
    p[-1] += max(0.0, 1.0 - sum(p))
    return np.array(p)


def discretize_samples(grid, values, cutoff: int) -> np.ndarray:
    """Same binning for a density sampled on a grid containing the half-integers.

    Each bin is integrated with the trapezoid rule over the grid nodes it
    spans; mass beyond the grid's end is not invented.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    cum = np.concatenate(([0.0], np.cumsum(0.5 * np.diff(grid) * (values[1:] + values[:-1]))))
    edges = np.concatenate(([0.0], np.arange(cutoff) + 0.5, [grid[-1]]))
    edges = np.minimum(edges, grid[-1])
    at = np.interp(edges, grid, cum)
    return np.diff(at)


# -- absorbing barrier -------------------------------------------------------

def absorbing_pdf(x, t: float, x0: float, c: DiffusionCoeffs):
    x = np.asarray(x, dtype=float)
    b, a = c.beta, c.alpha_d
    s2 = 2.0 * a * t
    base = b * (x - x0) / a - b * b * t / (2.0 * a)
    out = (np.exp(base - (x - x0) ** 2 / s2) - np.exp(base - (x + x0) ** 2 / s2)) / math.sqrt(math.pi * s2)
    return np.where(x > 0, out, 0.0)


def first_passage_density(t, x0: float, c: DiffusionCoeffs):
    """Density of the first hitting time of zero from x0 (inverse Gaussian)."""
    t = np.asarray(t, dtype=float)
    b, a = c.beta, c.alpha_d
    tt = np.where(t > 0, t, 1.0)
    val = x0 / np.sqrt(2.0 * math.pi * a * tt ** 3) * np.exp(-(x0 + b * tt) ** 2 / (2.0 * a * tt))
    return np.where(t > 0, val, 0.0)


def integration_limit(t: float, x0: float, c: DiffusionCoeffs) -> float:
    return x0 + abs(c.beta) * t + 12.0 * math.sqrt(c.alpha_d * t)


# -- instantaneous-return process in the Laplace domain ----------------------

def _A(s, c: DiffusionCoeffs):
    return np.sqrt(c.beta * c.beta + 2.0 * c.alpha_d * s)


def gamma_bar(x0, s, c: DiffusionCoeffs):
    """Transform of the first-passage density from x0 to zero."""
    return np.exp(-np.asarray(x0, dtype=float) * (c.beta + _A(s, c)) / c.alpha_d)


def phi_bar(x, s, x0, c: DiffusionCoeffs):
    """Transform of the absorbing-barrier density."""
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    a = c.alpha_d
    A = _A(s, c)
    return np.exp(c.beta * (x - x0) / a) / A * (np.exp(-np.abs(x - x0) * A / a)
                                                - np.exp(-np.abs(x + x0) * A / a))


def _initial_terms(x, s, initial: InitialCondition, c: DiffusionCoeffs):
    """Interior-start contributions: (phi_bar(x, s; psi), gamma_bar_psi(s))."""
    x = np.asarray(x, dtype=float)
    if initial.density is not None:
        xi, psi = initial.grid, initial.density
        g = np.trapezoid(psi * gamma_bar(xi, s, c), xi)
        ph = np.trapezoid(psi * phi_bar(x[..., None], s, xi, c), xi, axis=-1)
        return ph, g
    if initial.x0 is not None:
        m = 1.0 - initial.p0 - initial.pN
        return m * phi_bar(x, s, initial.x0, c), m * gamma_bar(initial.x0, s, c)
    return np.zeros_like(x), 0.0


def _barrier_inflow_bar(s, initial, l0, c):
    # transform of gamma_0 without its atom split out
    _, g_psi = _initial_terms(np.zeros(()), s, initial, c)
    denom = 1.0 - l0.laplace(s) * gamma_bar(1.0, s, c)
    if denom == 0:
        raise ZeroDivisionError("resonant barrier parameters")
    return (initial.p0 + g_psi) / denom


def return_process_pdf_transform(x, s, initial: InitialCondition, l0: SojournDensity,
                                 c: DiffusionCoeffs):
    """f_bar(x, s) = phi_bar(x, s; psi) + g1_bar(s) * phi_bar(x, s; 1)."""
    ph, g_psi = _initial_terms(x, s, initial, c)
    lb = l0.laplace(s)
    denom = 1.0 - lb * gamma_bar(1.0, s, c)
    if denom == 0:
        raise ZeroDivisionError("resonant barrier parameters")
    g1 = (initial.p0 + g_psi) * lb / denom
    return ph + g1 * phi_bar(x, s, 1.0, c)


def return_process_p0_transform(s, initial: InitialCondition, l0: SojournDensity,
                                c: DiffusionCoeffs):
    """Transform of p0(t) = int_0^t (gamma_0 - g_1)."""
    gam0 = _barrier_inflow_bar(s, initial, l0, c)
    return gam0 * (1.0 - l0.laplace(s)) / s


def return_process_pdf(x, t: float, initial: InitialCondition, l0: SojournDensity,
                       c: DiffusionCoeffs, table: StehfestTable | None = None):
    """Density of the instantaneous-return process at time t (Stehfest)."""
    table = table or stehfest_coeffs()
    f = np.asarray(invert(lambda s: return_process_pdf_transform(x, s, initial, l0, c), t, table))
    worst = f.min() if f.size else 0.0
    if worst < -NEGATIVE_TOL:
        raise InversionError(f"inverted density reached {worst:.3g} at t={t}")
    return np.maximum(f, 0.0)


def return_process_p0(t: float, initial: InitialCondition, l0: SojournDensity,
                      c: DiffusionCoeffs, table: StehfestTable | None = None) -> float:
    table = table or stehfest_coeffs()
    p0 = invert(lambda s: return_process_p0_transform(s, initial, l0, c), t, table)
    return min(1.0, max(0.0, p0))
