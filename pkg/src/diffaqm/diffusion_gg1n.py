"""Transient diffusion model of the finite G/G/1/N queue.

Both barriers (x = 0 and x = N) are instantaneous-return barriers: the
process is absorbed, sojourns for a random time, then jumps to x = 1 (from
zero) or x = N - 1 (from N).  The absorbing two-barrier density is an image
series; the flows into and out of the barriers satisfy a Volterra system
solved by forward time stepping.

Discretization.  Time is cut into cells of width ``h``.  Mass that enters
a barrier, or jumps back from it, during a cell is placed at the cell
midpoint; the convolution kernels are then exact cell integrals of the
first-passage and sojourn distributions (differences of closed-form CDFs),
so barrier accounting telescopes and total mass is conserved up to the
x-quadrature error of the interior density.  Impulses at t = 0 (initial
boundary masses) enter as atoms released through the sojourn CDF.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from .diffusion_gg1 import (
    DiffusionCoeffs,
    ExponentialSojourn,
    InitialCondition,
    SojournDensity,
    TrafficMoments,
    coeffs as diffusion_coeffs,
    discretize_samples,
)

__all__ = [
    "SeriesTruncationError",
    "DivergentEvolutionError",
    "TwoBarrierModel",
    "QueueDensity",
    "two_barrier_absorbing_pdf",
    "first_passage_pair",
    "first_passage_cdf_pair",
    "evolve",
    "propagator",
    "mean_queue",
    "MASS_TOL",
]

MASS_TOL = 5e-3
TERM_BOUND = 1e-12
_NEGLIGIBLE = 1e-17


class SeriesTruncationError(ArithmeticError):
    pass


class DivergentEvolutionError(ArithmeticError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class TwoBarrierModel:
    capacity: int
    coeffs: DiffusionCoeffs
    l0: SojournDensity
    lN: SojournDensity
    h: float = 0.05
    points_per_unit: int = 10
    series_cutoff: int = 40

    def __post_init__(self):
        if self.capacity < 2:
            raise ValueError("capacity must be >= 2")
        if self.h <= 0:
            raise ValueError("time step must be positive")
        if self.points_per_unit < 2 or self.points_per_unit % 2:
            # half-integers must be grid nodes for the queue-length bins
            raise ValueError("points_per_unit must be an even integer >= 2")

    @classmethod
    def from_moments(cls, moments: TrafficMoments, capacity: int, **kw) -> "TwoBarrierModel":
        """Model with the default sojourns: exp(lambda) at zero, exp(mu) at N."""
        kw.setdefault("h", default_step(moments.lam, moments.mu))
        return cls(capacity=capacity, coeffs=diffusion_coeffs(moments),
                   l0=ExponentialSojourn(moments.lam), lN=ExponentialSojourn(moments.mu), **kw)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.capacity, self.capacity * self.points_per_unit + 1)


def default_step(lam: float, mu: float) -> float:
    return min(0.05, 1.0 / (4.0 * (lam + mu)))


@dataclass(frozen=True)
class QueueDensity:
    t: float
    grid: np.ndarray
    interior: np.ndarray
    p0: float
    pN: float

    @property
    def mass(self) -> float:
        return float(np.trapezoid(self.interior, self.grid)) + self.p0 + self.pN

    def as_initial(self) -> InitialCondition:
        return InitialCondition(grid=self.grid, density=self.interior, p0=self.p0, pN=self.pN)


# -- image series ------------------------------------------------------------

def _image_indices(model: TwoBarrierModel, t) -> np.ndarray:
    """Image indices n whose terms can matter for any x, x0 in [0, N].

    Each family-term is bounded by exp(E)/sqrt(2 pi a t) with E maximized
    over the position range; terms at |n| = cutoff + 1 must stay below
    TERM_BOUND.
    """
    b, a, N = model.coeffs.beta, model.coeffs.alpha_d, float(model.capacity)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    t = t[t > 0]
    if t.size == 0:
        return np.zeros(1, dtype=int)
    cut = model.series_cutoff
    n = np.arange(-cut - 1, cut + 2)[:, None]
    tt = t[None, :]

    def dist(v, lo, hi):
        return np.maximum(0.0, np.maximum(lo - v, v - hi))

    c1 = 2.0 * n * N
    # x - x0 - c1 - b t ranges over [-N, N] - c1 - b t
    d1 = dist(c1 + b * tt, -N, N)
    e1 = b * c1 / a - d1 ** 2 / (2 * a * tt)
    # second family: x + x0 + 2nN - b t over [2nN, 2nN + 2N] - b t
    d2 = dist(b * tt, 2.0 * n * N, 2.0 * n * N + 2 * N)
    e2 = -2.0 * b * n * N / a + max(0.0, -2.0 * b * N / a) - d2 ** 2 / (2 * a * tt)
    # also bound the flux form, which carries an extra |y|/t factor
    pref = np.log(1.0 + (2 * abs(n) + 2) * N / tt) - 0.5 * np.log(2 * math.pi * a * tt)
    logb = (np.maximum(e1, e2) + pref).max(axis=1)
    if max(logb[0], logb[-1]) > math.log(TERM_BOUND):
        raise SeriesTruncationError(
            f"series truncation: terms at |n| = {cut + 1} exceed {TERM_BOUND:g}")
    keep = logb[1:-1] > math.log(_NEGLIGIBLE)
    idx = np.arange(-cut, cut + 1)[keep]
    return idx if idx.size else np.zeros(1, dtype=int)


def _phi_series(x, t, x0, model: TwoBarrierModel, ns):
    b, a, N = model.coeffs.beta, model.coeffs.alpha_d, float(model.capacity)
    s2 = 2.0 * a * t
    out = 0.0
    for n in ns:
        c1 = 2.0 * n * N
        c2 = -2.0 * x0 - c1
        out = out + np.exp(b * c1 / a - (x - x0 - c1 - b * t) ** 2 / s2)
        out = out - np.exp(b * c2 / a - (x - x0 - c2 - b * t) ** 2 / s2)
    return out / np.sqrt(math.pi * s2)


def two_barrier_absorbing_pdf(x, t, x0, model: TwoBarrierModel):
    """Density at x, time t, of the diffusion absorbed at 0 and N, started at x0."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    ns = _image_indices(model, t)
    val = _phi_series(x, t, x0, model, ns)
    inside = (x > 0) & (x < model.capacity)
    return np.where(inside, val, 0.0)


def _log_weight(model, c):
    return model.coeffs.beta * c / model.coeffs.alpha_d


def _flux_terms(x0, model, ns):
    """(log-weight, signed distance, sign, drift) per image term and barrier.

    The flux of image term c into barrier 0 is half an inverse-Gaussian
    kernel in the signed distance y = x0 + c under drift beta; into barrier
    N it is the mirror image, with y = N - x0 - c and drift -beta.
    """
    N = float(model.capacity)
    b = model.coeffs.beta
    out0, outN = [], []
    for n in ns:
        c1 = 2.0 * n * N
        c2 = -2.0 * x0 - c1
        out0 += [(_log_weight(model, c1), x0 + c1, 0.5, b),
                 (_log_weight(model, c2), x0 + c2, -0.5, b)]
        outN += [(_log_weight(model, c1), N - x0 - c1, 0.5, -b),
                 (_log_weight(model, c2), N - x0 - c2, -0.5, -b)]
    return out0, outN


def _signed_ig_pdf(logw, y, t, drift, a):
    ay = np.abs(y)
    tt = np.where(t > 0, t, 1.0)
    logv = logw + np.log(ay) - 0.5 * np.log(2 * math.pi * a * tt ** 3) - (y + drift * tt) ** 2 / (2 * a * tt)
    return np.where(t > 0, np.sign(y) * np.exp(logv), 0.0)


def _signed_ig_cdf(logw, y, t, drift, a):
    """w * int_0^t y / sqrt(2 pi a u^3) exp(-(y + drift u)^2 / (2 a u)) du."""
    ay = np.abs(y)
    sgn = np.sign(y)
    d = drift * sgn
    tt = np.where(t > 0, t, 1.0)
    s = np.sqrt(a * tt)
    v = np.exp(logw + log_ndtr(-(ay + d * tt) / s))
    v = v + np.exp(logw - 2.0 * d * ay / a + log_ndtr((d * tt - ay) / s))
    return np.where(t > 0, sgn * v, 0.0)


def _flux(x0, t, model: TwoBarrierModel, kernel):
    x0 = np.asarray(x0, dtype=float)
    t = np.asarray(t, dtype=float)
    a = model.coeffs.alpha_d
    ns = _image_indices(model, t)
    terms0, termsN = _flux_terms(x0, model, ns)
    g0 = sum(half * kernel(lw, y, t, dr, a) for lw, y, half, dr in terms0)
    gN = sum(half * kernel(lw, y, t, dr, a) for lw, y, half, dr in termsN)
    return g0, gN


def first_passage_pair(t, x0, model: TwoBarrierModel):
    """Densities (gamma_{x0,0}(t), gamma_{x0,N}(t)) of hitting 0 or N first."""
    return _flux(x0, t, model, _signed_ig_pdf)


def first_passage_cdf_pair(t, x0, model: TwoBarrierModel):
    """Cumulative versions of :func:`first_passage_pair`, integrated from 0 to t."""
    return _flux(x0, t, model, _signed_ig_cdf)


# -- Volterra time stepping --------------------------------------------------

def _steps(T: float, h: float) -> int:
    K = int(round(T / h))
    if K < 1 or abs(K * h - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"horizon {T} is not a multiple of the time step {h}")
    return K


@dataclass
class _Flows:
    """Per-cell barrier inflows (G) and jump-backs (R), shape (K, batch)."""

    G0: np.ndarray
    GN: np.ndarray
    R1: np.ndarray
    RN1: np.ndarray
    p0: np.ndarray = field(default=None)  # (K + 1, batch)
    pN: np.ndarray = field(default=None)


def _solve_flows(model: TwoBarrierModel, K: int, xi, mass_w, p0, pN) -> _Flows:
    """Forward-step the coupled barrier system for a batch of initial states.

    xi: source points (J,); mass_w: interior mass at each source (J, B);
    p0, pN: initial boundary masses (B,).
    """
    h = model.h
    N = model.capacity
    t = h * np.arange(K + 1)
    B = mass_w.shape[1]

    if len(xi):
        F0, FN = first_passage_cdf_pair(t[None, :], xi[:, None], model)
        A0 = np.diff(F0, axis=1).T @ mass_w
        AN = np.diff(FN, axis=1).T @ mass_w
    else:
        A0 = AN = np.zeros((K, B))

    tm = h * (np.arange(K) + 0.5)
    F10, F1N = first_passage_cdf_pair(tm, 1.0, model)
    FM0, FMN = first_passage_cdf_pair(tm, N - 1.0, model)
    D10, D1N = np.diff(F10, prepend=0.0), np.diff(F1N, prepend=0.0)
    DM0, DMN = np.diff(FM0, prepend=0.0), np.diff(FMN, prepend=0.0)
    E0 = np.diff(model.l0.cdf(tm), prepend=0.0)
    EN = np.diff(model.lN.cdf(tm), prepend=0.0)
    rel0 = np.diff(model.l0.cdf(t))
    relN = np.diff(model.lN.cdf(t))

    # same-cell coupling: u = known + C u, u = (G0, GN, R1, RN1)
    C = np.array([[0, 0, D10[0], DM0[0]],
                  [0, 0, D1N[0], DMN[0]],
                  [E0[0], 0, 0, 0],
                  [0, EN[0], 0, 0]])
    solve = np.linalg.inv(np.eye(4) - C)

    G0 = np.zeros((K, B))
    GN = np.zeros((K, B))
    R1 = np.zeros((K, B))
    RN1 = np.zeros((K, B))
    for i in range(K):
        if i:
            lag = slice(i, 0, -1)  # kernel lags i..1 against cells 0..i-1
            known = np.stack([
                A0[i] + D10[lag] @ R1[:i] + DM0[lag] @ RN1[:i],
                AN[i] + D1N[lag] @ R1[:i] + DMN[lag] @ RN1[:i],
                p0 * rel0[i] + E0[lag] @ G0[:i],
                pN * relN[i] + EN[lag] @ GN[:i],
            ])
        else:
            known = np.stack([A0[0], AN[0], p0 * rel0[0], pN * relN[0]])
        u = solve @ known
        G0[i], GN[i], R1[i], RN1[i] = u
    flows = _Flows(G0, GN, R1, RN1)
    flows.p0 = p0 + np.concatenate([np.zeros((1, B)), np.cumsum(G0 - R1, axis=0)])
    flows.pN = pN + np.concatenate([np.zeros((1, B)), np.cumsum(GN - RN1, axis=0)])
    return flows


def _sources(initial: InitialCondition, model: TwoBarrierModel):
    """Quadrature points and masses representing the interior initial state."""
    grid = model.grid
    if initial.density is not None:
        dens = initial.density
        if initial.grid.shape != grid.shape or not np.allclose(initial.grid, grid):
            dens = np.interp(grid, initial.grid, initial.density, left=0.0, right=0.0)
        w = _trap_weights(grid) * dens
        inner = slice(1, len(grid) - 1)
        return grid[inner], w[inner][:, None]
    if initial.x0 is not None:
        if not 0 < initial.x0 < model.capacity:
            raise ValueError("x0 must lie strictly between the barriers")
        return np.array([initial.x0]), np.array([[1.0 - initial.p0 - initial.pN]])
    return np.zeros(0), np.zeros((0, 1))


def _trap_weights(grid):
    w = np.empty_like(grid)
    dx = np.diff(grid)
    w[0] = dx[0] / 2
    w[-1] = dx[-1] / 2
    w[1:-1] = (dx[:-1] + dx[1:]) / 2
    return w


def _return_tables(model: TwoBarrierModel, K: int):
    """phi(x, (d + 1/2) h; 1) and phi(x, (d + 1/2) h; N - 1) for lags d < K."""
    grid = model.grid
    lags = model.h * (np.arange(K) + 0.5)
    ns = _image_indices(model, lags)
    tab1 = _phi_series(grid[None, :], lags[:, None], 1.0, model, ns)
    tabM = _phi_series(grid[None, :], lags[:, None], model.capacity - 1.0, model, ns)
    tab1[:, [0, -1]] = 0.0
    tabM[:, [0, -1]] = 0.0
    return tab1, tabM


def _interior_at(model, m, t_m, xi, mass_w, flows, tab1, tabM):
    """Interior density after m cells, shape (len(grid), B)."""
    grid = model.grid
    if len(xi):
        ns = _image_indices(model, t_m)
        kern = _phi_series(grid[:, None], t_m, xi[None, :], model, ns)
        kern[[0, -1], :] = 0.0
        f = kern @ mass_w
    else:
        f = np.zeros((len(grid), mass_w.shape[1]))
    if m:
        f = f + tab1[:m][::-1].T @ flows.R1[:m] + tabM[:m][::-1].T @ flows.RN1[:m]
    return f


def evolve(initial: InitialCondition, T: float, model: TwoBarrierModel,
           record_every: int = 1, check_mass: bool = True) -> list[QueueDensity]:
    """Evolve the G/G/1/N diffusion from ``initial`` over [0, T].

    Returns a QueueDensity for t = 0 and for every ``record_every``-th step
    (the final step is always included).  Raises DivergentEvolutionError if
    total mass drifts from one by more than MASS_TOL at a recorded step.
    """
    K = _steps(T, model.h)
    xi, mass_w = _sources(initial, model)
    p0 = np.array([initial.p0])
    pN = np.array([initial.pN])
    flows = _solve_flows(model, K, xi, mass_w, p0, pN)
    tab1, tabM = _return_tables(model, K)
    grid = model.grid

    steps = list(range(record_every, K + 1, record_every))
    if not steps or steps[-1] != K:
        steps.append(K)
    out = [_initial_density(initial, model)]
    for m in steps:
        f = _interior_at(model, m, m * model.h, xi, mass_w, flows, tab1, tabM)[:, 0]
        dens = QueueDensity(m * model.h, grid, np.maximum(f, 0.0),
                            float(flows.p0[m, 0]), float(flows.pN[m, 0]))
        if check_mass and abs(dens.mass - 1.0) > MASS_TOL:
            raise DivergentEvolutionError(
                f"divergent evolution: mass {dens.mass:.6f} at step {m}", step=m)
        out.append(dens)
    return out


def _initial_density(initial: InitialCondition, model: TwoBarrierModel) -> QueueDensity:
    grid = model.grid
    if initial.density is not None:
        f = np.interp(grid, initial.grid, initial.density, left=0.0, right=0.0)
    else:
        f = np.zeros_like(grid)
    # a point mass has no sampled density; it is represented by its mass only
    return QueueDensity(0.0, grid, f, initial.p0, initial.pN)


def propagator(model: TwoBarrierModel, T: float) -> np.ndarray:
    """Linear map of the state [f(grid), p0, pN] over a horizon T.

    Column j is the evolution of a unit density value at grid node j (or a
    unit boundary mass for the last two columns); applying the matrix to a
    state vector is equivalent to :func:`evolve` from that state.
    """
    K = _steps(T, model.h)
    grid = model.grid
    M = len(grid)
    B = M + 2
    xi = grid[1:-1]
    mass_w = np.zeros((M - 2, B))
    mass_w[np.arange(M - 2), np.arange(1, M - 1)] = _trap_weights(grid)[1:-1]
    p0 = np.zeros(B)
    pN = np.zeros(B)
    p0[M] = 1.0
    pN[M + 1] = 1.0
    flows = _solve_flows(model, K, xi, mass_w, p0, pN)
    tab1, tabM = _return_tables(model, K)
    f = _interior_at(model, K, T, xi, mass_w, flows, tab1, tabM)
    return np.vstack([f, flows.p0[K][None, :], flows.pN[K][None, :]])


def mean_queue(density: QueueDensity) -> float:
    """Mean number of packets: binned interior plus the boundary atoms."""
    N = int(round(density.grid[-1]))
    p = discretize_samples(density.grid, density.interior, N)
    p[0] += density.p0
    p[N] += density.pN
    return float(np.dot(np.arange(N + 1), p))
