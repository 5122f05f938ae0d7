"""Drop-probability controllers: RED and the fractional-order PI^alpha.

The PI^alpha integral term uses the discrete Grunwald-Letnikov
differintegral, a weighted sum over the error history whose weights are
the signed generalized binomial coefficients (-1)^j * binom(order, j).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "GlWeights",
    "PiAlphaConfig",
    "PiAlphaState",
    "RedConfig",
    "RedState",
    "gl_weights",
    "gl_apply",
    "pi_alpha_drop_prob",
    "red_drop_prob",
    "ConstantDrop",
    "initial_state",
    "drop_prob",
]


@dataclass(frozen=True)
class GlWeights:
    order: float
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=64)
def gl_weights(order: float, count: int) -> GlWeights:
    """Grunwald-Letnikov weights w_0..w_{count-1} for a real order.

    Uses the recurrence w_j = w_{j-1} * (j - 1 - order) / j, which equals
    (-1)^j * binom(order, j).  Results are cached and returned read-only,
    so repeated calls hand back the same array.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    order = float(order)
    w = np.empty(count)
    w[0] = 1.0
    for j in range(1, count):
        w[j] = w[j - 1] * (j - 1 - order) / j
    w.flags.writeable = False
    return GlWeights(order, w)


def gl_apply(weights: GlWeights, samples) -> float:
    """Differintegral of a sample history; samples are ordered newest last."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    if n == 0:
        raise ValueError("no samples")
    if n > len(weights):
        raise ValueError("weights shorter than sample history")
    return float(np.dot(weights.weights[:n], samples[::-1]))


@dataclass(frozen=True)
class PiAlphaConfig:
    k_p: float
    k_i: float
    order: float
    setpoint: float
    window: int = 1024
    # literal_sign=True uses p = max(0, -(Kp e + Ki D e)) exactly as printed
    literal_sign: bool = False

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.setpoint < 0:
            raise ValueError("setpoint must be >= 0")


@dataclass(frozen=True)
class PiAlphaState:
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.errors)


def pi_alpha_drop_prob(config: PiAlphaConfig, state: PiAlphaState,
                       current_queue: float) -> tuple[float, PiAlphaState]:
    """One PI^alpha decision; returns (drop probability, new state).

    The error e_k = queue - setpoint is appended to the history (oldest
    samples beyond ``config.window`` are dropped) and the probability is
    Kp*e_k + Ki*Delta^order(e), clipped to [0, 1].
    """
    err = float(current_queue) - config.setpoint
    hist = state.errors
    if len(hist) >= config.window:
        hist = hist[len(hist) - config.window + 1:]
    hist = np.append(hist, err)
    w = gl_weights(config.order, config.window)
    u = config.k_p * err + config.k_i * gl_apply(w, hist)
    if config.literal_sign:
        u = -u
    p = min(1.0, max(0.0, u))
    return p, PiAlphaState(hist)


@dataclass(frozen=True)
class RedConfig:
    min_th: float = 10.0
    max_th: float = 20.0
    p_max: float = 0.1
    ewma_weight: float = 1.0

    def __post_init__(self):
        if not 0 <= self.min_th < self.max_th:
            raise ValueError("RED thresholds need 0 <= min_th < max_th")
        if not 0.0 <= self.p_max <= 1.0:
            raise ValueError("p_max must lie in [0, 1]")
        if not 0.0 < self.ewma_weight <= 1.0:
            raise ValueError("ewma_weight must lie in (0, 1]")


@dataclass(frozen=True)
class RedState:
    avg: float = 0.0


def red_drop_prob(config: RedConfig, state: RedState,
                  current_queue: float) -> tuple[float, RedState]:
    w = config.ewma_weight
    avg = (1.0 - w) * state.avg + w * float(current_queue)
    if w == 1.0:
        avg = float(current_queue)
    if avg < config.min_th:
        p = 0.0
    elif avg < config.max_th:
        p = config.p_max * (avg - config.min_th) / (config.max_th - config.min_th)
    else:
        p = 1.0
    return p, RedState(avg)


@dataclass(frozen=True)
class ConstantDrop:
    """Fixed drop probability; ``p = 0`` disables active dropping."""

    p: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("drop probability must lie in [0, 1]")


def initial_state(config):
    if isinstance(config, PiAlphaConfig):
        return PiAlphaState()
    if isinstance(config, RedConfig):
        return RedState()
    if config is None or isinstance(config, ConstantDrop):
        return None
    raise TypeError(f"unknown controller {config!r}")


def drop_prob(config, state, current_queue: float):
    """Dispatch one decision to whichever controller ``config`` describes."""
    if isinstance(config, PiAlphaConfig):
        return pi_alpha_drop_prob(config, state, current_queue)
    if isinstance(config, RedConfig):
        return red_drop_prob(config, state, current_queue)
    if config is None:
        return 0.0, state
    if isinstance(config, ConstantDrop):
        return config.p, state
    raise TypeError(f"unknown controller {config!r}")
