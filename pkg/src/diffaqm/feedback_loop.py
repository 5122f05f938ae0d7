"""Mixed diffusion/simulation model of an AQM router fed by an AIMD source.

Each step lasts one mean interarrival time 1/lambda.  Over the step the
G/G/1/N diffusion is evolved with constant coefficients, starting from the
density left by the previous step.  The controller then sees the mean
queue, a uniform draw decides whether a packet is lost, and the source
rate is updated: lambda + zeta on success, lambda / 2 on a loss.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import controllers
from .controllers import RedConfig
from .diffusion_gg1 import ExponentialSojourn, TrafficMoments, coeffs, discretize_samples
from .diffusion_gg1n import (
    MASS_TOL,
    DivergentEvolutionError,
    TwoBarrierModel,
    default_step,
    propagator,
)
from .trajectory import StepRecord, Trajectory

__all__ = [
    "MixedModelConfig",
    "SourceState",
    "PropagatorTable",
    "replication_seed",
    "run_replication",
    "run_ensemble",
    "EnsembleResult",
    "ReplicationError",
    "aggregate",
]


@dataclass(frozen=True)
class MixedModelConfig:
    capacity: int = 30
    mu: float = 1.0
    c2_a: float = 1.0
    c2_b: float = 1.0
    controller: object = None
    zeta: float = 0.01
    lambda0: float = 0.5
    lambda_min: float = 0.05
    lambda_max: float | None = None  # defaults to 2 mu
    feedback_delay: float = 0.0
    # False pins lambda at lambda0 (open loop: decisions are still drawn)
    adaptive_source: bool = True
    horizon: float = 5000.0
    seed: int = 0
    warmup_fraction: float = 0.2
    # EWMA weight RED uses in the event simulation (per-arrival samples)
    des_ewma_weight: float = 0.002
    points_per_unit: int = 10
    # spacing of the lambda nodes between which step propagators are
    # interpolated; 0 computes the exact propagator at every step
    lambda_resolution: float = 0.01
    grid_dt: float = 1.0

    def __post_init__(self):
        if self.lambda_max is None:
            object.__setattr__(self, "lambda_max", 2.0 * self.mu)
        if self.capacity < 2:
            raise ValueError("capacity must be >= 2")
        if self.mu <= 0 or self.c2_a < 0 or self.c2_b < 0:
            raise ValueError("service rate must be positive and C^2 values >= 0")
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if not 0 < self.lambda_min <= self.lambda0 <= self.lambda_max:
            raise ValueError("need 0 < lambda_min <= lambda0 <= lambda_max")
        if self.feedback_delay < 0 or self.horizon <= 0:
            raise ValueError("feedback_delay must be >= 0 and horizon > 0")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.lambda_resolution < 0 or self.grid_dt <= 0:
            raise ValueError("lambda_resolution must be >= 0 and grid_dt > 0")
        controllers.initial_state(self.controller)  # rejects unknown types

    def des_controller(self):
        if isinstance(self.controller, RedConfig):
            return replace(self.controller, ewma_weight=self.des_ewma_weight)
        return self.controller


@dataclass
class SourceState:
    lam: float
    zeta: float
    lambda_min: float
    lambda_max: float
    adaptive: bool = True
    pending: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if not self.lambda_min <= self.lam <= self.lambda_max:
            raise ValueError("lambda outside its bounds")

    @classmethod
    def from_config(cls, config: MixedModelConfig) -> "SourceState":
        return cls(config.lambda0, config.zeta, config.lambda_min, config.lambda_max,
                   adaptive=config.adaptive_source)

    def apply(self, loss: bool) -> None:
        if not self.adaptive:
            return
        if loss:
            self.lam = max(self.lam / 2.0, self.lambda_min)
        else:
            self.lam = min(self.lam + self.zeta, self.lambda_max)

    def decide(self, now: float, loss: bool, delay: float) -> None:
        """Queue a decision and apply every decision that has come due."""
        self.pending.append((now + delay, loss))
        while self.pending and self.pending[0][0] <= now:
            self.apply(self.pending.popleft()[1])


def replication_seed(master: int, index: int) -> np.random.SeedSequence:
    """Seed of replication ``index``: the master entropy with spawn key (index,).

    Depends only on (master, index), so enlarging an ensemble never changes
    the replications it already contained.
    """
    return np.random.SeedSequence(master, spawn_key=(index,))


class PropagatorTable:
    """One-step propagators of the state [f(grid), p0, pN] as lambda varies.

    A step with rate lambda lasts 1/lambda.  Propagators are computed
    lazily on a lattice of lambda values and interpolated linearly between
    neighbours; with ``resolution == 0`` every lambda gets its own.
    """

    def __init__(self, mu, c2_a, c2_b, capacity, points_per_unit=10, resolution=0.01):
        self.mu, self.c2_a, self.c2_b = mu, c2_a, c2_b
        self.capacity = capacity
        self.points_per_unit = points_per_unit
        self.resolution = resolution
        self._nodes: dict[int, np.ndarray] = {}
        self._exact: dict[float, np.ndarray] = {}
        grid = self.model(1.0).grid
        w = np.full(len(grid), grid[1] - grid[0])
        w[[0, -1]] /= 2
        self.mass_vec = np.concatenate([w, [1.0, 1.0]])
        self.mean_vec = self._mean_functional(grid)

    def _mean_functional(self, grid):
        # mean_queue is linear in the state; tabulate it on the unit basis
        n = np.arange(self.capacity + 1)
        vec = np.empty(len(grid) + 2)
        for j in range(len(grid)):
            e = np.zeros(len(grid))
            e[j] = 1.0
            vec[j] = np.dot(n, discretize_samples(grid, e, self.capacity))
        vec[-2], vec[-1] = 0.0, float(self.capacity)
        return vec

    def model(self, lam: float) -> TwoBarrierModel:
        dt = 1.0 / lam
        k = max(1, math.ceil(dt / default_step(lam, self.mu) - 1e-9))
        return TwoBarrierModel(
            capacity=self.capacity,
            coeffs=coeffs(TrafficMoments(lam, self.mu, self.c2_a, self.c2_b)),
            l0=ExponentialSojourn(lam), lN=ExponentialSojourn(self.mu),
            h=dt / k, points_per_unit=self.points_per_unit)

    def exact(self, lam: float) -> np.ndarray:
        P = self._exact.get(lam)
        if P is None:
            P = _conserve_mass(propagator(self.model(lam), 1.0 / lam), self.mass_vec)
            if len(self._exact) > 256:
                self._exact.clear()
            self._exact[lam] = P
        return P

    def _node(self, i: int) -> np.ndarray:
        P = self._nodes.get(i)
        if P is None:
            P = self._nodes[i] = self.exact(round(i * self.resolution, 12))
        return P

    def step(self, lam: float, state: np.ndarray) -> np.ndarray:
        if self.resolution == 0:
            return self.exact(lam) @ state
        pos = lam / self.resolution
        i = int(math.floor(pos + 1e-12))
        w = pos - i
        if i == 0:
            return self.exact(lam) @ state
        if w < 1e-12:
            return self._node(i) @ state
        return (1.0 - w) * (self._node(i) @ state) + w * (self._node(i + 1) @ state)

    def initial_state(self) -> np.ndarray:
        v = np.zeros(len(self.mass_vec))
        v[-2] = 1.0  # empty queue
        return v


def _conserve_mass(P: np.ndarray, mass_vec: np.ndarray) -> np.ndarray:
    """Make ``mass_vec @ P == mass_vec`` exactly.

    The trapezoid rule on the grid under-resolves the sharp density left by
    a recent return to x = 1 or x = N-1, which shows up as a small mass
    deficit per step (O(grid spacing^2)) that would accumulate over
    thousands of steps.  Interior columns are rescaled; the two end nodes
    lie on the absorbing barriers, so their mass belongs to the atoms.
    """
    P = P.copy()
    M = len(mass_vec) - 2
    deficit = mass_vec - mass_vec @ P
    P[M, 0] += deficit[0]
    P[M + 1, M - 1] += deficit[M - 1]
    interior = mass_vec[:M] @ P[:M]
    cols = np.r_[1:M - 1, M, M + 1]
    scale = (interior[cols] + deficit[cols]) / interior[cols]
    P[:M, cols] *= scale
    return P


_TABLES: dict[tuple, PropagatorTable] = {}


def _table_for(config: MixedModelConfig) -> PropagatorTable:
    key = (config.mu, config.c2_a, config.c2_b, config.capacity,
           config.points_per_unit, config.lambda_resolution)
    table = _TABLES.get(key)
    if table is None:
        if len(_TABLES) >= 4:
            _TABLES.clear()
        table = _TABLES[key] = PropagatorTable(*key)
    return table


def run_replication(config: MixedModelConfig, seed=None) -> Trajectory:
    """One replication of the mixed model; deterministic given the seed.

    ``seed`` defaults to ``config.seed`` and may be an int or a SeedSequence.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    table = _table_for(config)
    source = SourceState.from_config(config)
    ctrl = config.controller
    cstate = controllers.initial_state(ctrl)
    state = table.initial_state()
    t = 0.0
    records = [StepRecord(0.0, 0.0, source.lam, 0.0, False, 1.0, 0.0)]
    step = 0
    while t < config.horizon:
        step += 1
        lam = source.lam
        t += 1.0 / lam
        state = table.step(lam, state)
        np.maximum(state, 0.0, out=state)
        mass = float(table.mass_vec @ state)
        if abs(mass - 1.0) > MASS_TOL:
            raise DivergentEvolutionError(
                f"divergent evolution at step {step} (t={t:.4g}, lambda={lam:.4g}): mass {mass:.6f}",
                step=step)
        q = float(table.mean_vec @ state)
        p, cstate = controllers.drop_prob(ctrl, cstate, q)
        loss = bool(rng.random() < p)
        source.decide(t, loss, config.feedback_delay)
        records.append(StepRecord(t, q, source.lam, p, loss, float(state[-2]), float(state[-1])))
    return Trajectory.from_records(records, horizon=config.horizon, hold=False)


@dataclass
class EnsembleResult:
    grid: np.ndarray
    averages: dict[str, np.ndarray]
    rep_means: np.ndarray
    rep_losses: np.ndarray
    final_lambdas: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.rep_means.mean())

    @property
    def stderr(self) -> float:
        r = len(self.rep_means)
        return float(self.rep_means.std(ddof=1) / math.sqrt(r)) if r > 1 else 0.0

    @property
    def total_losses(self) -> int:
        return int(self.rep_losses.sum())


class ReplicationError(ArithmeticError):
    """A numerical failure inside one replication of an ensemble."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"replication {index}: {cause}")
        self.index = index

    def __reduce__(self):
        return (ReplicationError, (self.index, self.args[0].split(": ", 1)[-1]))


def _one(args):
    runner, config, index = args
    try:
        return runner(config, seed=replication_seed(config.seed, index))
    except ArithmeticError as exc:
        raise ReplicationError(index, exc) from exc


def run_ensemble(config: MixedModelConfig, replications: int, workers: int = 1,
                 runner=run_replication) -> EnsembleResult:
    """R independently seeded replications averaged on a common time grid."""
    if replications < 1:
        raise ValueError("replications must be >= 1")
    jobs = [(runner, config, i) for i in range(replications)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(_one, jobs, chunksize=max(1, replications // (4 * workers))))
    else:
        trajs = [_one(j) for j in jobs]
    return aggregate(trajs, config)


def aggregate(trajs, config: MixedModelConfig) -> EnsembleResult:
    grid = np.arange(0.0, config.horizon + 0.5 * config.grid_dt, config.grid_dt)
    sums = None
    for tr in trajs:
        cols = tr.resample(grid)
        if sums is None:
            sums = {k: np.zeros_like(grid) for k in cols if k != "t"}
        for k in sums:
            sums[k] += cols[k]
    averages = {k: v / len(trajs) for k, v in sums.items()}
    return EnsembleResult(
        grid=grid,
        averages=averages,
        rep_means=np.array([tr.long_run_mean(config.warmup_fraction) for tr in trajs]),
        rep_losses=np.array([tr.total_losses for tr in trajs]),
        final_lambdas=np.array([tr.lam[-1] for tr in trajs]),
    )
