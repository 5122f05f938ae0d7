"""Event-driven simulation of the G/G/1/N queue with AQM and an AIMD source.

Serves as the reference for the mixed diffusion model: same controllers,
same source rule, but every packet is simulated.  The controller is
consulted on each arrival with the number of packets in the system
(smoothed by RED's EWMA when configured); a drop or a full buffer counts as
a loss for the source.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from collections import deque

import numpy as np

from . import controllers
from .feedback_loop import MixedModelConfig, SourceState
from .trajectory import StepRecord, Trajectory

__all__ = ["ArrivalProcess", "QueueStats", "EventQueue", "sample_interarrival", "run_des"]

# tie-break order for simultaneous events
DEPARTURE, ARRIVAL, FEEDBACK = 0, 1, 2


@dataclass(frozen=True)
class ArrivalProcess:
    """Renewal process matched to a rate and a squared coefficient of variation.

    c2 == 1 is exponential, c2 < 1 a mixture of Erlang-(k-1) and Erlang-k
    with a common phase rate (pure Erlang-k when c2 = 1/k), c2 > 1 a
    two-phase hyperexponential with balanced means, c2 == 0 deterministic.
    """

    rate: float
    c2: float = 1.0

    def __post_init__(self):
        if self.rate <= 0 or self.c2 < 0:
            raise ValueError("need rate > 0 and c2 >= 0")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    def with_rate(self, rate: float) -> "ArrivalProcess":
        return ArrivalProcess(rate, self.c2)


def _erlang_mix(c2: float):
    k = math.ceil(1.0 / c2 - 1e-9)
    p = (k * c2 - math.sqrt(k * (1 + c2) - k * k * c2)) / (1 + c2)
    return k, max(0.0, p)


def _h2_balanced(c2: float):
    p1 = 0.5 * (1.0 + math.sqrt((c2 - 1.0) / (c2 + 1.0)))
    return p1, 2.0 * p1, 2.0 * (1.0 - p1)  # probability, rates in units of 1/mean


def sample_interarrival(process: ArrivalProcess, rng: np.random.Generator) -> float:
    mean = 1.0 / process.rate
    c2 = process.c2
    if c2 == 1.0:
        return rng.exponential(mean)
    if c2 == 0.0:
        return mean
    if c2 < 1.0:
        k, p = _erlang_mix(c2)
        stages = k - 1 if rng.random() < p else k
        phase_rate = (k - p) / mean
        return rng.gamma(stages, 1.0 / phase_rate)
    p1, r1, r2 = _h2_balanced(c2)
    rate = r1 if rng.random() < p1 else r2
    return rng.exponential(mean / rate)


class EventQueue:
    """Heap of (time, priority, sequence, kind, payload); ties are deterministic."""

    def __init__(self):
        self._heap = []
        self._seq = 0

    def push(self, time: float, kind: int, payload=None) -> None:
        heapq.heappush(self._heap, (time, kind, self._seq, payload))
        self._seq += 1

    def pop(self):
        time, kind, _, payload = heapq.heappop(self._heap)
        return time, kind, payload

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class QueueStats:
    mean_queue: float       # time-weighted over the post-warm-up window
    aqm_drops: int
    overflow_drops: int
    arrivals: int
    departures: int
    throughput: float       # departures per unit time in the window
    mean_response: float    # sojourn of packets admitted in the window

    @property
    def losses(self) -> int:
        return self.aqm_drops + self.overflow_drops


def run_des(config: MixedModelConfig, seed=None, trace: list | None = None):
    """Simulate one replication; returns (Trajectory, QueueStats).

    If ``trace`` is a list, every processed event is appended to it as
    (time, kind, queue length after the event).
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    N = config.capacity
    ctrl = config.des_controller()
    cstate = controllers.initial_state(ctrl)
    source = SourceState.from_config(config)
    arrivals = ArrivalProcess(source.lam, config.c2_a)
    service = ArrivalProcess(config.mu, config.c2_b)
    horizon = config.horizon
    t_warm = config.warmup_fraction * horizon

    events = EventQueue()
    events.push(sample_interarrival(arrivals, rng), ARRIVAL)
    q = 0
    in_service_since = deque()
    last_t = 0.0
    area = 0.0
    p = 0.0
    n_arr = n_dep = aqm = overflow = 0
    w_dep = 0
    resp_sum = 0.0
    resp_n = 0
    records = [StepRecord(0.0, 0.0, source.lam, 0.0, False, 1.0, 0.0)]

    while len(events):
        t, kind, payload = events.pop()
        if t > horizon:
            break
        if t > t_warm:
            area += q * (t - max(last_t, t_warm))
        last_t = t
        loss = False
        if kind == DEPARTURE:
            q -= 1
            arrived = in_service_since.popleft()
            if t > t_warm:
                w_dep += 1
                if arrived >= t_warm:
                    resp_sum += t - arrived
                    resp_n += 1
            if q > 0:
                events.push(t + sample_interarrival(service, rng), DEPARTURE)
        elif kind == ARRIVAL:
            n_arr += 1
            p, cstate = controllers.drop_prob(ctrl, cstate, q)
            if rng.random() < p:
                aqm += 1
                loss = True
            elif q >= N:
                overflow += 1
                loss = True
            else:
                q += 1
                in_service_since.append(t)
                if q == 1:
                    events.push(t + sample_interarrival(service, rng), DEPARTURE)
            if config.feedback_delay > 0:
                events.push(t + config.feedback_delay, FEEDBACK, loss)
            else:
                source.apply(loss)
            events.push(t + sample_interarrival(arrivals.with_rate(source.lam), rng), ARRIVAL)
        else:
            source.apply(payload)
        if trace is not None:
            trace.append((t, kind, q))
        records.append(StepRecord(t, float(q), source.lam, p, loss,
                                  1.0 if q == 0 else 0.0, 1.0 if q == N else 0.0))

    area += q * (horizon - max(last_t, t_warm))
    window = horizon - t_warm
    stats = QueueStats(
        mean_queue=area / window,
        aqm_drops=aqm,
        overflow_drops=overflow,
        arrivals=n_arr,
        departures=w_dep,
        throughput=w_dep / window,
        mean_response=resp_sum / resp_n if resp_n else 0.0,
    )
    return Trajectory.from_records(records, horizon=horizon, hold=True), stats


def run_des_trajectory(config: MixedModelConfig, seed=None) -> Trajectory:
    """Trajectory-only wrapper with the run_replication signature."""
    return run_des(config, seed=seed)[0]
