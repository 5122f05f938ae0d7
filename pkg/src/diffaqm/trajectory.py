"""Per-step records shared by the mixed model and the simulator."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = ["StepRecord", "Trajectory", "COLUMNS"]

COLUMNS = ("t", "mean_queue", "lambda", "drop_prob", "loss", "p0", "pN")


class StepRecord(NamedTuple):
    t: float
    mean_queue: float
    lam: float
    drop_prob: float
    loss: bool
    p0: float
    pN: float


@dataclass
class Trajectory:
    """Columnar sequence of StepRecords.

    ``hold`` selects how values behave between records: False means the
    quantity varies smoothly and is interpolated linearly (diffusion
    model); True means it is piecewise constant and holds its last value
    (event simulation).
    """

    t: np.ndarray
    mean_queue: np.ndarray
    lam: np.ndarray
    drop_prob: np.ndarray
    loss: np.ndarray
    p0: np.ndarray
    pN: np.ndarray
    horizon: float
    hold: bool = False

    @classmethod
    def from_records(cls, records, horizon: float, hold: bool = False) -> "Trajectory":
        cols = list(zip(*records)) if records else [()] * 7
        arr = [np.asarray(c, dtype=float) for c in cols]
        return cls(arr[0], arr[1], arr[2], arr[3], arr[4].astype(bool), arr[5], arr[6],
                   horizon=float(horizon), hold=hold)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i) -> StepRecord:
        return StepRecord(float(self.t[i]), float(self.mean_queue[i]), float(self.lam[i]),
                          float(self.drop_prob[i]), bool(self.loss[i]),
                          float(self.p0[i]), float(self.pN[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def total_losses(self) -> int:
        return int(self.loss.sum())

    def _sample(self, values, grid):
        if self.hold:
            idx = np.searchsorted(self.t, grid, side="right") - 1
            return values[np.clip(idx, 0, len(values) - 1)]
        return np.interp(grid, self.t, values)

    def resample(self, grid) -> dict[str, np.ndarray]:
        """Values on a common time grid; ``loss`` becomes losses per grid cell."""
        grid = np.asarray(grid, dtype=float)
        out = {"t": grid}
        for name in ("mean_queue", "lam", "drop_prob", "p0", "pN"):
            out[name] = self._sample(getattr(self, name), grid)
        loss_t = self.t[self.loss]
        counts = np.searchsorted(loss_t, grid, side="right")
        out["loss"] = np.diff(counts, prepend=0).astype(float)
        return out

    def time_average(self, values, start: float, end: float | None = None) -> float:
        """Time average of a recorded column over [start, end]."""
        end = self.horizon if end is None else end
        if end <= start:
            raise ValueError("empty averaging window")
        values = np.asarray(values, dtype=float)
        inner = (self.t > start) & (self.t < end)
        ts = np.concatenate(([start], self.t[inner], [end]))
        vs = self._sample(values, ts)
        if self.hold:
            return float(np.dot(vs[:-1], np.diff(ts)) / (end - start))
        return float(np.trapezoid(vs, ts) / (end - start))

    def long_run_mean(self, warmup_fraction: float = 0.2) -> float:
        return self.time_average(self.mean_queue, warmup_fraction * self.horizon)
