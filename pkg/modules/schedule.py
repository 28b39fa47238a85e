"""
Schedule Module
Piecewise-linear time functions for temperature, load and displacement
factors, plus boundary-condition switch events
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from modules.errors import InvalidArgumentError
from modules.material import WLFParams, shift_factor

logger = logging.getLogger(__name__)


@dataclass
class PiecewiseLinear:
    """Linear interpolation between breakpoints, held constant outside them"""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or len(self.times) == 0 or len(self.times) != len(self.values):
            raise InvalidArgumentError("piecewise-linear function needs matching, non-empty breakpoints")
        if np.any(np.diff(self.times) < 0.0):
            raise InvalidArgumentError("breakpoint times must be sorted")

    def __call__(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))

    @classmethod
    def constant(cls, value: float) -> "PiecewiseLinear":
        return cls([0.0], [value])

    @classmethod
    def from_points(cls, points: Sequence[Sequence[float]]) -> "PiecewiseLinear":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(pts[:, 0], pts[:, 1])

    def to_points(self) -> List[Tuple[float, float]]:
        return [(float(t), float(v)) for t, v in zip(self.times, self.values)]


@dataclass(frozen=True)
class SwitchEvent:
    """Named boundary-condition switch; conditions subscribe to it by name"""

    time: float
    name: str


@dataclass
class Schedule:
    total_time: float
    temperature: PiecewiseLinear
    factors: Dict[str, PiecewiseLinear] = field(default_factory=dict)
    events: List[SwitchEvent] = field(default_factory=list)

    def __post_init__(self):
        if self.total_time <= 0.0:
            raise InvalidArgumentError(f"total time must be positive, got {self.total_time}")
        self.events = sorted(self.events, key=lambda e: e.time)

    def factor(self, name: str, t: float) -> float:
        if name not in self.factors:
            raise InvalidArgumentError(f"unknown schedule factor '{name}'")
        return self.factors[name](t)

    def events_due(self, t: float, done: set, eps: float = 1e-12) -> List[SwitchEvent]:
        return [e for e in self.events if e.time <= t + eps and e.name not in done]

    def check_temperature_range(self, wlf: WLFParams):
        """Raises TemperatureRangeError if any breakpoint leaves the WLF range"""
        # piecewise-linear, so the extremes sit on breakpoints
        for T in self.temperature.values:
            shift_factor(wlf, float(T))

    def time_grid(self, h: float) -> np.ndarray:
        """Uniform grid of step h with every event time inserted as a breakpoint"""
        if h <= 0.0:
            raise InvalidArgumentError(f"time step must be positive, got {h}")
        steps = int(np.ceil(self.total_time / h - 1e-9))
        grid = np.minimum(np.arange(steps + 1) * h, self.total_time)
        extra = [e.time for e in self.events if 0.0 < e.time < self.total_time]
        grid = np.unique(np.concatenate([grid, extra]))
        # drop slivers created by inserted event times
        keep = np.concatenate([[True], np.diff(grid) > 1e-9 * h])
        return grid[keep]
