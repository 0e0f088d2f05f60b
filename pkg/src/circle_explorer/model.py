"""Hypothesis space, priors and likelihood for the white-circle search problem.

A hypothesis is a circle ``(x0, y0, r)`` lying on a rectangular black field.
Centers are uniform over the field, radii uniform over ``[r_min, r_max]``,
and a point reading is Gaussian about the white level inside the disk and
about the black level outside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Circle:
    x0: float
    y0: float
    r: float

    def as_tuple(self):
        return (self.x0, self.y0, self.r)


@dataclass(frozen=True)
class FieldBounds:
    """Axis-aligned playing field in centimetres."""

    x_min: float = 0.0
    x_max: float = 20.0
    y_min: float = 0.0
    y_max: float = 30.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate field bounds: {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


@dataclass(frozen=True)
class SensorResponse:
    """Expected white/black light levels and the Gaussian noise level."""

    d_white: float = 0.8
    d_black: float = 0.2
    sigma: float = 0.06

    def __post_init__(self):
        if not self.d_white > self.d_black:
            raise ValueError("d_white must exceed d_black")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class Prior:
    """Independent uniform priors on center and radius (closed support)."""

    bounds: FieldBounds = field(default_factory=FieldBounds)
    r_min: float = 1.0
    r_max: float = 15.0

    def __post_init__(self):
        if not 0 <= self.r_min < self.r_max:
            raise ValueError("need 0 <= r_min < r_max")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.bounds.x_min, self.bounds.y_min, self.r_min])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.bounds.x_max, self.bounds.y_max, self.r_max])

    @property
    def volume(self) -> float:
        return self.bounds.width * self.bounds.height * (self.r_max - self.r_min)


@dataclass(frozen=True)
class Measurement:
    x: float
    y: float
    d: float
    index: int


class Dataset:
    """Append-only, 1-indexed sequence of measurements."""

    def __init__(self, measurements: Iterable[Measurement] = ()):
        self._items: List[Measurement] = []
        for m in measurements:
            self.append(m.x, m.y, m.d)

    def append(self, x: float, y: float, d: float) -> Measurement:
        m = Measurement(float(x), float(y), float(d), len(self._items) + 1)
        self._items.append(m)
        return m

    def copy(self) -> "Dataset":
        return Dataset(self._items)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    @property
    def measurements(self) -> List[Measurement]:
        return list(self._items)

    def arrays(self):
        """Return ``(xs, ys, ds)`` as float64 arrays."""
        if not self._items:
            empty = np.zeros(0)
            return empty, empty.copy(), empty.copy()
        a = np.array([(m.x, m.y, m.d) for m in self._items], dtype=float)
        return a[:, 0].copy(), a[:, 1].copy(), a[:, 2].copy()

    def __repr__(self):
        return f"Dataset(n={len(self)})"


def contains_point(c: Circle, x: float, y: float) -> bool:
    # boundary counts as white
    return (x - c.x0) ** 2 + (y - c.y0) ** 2 <= c.r ** 2


def log_prior(c: Circle, bounds: FieldBounds = FieldBounds(),
              r_min: float = 1.0, r_max: float = 15.0) -> float:
    inside = (bounds.x_min <= c.x0 <= bounds.x_max
              and bounds.y_min <= c.y0 <= bounds.y_max
              and r_min <= c.r <= r_max)
    if not inside:
        return -math.inf
    return -math.log(bounds.width * bounds.height * (r_max - r_min))


def sample_prior(bounds: FieldBounds, r_min: float, r_max: float,
                 rng: np.random.Generator, size: int | None = None):
    """Draw circle(s) uniformly from the prior.

    Returns a single :class:`Circle` when ``size`` is None, otherwise an
    array of shape ``(size, 3)``.
    """
    lo = np.array([bounds.x_min, bounds.y_min, r_min])
    hi = np.array([bounds.x_max, bounds.y_max, r_max])
    if size is None:
        u = rng.uniform(lo, hi)
        return Circle(float(u[0]), float(u[1]), float(u[2]))
    return rng.uniform(lo, hi, size=(size, 3))


def point_log_terms(s: SensorResponse, d):
    """Log-density of reading(s) ``d`` under the white and black branches."""
    d = np.asarray(d, dtype=float)
    norm = -0.5 * LOG_2PI - math.log(s.sigma)
    white = norm - 0.5 * ((d - s.d_white) / s.sigma) ** 2
    black = norm - 0.5 * ((d - s.d_black) / s.sigma) ** 2
    return white, black


def log_likelihood_point(c: Circle, s: SensorResponse, m: Measurement) -> float:
    mean = s.d_white if contains_point(c, m.x, m.y) else s.d_black
    z = (m.d - mean) / s.sigma
    return -0.5 * LOG_2PI - math.log(s.sigma) - 0.5 * z * z


def log_likelihood(c: Circle, s: SensorResponse, data: Dataset) -> float:
    return math.fsum(log_likelihood_point(c, s, m) for m in data)


def white_mask(circles: np.ndarray, xs: Sequence[float], ys: Sequence[float]) -> np.ndarray:
    """Boolean ``(n_circles, n_points)`` matrix of disk membership."""
    circles = np.asarray(circles, dtype=float).reshape(-1, 3)
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    dx = xs[None, :] - circles[:, 0:1]
    dy = ys[None, :] - circles[:, 1:2]
    return dx * dx + dy * dy <= circles[:, 2:3] ** 2
