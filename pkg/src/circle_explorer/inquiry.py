"""Choosing the next measurement by maximum predictive entropy.

For every point of a randomly shifted candidate lattice the posterior ensemble
is pushed through the sensor model to give a cloud of possible readings; the
entropy of that cloud's histogram scores the point and the best-scoring point
is measured next.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .model import FieldBounds, SensorResponse, white_mask
from .nested import PosteriorEnsemble


class EmptyGrid(ValueError):
    pass


@dataclass(frozen=True)
class InquiryConfig:
    spacing: float = 1.0
    n_bins: int = 16
    k_per_model: int = 5

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        if self.n_bins < 1 or self.k_per_model < 1:
            raise ValueError("n_bins and k_per_model must be >= 1")


@dataclass(frozen=True)
class CandidateGrid:
    """Rectangular lattice of candidate positions.

    ``points`` is ordered row by row: ``y`` ascending in the outer loop and
    ``x`` ascending within a row.
    """

    xs: np.ndarray
    ys: np.ndarray
    spacing: float
    jitter: Tuple[float, float]
    seed: int = 0

    @property
    def points(self) -> np.ndarray:
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    @property
    def shape(self) -> Tuple[int, int]:
        """``(rows, cols)`` = ``(len(ys), len(xs))``."""
        return len(self.ys), len(self.xs)

    def __len__(self):
        return len(self.xs) * len(self.ys)


@dataclass(frozen=True)
class EntropyMap:
    grid: CandidateGrid
    entropies: np.ndarray
    white_fraction: np.ndarray
    best_index: int
    n_bins: int

    @property
    def best(self) -> Tuple[float, float]:
        x, y = self.grid.points[self.best_index]
        return float(x), float(y)

    @property
    def best_entropy(self) -> float:
        return float(self.entropies[self.best_index])

    @property
    def entries(self) -> List[Tuple[Tuple[float, float], float]]:
        return [((float(x), float(y)), float(h))
                for (x, y), h in zip(self.grid.points, self.entropies)]


def _axis(lo: float, hi: float, spacing: float, offset: float) -> np.ndarray:
    n = int(math.ceil((hi - lo) / spacing)) + 2
    ticks = lo + spacing / 2 + offset + spacing * np.arange(-1, n)
    return ticks[(ticks >= lo) & (ticks <= hi)]


def build_jittered_grid(bounds: FieldBounds, spacing: float,
                        rng: np.random.Generator | None = None,
                        jitter: Tuple[float, float] | None = None) -> CandidateGrid:
    """Lattice at ``spacing`` shifted by one uniform offset in ``[-s/2, s/2]^2``.

    With zero jitter the points sit at cell centres, so a 20 x 30 field at
    spacing 1 gives 600 points.  Pass ``jitter`` to fix the offset.
    """
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    seed = 0
    if jitter is None:
        if rng is None:
            rng = np.random.default_rng()
        seed = int(rng.integers(0, 2 ** 32 - 1))
        dx, dy = np.random.default_rng(seed).uniform(-spacing / 2, spacing / 2, size=2)
    else:
        dx, dy = jitter
        if abs(dx) > spacing / 2 or abs(dy) > spacing / 2:
            raise ValueError("jitter must lie within half a spacing")
    xs = _axis(bounds.x_min, bounds.x_max, spacing, dx)
    ys = _axis(bounds.y_min, bounds.y_max, spacing, dy)
    if len(xs) == 0 or len(ys) == 0:
        raise EmptyGrid(f"spacing {spacing} leaves no grid point inside the field")
    return CandidateGrid(xs, ys, float(spacing), (float(dx), float(dy)), seed)


def predictive_draws(ensemble: PosteriorEnsemble, response: SensorResponse,
                     pos: Tuple[float, float], k_per_model: int = 1,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Possible readings at ``pos``: ``k_per_model`` draws per ensemble member."""
    if rng is None:
        rng = np.random.default_rng()
    inside = white_mask(ensemble.circles, [pos[0]], [pos[1]])[:, 0]
    means = np.where(inside, response.d_white, response.d_black)
    means = np.repeat(means, k_per_model)
    return means + response.sigma * rng.standard_normal(means.shape)


def _bin_counts(values: np.ndarray, n_bins: int, lo, hi) -> np.ndarray:
    """Row-wise equal-width histogram counts, shape ``(rows, n_bins)``."""
    values = np.atleast_2d(values)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (values.shape[0],))[:, None]
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (values.shape[0],))[:, None]
    width = hi - lo
    safe = np.where(width > 0, width, 1.0)
    idx = np.floor((values - lo) / safe * n_bins).astype(np.int64)
    idx = np.where(width > 0, idx, 0)
    np.clip(idx, 0, n_bins - 1, out=idx)
    rows = np.arange(values.shape[0])[:, None] * n_bins
    counts = np.bincount((idx + rows).ravel(), minlength=values.shape[0] * n_bins)
    return counts.reshape(values.shape[0], n_bins)


def _entropy_from_counts(counts: np.ndarray) -> np.ndarray:
    total = counts.sum(axis=-1, keepdims=True)
    p = counts / total
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(counts > 0, -p * np.log(p), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


def histogram_entropy(values, n_bins: int = 16,
                      value_range: Tuple[float, float] | None = None) -> float:
    """Entropy (nats) of an equal-width histogram of ``values``.

    Bins span ``[min, max]`` of the values unless ``value_range`` is given;
    values outside an explicit range fall into the end bins.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("histogram_entropy needs at least one value")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    lo, hi = (values.min(), values.max()) if value_range is None else value_range
    return float(_entropy_from_counts(_bin_counts(values[None, :], n_bins, lo, hi))[0])


def predictive_entropy(circles, points, response: SensorResponse, n_bins: int = 16,
                       k_per_model: int = 5, rng: np.random.Generator | None = None):
    """Histogram entropy of the predictive readings at each of ``points``.

    All points share one histogram range, the span of every draw made in the
    call, so entropies are comparable across points.  The points also share
    one vector of standard-normal noise: the ``j``-th draw at a point is
    ``mean_j + sigma * z_j`` where the first ``n_white * k_per_model`` means
    are white.  A point's score is therefore a function of its white count
    alone, independent of the order of ``circles``, and equal counts tie
    exactly instead of being ranked by noise.

    Returns
    -------
    entropies, white_fraction : ndarray
        Both of shape ``(len(points),)``.
    """
    if rng is None:
        rng = np.random.default_rng()
    circles = np.asarray(circles, dtype=float).reshape(-1, 3)
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n_white = white_mask(circles, points[:, 0], points[:, 1]).sum(axis=0)
    m = len(circles) * k_per_model

    z = rng.standard_normal(m)
    white_cols = np.arange(m)[None, :] < (n_white * k_per_model)[:, None]
    values = np.where(white_cols, response.d_white, response.d_black) + response.sigma * z[None, :]

    counts = _bin_counts(values, n_bins, values.min(), values.max())
    return _entropy_from_counts(counts), n_white / len(circles)


def entropy_map(ensemble: PosteriorEnsemble, response: SensorResponse,
                grid: CandidateGrid, n_bins: int = 16, k_per_model: int = 5,
                rng: np.random.Generator | None = None) -> EntropyMap:
    """Score every grid point; ties resolve to the lowest grid index."""
    if len(grid) == 0:
        raise EmptyGrid("empty candidate grid")
    h, frac = predictive_entropy(ensemble.circles, grid.points, response,
                                 n_bins, k_per_model, rng)
    return EntropyMap(grid=grid, entropies=h, white_fraction=frac,
                      best_index=int(np.argmax(h)), n_bins=n_bins)


def select_measurement(ensemble: PosteriorEnsemble, response: SensorResponse,
                       bounds: FieldBounds, cfg: InquiryConfig = InquiryConfig(),
                       rng: np.random.Generator | None = None):
    """Build a fresh jittered grid and return ``(best_position, entropy_map)``."""
    if rng is None:
        rng = np.random.default_rng()
    grid = build_jittered_grid(bounds, cfg.spacing, rng)
    emap = entropy_map(ensemble, response, grid, cfg.n_bins, cfg.k_per_model, rng)
    return emap.best, emap


def pgm_pixels(emap: EntropyMap) -> np.ndarray:
    """Greyscale image of the map, top row = largest ``y``."""
    top = math.log(emap.n_bins)
    img = np.zeros(emap.grid.shape, dtype=np.uint8)
    if top > 0:
        scaled = np.rint(np.clip(emap.entropies / top, 0.0, 1.0) * 255.0)
        img = scaled.astype(np.uint8).reshape(emap.grid.shape)
    return img[::-1]


def write_pgm(path, emap: EntropyMap) -> None:
    img = pgm_pixels(emap)
    rows, cols = img.shape
    header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end].decode("ascii"))
        pos = end
    if tokens[0] != "P5":
        raise ValueError("not a binary PGM")
    cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError("only 8-bit PGM is supported")
    data = np.frombuffer(raw[pos + 1:pos + 1 + rows * cols], dtype=np.uint8)
    return data.reshape(rows, cols)


def write_sidecar(path, emap: EntropyMap) -> None:
    bx, by = emap.best
    lines = [f"# selected {bx!r} {by!r} {emap.best_entropy!r}",
             f"# n_bins {emap.n_bins}",
             "x y entropy"]
    lines += [f"{x!r} {y!r} {h!r}"
              for (x, y), h in zip(emap.grid.points.tolist(), emap.entropies.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")
