"""Nested sampling over circle hypotheses.

The likelihood of this problem is piecewise constant in circle space (it only
depends on which measured points fall inside the disk), so live points very
often tie on log-likelihood.  Ties are broken with an auxiliary uniform label
carried by each live point; the ordering is lexicographic on
``(log_l, label)``.  This keeps the prior-mass shrinkage statistics exact on
likelihood plateaus, including the fully flat case of an empty dataset.

The sequential loop is compiled with numba.  Its random stream is seeded from
the caller's generator, so a fixed seed gives bit-identical runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple

import numba
import numpy as np
from scipy.special import logsumexp

from .model import Circle, Dataset, Prior, SensorResponse, point_log_terms

_OK, _STALLED, _MAX_ITER = 0, 1, 2


class ExplorationStalled(RuntimeError):
    """The constrained walk could not move away from its starting point."""

    def __init__(self, iteration: int, log_l_floor: float):
        self.iteration = iteration
        self.log_l_floor = log_l_floor
        super().__init__(
            f"constrained exploration stalled at iteration {iteration} "
            f"(log-likelihood floor {log_l_floor:.6g})")


class DegenerateWeights(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    n_live: int = 100
    termination_frac: float = 1e-3
    walk_steps: int = 20
    retry_limit: int = 10
    max_iterations: int = 100_000

    def __post_init__(self):
        if self.n_live < 10:
            raise ValueError("n_live must be at least 10")
        if not 0 < self.termination_frac < 1:
            raise ValueError("termination_frac must lie in (0, 1)")
        if self.walk_steps < 1 or self.retry_limit < 1 or self.max_iterations < 1:
            raise ValueError("walk_steps, retry_limit and max_iterations must be >= 1")


class LivePoint(NamedTuple):
    circle: Circle
    log_l: float


class WeightedSample(NamedTuple):
    circle: Circle
    log_l: float
    log_weight: float


@dataclass(frozen=True)
class NestedRun:
    """Output of one nested-sampling run.

    ``circles``, ``log_l`` and ``log_weight`` hold the dead points followed by
    the final live points, in discard order.
    """

    circles: np.ndarray
    log_l: np.ndarray
    log_weight: np.ndarray
    log_z: float
    log_z_err: float
    info_h: float
    n_live: int
    n_iterations: int
    seed: int
    hit_max_iterations: bool = False

    @property
    def samples(self) -> List[WeightedSample]:
        return [WeightedSample(Circle(*map(float, c)), float(l), float(w))
                for c, l, w in zip(self.circles, self.log_l, self.log_weight)]

    @property
    def weights(self) -> np.ndarray:
        """Normalized posterior weights."""
        return np.exp(self.log_weight - self.log_z)

    @property
    def dead_log_l(self) -> np.ndarray:
        return self.log_l[:self.n_iterations]


@dataclass(frozen=True)
class PosteriorEnsemble:
    """Equally weighted circles drawn from the posterior, shape ``(size, 3)``."""

    circles: np.ndarray
    source_seed: int = 0

    def __post_init__(self):
        arr = np.asarray(self.circles, dtype=float).reshape(-1, 3)
        if len(arr) < 2:
            raise ValueError("an ensemble needs at least two members")
        object.__setattr__(self, "circles", arr)

    @property
    def size(self) -> int:
        return len(self.circles)

    def __len__(self):
        return self.size

    def members(self) -> List[Circle]:
        return [Circle(*map(float, c)) for c in self.circles]


@dataclass(frozen=True)
class Summary:
    mean: np.ndarray = field(repr=False)
    std: np.ndarray = field(repr=False)

    @property
    def mean_x0(self): return float(self.mean[0])

    @property
    def mean_y0(self): return float(self.mean[1])

    @property
    def mean_r(self): return float(self.mean[2])

    @property
    def std_x0(self): return float(self.std[0])

    @property
    def std_y0(self): return float(self.std[1])

    @property
    def std_r(self): return float(self.std[2])

    def __repr__(self):
        m, s = self.mean, self.std
        return (f"Summary(x0={m[0]:.3f}±{s[0]:.3f}, y0={m[1]:.3f}±{s[1]:.3f}, "
                f"r={m[2]:.3f}±{s[2]:.3f})")


# ---------------------------------------------------------------------------
# compiled core


@numba.njit(cache=True)
def _log_l(theta, xs, ys, lw, lb):
    total = 0.0
    r2 = theta[2] * theta[2]
    for i in range(xs.shape[0]):
        dx = xs[i] - theta[0]
        dy = ys[i] - theta[1]
        if dx * dx + dy * dy <= r2:
            total += lw[i]
        else:
            total += lb[i]
    return total


@numba.njit(cache=True)
def _logaddexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@numba.njit(cache=True)
def _nested_kernel(xs, ys, lw, lb, lo, hi, n_live, log_frac,
                   walk_steps, retry_limit, max_iter, seed):
    np.random.seed(seed)
    ndim = 3
    span = hi - lo

    live = np.empty((n_live, ndim))
    live_l = np.empty(n_live)
    live_u = np.empty(n_live)
    for i in range(n_live):
        for d in range(ndim):
            live[i, d] = lo[d] + span[d] * np.random.random()
        live_l[i] = _log_l(live[i], xs, ys, lw, lb)
        live_u[i] = np.random.random()

    dead = np.empty((max_iter, ndim))
    dead_l = np.empty(max_iter)

    log_z = -np.inf
    prev_l = 0.0
    scale = 1.0
    status = 0
    k = 0
    theta = np.empty(ndim)
    prop = np.empty(ndim)
    step = np.empty(ndim)

    done = False
    while k < max_iter:
        worst = 0
        for i in range(1, n_live):
            if live_l[i] < live_l[worst] or (
                    live_l[i] == live_l[worst] and live_u[i] < live_u[worst]):
                worst = i
        l_star = live_l[worst]
        u_star = live_u[worst]
        dead[k] = live[worst]
        dead_l[k] = l_star
        k += 1

        x_prev = math.exp(-(k - 1) / n_live)
        x_cur = math.exp(-k / n_live)
        if k == 1:
            log_z = l_star + math.log(x_prev - x_cur)
        else:
            seg = _logaddexp(prev_l, l_star) - math.log(2.0)
            log_z = _logaddexp(log_z, seg + math.log(x_prev - x_cur))
        prev_l = l_star

        # per-coordinate walk scale from the live spread
        for d in range(ndim):
            mu = 0.0
            for i in range(n_live):
                mu += live[i, d]
            mu /= n_live
            var = 0.0
            for i in range(n_live):
                var += (live[i, d] - mu) ** 2
            step[d] = max(math.sqrt(var / n_live), 1e-9 * span[d])

        moved = False
        cur_l = l_star
        for attempt in range(retry_limit):
            j = worst
            while j == worst:
                j = int(np.random.random() * n_live) % n_live
            theta[:] = live[j]
            cur_l = live_l[j]
            acc = 0
            rej = 0
            for s in range(walk_steps):
                inside = True
                for d in range(ndim):
                    prop[d] = theta[d] + min(scale * step[d], span[d]) * np.random.standard_normal()
                    if prop[d] < lo[d] or prop[d] > hi[d]:
                        inside = False
                if not inside:
                    rej += 1
                    continue
                pl = _log_l(prop, xs, ys, lw, lb)
                if pl < l_star:
                    rej += 1
                    continue
                # plateau points only admit labels above u_star
                w_prop = 1.0 if pl > l_star else 1.0 - u_star
                w_cur = 1.0 if cur_l > l_star else 1.0 - u_star
                if w_prop >= w_cur or np.random.random() * w_cur < w_prop:
                    theta[:] = prop
                    cur_l = pl
                    acc += 1
                else:
                    rej += 1
            if acc > rej:
                scale *= math.exp(1.0 / acc)
            elif acc < rej:
                scale /= math.exp(1.0 / rej)
            if acc > 0:
                moved = True
                break
        if not moved:
            status = 1
            break

        live[worst] = theta
        live_l[worst] = cur_l
        if cur_l > l_star:
            live_u[worst] = np.random.random()
        else:
            live_u[worst] = u_star + (1.0 - u_star) * np.random.random()

        max_l = live_l[0]
        for i in range(1, n_live):
            if live_l[i] > max_l:
                max_l = live_l[i]
        if max_l - k / n_live - log_z < log_frac:
            done = True
            break
    if status == 0 and not done:
        status = 2

    return dead[:k].copy(), dead_l[:k].copy(), live, live_l, status


def _dead_log_widths(n_iter: int, n_live: int) -> np.ndarray:
    """Log prior-mass weight of each discarded point (trapezoid rule)."""
    x = np.exp(-np.arange(n_iter + 1) / n_live)
    seg = x[:-1] - x[1:]
    coef = np.zeros(n_iter)
    coef[0] += seg[0]
    coef[:-1] += 0.5 * seg[1:]
    coef[1:] += 0.5 * seg[1:]
    return np.log(coef)


def run_nested(data: Dataset, response: SensorResponse, prior: Prior = Prior(),
               cfg: SamplerConfig = SamplerConfig(),
               rng: np.random.Generator | None = None) -> NestedRun:
    """Run nested sampling for the circle posterior given ``data``.

    Parameters
    ----------
    data : Dataset
        Measurements so far (may be empty).
    response : SensorResponse
        White/black levels and noise.
    prior : Prior
        Field bounds and radius range.
    cfg : SamplerConfig
        Live-point count, termination fraction and walk settings.
    rng : numpy.random.Generator
        Source of the run's seed.

    Returns
    -------
    NestedRun

    Raises
    ------
    ExplorationStalled
        If no constrained-walk proposal was accepted in ``cfg.retry_limit``
        restarts of ``cfg.walk_steps`` steps each.
    """
    if rng is None:
        rng = np.random.default_rng()
    seed = int(rng.integers(0, 2 ** 32 - 1))
    xs, ys, ds = data.arrays()
    lw, lb = point_log_terms(response, ds)
    lw = np.ascontiguousarray(lw, dtype=np.float64).reshape(-1)
    lb = np.ascontiguousarray(lb, dtype=np.float64).reshape(-1)

    dead, dead_l, live, live_l, status = _nested_kernel(
        xs, ys, lw, lb, prior.lower, prior.upper, cfg.n_live,
        math.log(cfg.termination_frac), cfg.walk_steps, cfg.retry_limit,
        cfg.max_iterations, seed)
    n_iter = len(dead_l)
    if status == _STALLED:
        raise ExplorationStalled(n_iter, float(dead_l[-1]))

    log_w_dead = _dead_log_widths(n_iter, cfg.n_live) + dead_l
    log_w_live = -n_iter / cfg.n_live - math.log(cfg.n_live) + live_l
    order = np.argsort(live_l, kind="stable")

    circles = np.vstack([dead, live[order]])
    log_l = np.concatenate([dead_l, live_l[order]])
    log_weight = np.concatenate([log_w_dead, log_w_live[order]])
    log_z = float(logsumexp(log_weight))
    p = np.exp(log_weight - log_z)
    info_h = max(float(np.sum(p * (log_l - log_z))), 0.0)
    return NestedRun(circles=circles, log_l=log_l, log_weight=log_weight,
                     log_z=log_z, log_z_err=math.sqrt(info_h / cfg.n_live),
                     info_h=info_h, n_live=cfg.n_live, n_iterations=n_iter,
                     seed=seed, hit_max_iterations=status == _MAX_ITER)


def systematic_indices(weights: np.ndarray, size: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Low-variance resampling indices for normalized ``weights``."""
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    positions = (rng.random() + np.arange(size)) / size
    idx = np.searchsorted(cdf, positions, side="right")
    return np.minimum(idx, len(weights) - 1)


def resample_ensemble(run: NestedRun, size: int = 150,
                      rng: np.random.Generator | None = None) -> PosteriorEnsemble:
    """Draw an equally weighted ensemble from a weighted run."""
    if size < 2:
        raise ValueError("ensemble size must be at least 2")
    if rng is None:
        rng = np.random.default_rng()
    log_w = np.asarray(run.log_weight, dtype=float)
    if np.any(np.isnan(log_w)) or np.any(log_w == np.inf) or np.all(log_w == -np.inf):
        raise DegenerateWeights("log-weights must be finite (or -inf) with some mass")
    w = np.exp(log_w - np.max(log_w))
    w /= w.sum()
    idx = systematic_indices(w, size, rng)
    idx = idx[rng.permutation(size)]
    return PosteriorEnsemble(np.asarray(run.circles)[idx].copy(), source_seed=run.seed)


def summarize(ensemble: PosteriorEnsemble) -> Summary:
    c = np.asarray(ensemble.circles, dtype=float)
    return Summary(mean=c.mean(axis=0), std=c.std(axis=0))


def write_ensemble(path, ensemble: PosteriorEnsemble) -> None:
    lines = ["x0,y0,r"]
    lines += [f"{x!r},{y!r},{r!r}" for x, y, r in ensemble.circles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ensemble(path) -> PosteriorEnsemble:
    rows = Path(path).read_text().splitlines()
    if not rows or rows[0].replace(" ", "") != "x0,y0,r":
        raise ValueError(f"{path}: missing 'x0,y0,r' header")
    data = [tuple(float(v) for v in row.split(",")) for row in rows[1:] if row.strip()]
    if any(len(t) != 3 for t in data):
        raise ValueError(f"{path}: expected three columns per row")
    return PosteriorEnsemble(np.array(data, dtype=float))
