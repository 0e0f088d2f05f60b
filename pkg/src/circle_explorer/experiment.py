"""The measure / infer / select cycle and its on-disk artifacts."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np

from .inquiry import (EntropyMap, InquiryConfig, build_jittered_grid, select_measurement,
                      write_pgm, write_sidecar)
from .model import Dataset, Prior, SensorResponse, sample_prior
from .nested import (PosteriorEnsemble, SamplerConfig, Summary, resample_ensemble,
                     run_nested, summarize, write_ensemble)
from .sensor import SensorBusy, SensorReading, SensorTimeout, quantize_position

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "x", "y", "d", "entropy", "mean_x0", "std_x0",
               "mean_y0", "std_y0", "mean_r", "std_r", "log_z", "ms")


@dataclass(frozen=True)
class StoppingRule:
    tol_x0: float = 0.5
    tol_y0: float = 0.5
    tol_r: float = 0.5
    max_measurements: int = 100

    def __post_init__(self):
        if min(self.tol_x0, self.tol_y0, self.tol_r) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_measurements < 1:
            raise ValueError("max_measurements must be >= 1")

    def satisfied(self, summary: Summary) -> bool:
        return bool(summary.std_x0 <= self.tol_x0 and summary.std_y0 <= self.tol_y0
                    and summary.std_r <= self.tol_r)


@dataclass(frozen=True)
class ExperimentConfig:
    prior: Prior = field(default_factory=Prior)
    response: SensorResponse = field(default_factory=SensorResponse)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    inquiry: InquiryConfig = field(default_factory=InquiryConfig)
    stopping: StoppingRule = field(default_factory=StoppingRule)
    ensemble_size: int = 150
    seed: int = 0
    retries: int = 3
    record_timing: bool = False

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be >= 2")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


@dataclass(frozen=True)
class ExperimentState:
    dataset: Dataset
    ensemble: PosteriorEnsemble
    summary: Summary
    iteration: int
    converged: bool
    log_z: float
    seed: int
    exhausted: bool = False


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    x: float
    y: float
    d: float
    entropy: float
    summary: Summary
    log_z: float
    wall_ms: float
    white_fraction: float = float("nan")
    entropy_map: Optional[EntropyMap] = field(default=None, repr=False, compare=False)

    def row(self, timing: bool = False) -> List[str]:
        m, s = self.summary.mean.tolist(), self.summary.std.tolist()
        ms = str(int(round(self.wall_ms))) if timing else "0"
        vals = [self.x, self.y, self.d, self.entropy, m[0], s[0], m[1], s[1], m[2], s[2], self.log_z]
        return [str(self.iteration)] + [repr(float(v)) for v in vals] + [ms]


def iteration_streams(seed: int, iteration: int):
    """Independent generators for selection, inference and resampling."""
    children = np.random.SeedSequence([seed, iteration]).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def infer(dataset: Dataset, cfg: ExperimentConfig, iteration: int):
    """Posterior ensemble, summary and log-evidence after ``iteration`` measurements.

    With no data the posterior is the prior, so the ensemble is a direct prior
    draw and the log-evidence is zero.
    """
    _, nested_rng, resample_rng = iteration_streams(cfg.seed, iteration)
    if len(dataset) == 0:
        p = cfg.prior
        circles = sample_prior(p.bounds, p.r_min, p.r_max, nested_rng, size=cfg.ensemble_size)
        ensemble = PosteriorEnsemble(circles, source_seed=cfg.seed)
        return ensemble, summarize(ensemble), 0.0
    run = run_nested(dataset, cfg.response, cfg.prior, cfg.sampler, nested_rng)
    ensemble = resample_ensemble(run, cfg.ensemble_size, resample_rng)
    return ensemble, summarize(ensemble), run.log_z


def bootstrap(cfg: ExperimentConfig = ExperimentConfig()) -> ExperimentState:
    ensemble, summary, log_z = infer(Dataset(), cfg, 0)
    return ExperimentState(Dataset(), ensemble, summary, 0, False, log_z, cfg.seed)


def _measure_with_retry(sensor, x: float, y: float, retries: int) -> SensorReading:
    for attempt in range(retries + 1):
        try:
            return sensor.measure(x, y)
        except (SensorTimeout, SensorBusy) as exc:
            if attempt == retries:
                raise
            log.warning("sensor %s, retrying (%d/%d)", exc, attempt + 1, retries)
    raise AssertionError("unreachable")


def step(state: ExperimentState, sensor, cfg: ExperimentConfig
         ) -> Tuple[ExperimentState, IterationRecord]:
    """Select, measure, re-infer.  Returns the new state and its log record."""
    if state.converged:
        raise ValueError("experiment already converged")
    if state.iteration >= cfg.stopping.max_measurements:
        raise ValueError("measurement budget exhausted")
    t0 = time.perf_counter()
    k = state.iteration + 1
    select_rng, _, _ = iteration_streams(cfg.seed, k)
    (bx, by), emap = select_measurement(state.ensemble, cfg.response, cfg.prior.bounds,
                                        cfg.inquiry, select_rng)
    x, y = quantize_position(bx), quantize_position(by)
    reading = _measure_with_retry(sensor, x, y, cfg.retries)

    dataset = state.dataset.copy()
    dataset.append(x, y, reading.value)
    ensemble, summary, log_z = infer(dataset, cfg, k)
    converged = cfg.stopping.satisfied(summary)
    new_state = ExperimentState(
        dataset, ensemble, summary, k, converged, log_z, cfg.seed,
        exhausted=not converged and k >= cfg.stopping.max_measurements)
    record = IterationRecord(
        iteration=k, x=x, y=y, d=reading.value, entropy=emap.best_entropy,
        summary=summary, log_z=log_z, wall_ms=1e3 * (time.perf_counter() - t0),
        white_fraction=float(emap.white_fraction[emap.best_index]), entropy_map=emap)
    return new_state, record


class ArtifactWriter:
    """Writes the iteration log, ensemble dumps and entropy maps into ``out``."""

    def __init__(self, out, timing: bool = False):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.timing = timing
        self.log_path = self.out / "log.csv"
        with open(self.log_path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(LOG_COLUMNS)

    def ensemble(self, k: int, ensemble: PosteriorEnsemble):
        write_ensemble(self.out / f"iter_{k}_ensemble.csv", ensemble)

    def record(self, rec: IterationRecord, ensemble: PosteriorEnsemble):
        with open(self.log_path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(rec.row(self.timing))
        self.ensemble(rec.iteration, ensemble)
        if rec.entropy_map is not None:
            write_pgm(self.out / f"iter_{rec.iteration}_entropy.pgm", rec.entropy_map)
            write_sidecar(self.out / f"iter_{rec.iteration}_entropy.txt", rec.entropy_map)


def run_experiment(cfg: ExperimentConfig, sensor, out=None,
                   callback: Optional[Callable[[ExperimentState, IterationRecord], None]] = None):
    """Iterate :func:`step` until the stopping rule holds or the budget runs out.

    Returns ``(final_state, records)``.  Running out of budget is not an error;
    the final state then has ``converged=False`` and ``exhausted=True``.
    """
    writer = ArtifactWriter(out, cfg.record_timing) if out is not None else None
    state = bootstrap(cfg)
    if writer is not None:
        writer.ensemble(0, state.ensemble)
    records: List[IterationRecord] = []
    while not state.converged and state.iteration < cfg.stopping.max_measurements:
        state, rec = step(state, sensor, cfg)
        if writer is not None:
            writer.record(rec, state.ensemble)
        else:
            rec = replace(rec, entropy_map=None)
        records.append(rec)
        log.info("iter %d at (%.3f, %.3f) d=%.4f H=%.3f %r", rec.iteration, rec.x, rec.y,
                 rec.d, rec.entropy, rec.summary)
        if callback is not None:
            callback(state, rec)
    return state, records


def read_log(path) -> List[dict]:
    """Parse an iteration log; raises ``ValueError`` on a malformed file."""
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != LOG_COLUMNS:
        raise ValueError(f"{path}: header must be {','.join(LOG_COLUMNS)}")
    out = []
    for n, row in enumerate(rows[1:], start=1):
        if len(row) != len(LOG_COLUMNS):
            raise ValueError(f"{path}: row {n} has {len(row)} fields")
        try:
            rec = {"iteration": int(row[0])}
            rec.update({c: float(v) for c, v in zip(LOG_COLUMNS[1:-1], row[1:-1])})
            rec["ms"] = float(row[-1])
        except ValueError as exc:
            raise ValueError(f"{path}: row {n}: {exc}") from None
        if rec["iteration"] != n:
            raise ValueError(f"{path}: row {n} has iteration {rec['iteration']}")
        out.append(rec)
    return out


class ReplayEntry(NamedTuple):
    ensemble: PosteriorEnsemble
    summary: Summary


def replay(rows: List[dict], cfg: ExperimentConfig) -> List[ReplayEntry]:
    """Re-run inference over logged measurements.

    Entry ``k`` holds the ensemble and summary after the first ``k`` rows;
    entry 0 is the prior ensemble.
    """
    dataset = Dataset()
    out = [ReplayEntry(*infer(dataset, cfg, 0)[:2])]
    for row in rows:
        dataset.append(row["x"], row["y"], row["d"])
        out.append(ReplayEntry(*infer(dataset, cfg, row["iteration"])[:2]))
    return out


def raster_positions(prior: Prior, spacing: float = 1.0) -> np.ndarray:
    """Cell-centred scan lattice over the field."""
    return build_jittered_grid(prior.bounds, spacing, jitter=(0.0, 0.0)).points


def raster_scan(cfg: ExperimentConfig, sensor, spacing: float = 1.0):
    """Measure every lattice point, then infer once from the whole scan.

    Returns ``(n_measurements, summary, log_z)``.
    """
    dataset = Dataset()
    for x, y in raster_positions(cfg.prior, spacing):
        x, y = quantize_position(x), quantize_position(y)
        dataset.append(x, y, _measure_with_retry(sensor, x, y, cfg.retries).value)
    _, summary, log_z = infer(dataset, cfg, len(dataset))
    return len(dataset), summary, log_z
