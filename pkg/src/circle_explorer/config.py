"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Optional

from .experiment import ExperimentConfig, StoppingRule
from .inquiry import InquiryConfig
from .model import Circle, FieldBounds, Prior, SensorResponse
from .nested import SamplerConfig
from .sensor import GroundTruth


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    x_min: float = 0.0
    x_max: float = 20.0
    y_min: float = 0.0
    y_max: float = 30.0
    r_min: float = 1.0
    r_max: float = 15.0
    d_white: float = 0.8
    d_black: float = 0.2
    sigma: float = 0.06
    true_x0: Optional[float] = None
    true_y0: Optional[float] = None
    true_r: Optional[float] = None
    n_live: int = 100
    termination_frac: float = 1e-3
    walk_steps: int = 20
    retry_limit: int = 10
    max_iterations: int = 100_000
    grid_spacing: float = 1.0
    n_bins: int = 16
    k_per_model: int = 5
    ensemble_size: int = 150
    tol_x0: float = 0.5
    tol_y0: float = 0.5
    tol_r: float = 0.5
    max_measurements: int = 100
    seed: int = 0
    sensor: str = "simulated"
    timeout: float = 10.0
    retries: int = 3
    latency_ms: float = 0.0
    raster_spacing: float = 1.0
    record_timing: bool = False
    out: str = "run"

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    def update(self, values: Dict[str, str]) -> "RunConfig":
        types = {f.name: f.type for f in fields(self)}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(self, key, _coerce(key, types[key], raw))
        return self

    def has_truth(self) -> bool:
        return None not in (self.true_x0, self.true_y0, self.true_r)

    def set_truth(self, spec: str):
        parts = spec.split(",")
        if len(parts) != 3:
            raise ConfigError(f"true circle must be X,Y,R, got {spec!r}")
        self.update(dict(zip(("true_x0", "true_y0", "true_r"), parts)))

    def prior(self) -> Prior:
        return Prior(FieldBounds(self.x_min, self.x_max, self.y_min, self.y_max),
                     self.r_min, self.r_max)

    def response(self) -> SensorResponse:
        return SensorResponse(self.d_white, self.d_black, self.sigma)

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            prior=self.prior(), response=self.response(),
            sampler=SamplerConfig(self.n_live, self.termination_frac, self.walk_steps,
                                  self.retry_limit, self.max_iterations),
            inquiry=InquiryConfig(self.grid_spacing, self.n_bins, self.k_per_model),
            stopping=StoppingRule(self.tol_x0, self.tol_y0, self.tol_r,
                                  self.max_measurements),
            ensemble_size=self.ensemble_size, seed=self.seed, retries=self.retries,
            record_timing=self.record_timing)

    def truth(self) -> GroundTruth:
        if not self.has_truth():
            raise ConfigError("true circle not configured (true_x0, true_y0, true_r)")
        circle = Circle(self.true_x0, self.true_y0, self.true_r)
        prior = self.prior()
        lo, hi = prior.lower, prior.upper
        if not all(lo[i] <= v <= hi[i] for i, v in enumerate(circle.as_tuple())):
            raise ConfigError(f"true circle {circle} lies outside the prior support")
        return GroundTruth(circle, self.response(), self.seed, prior.bounds)

    def validate(self) -> "RunConfig":
        try:
            self.experiment()
            if self.has_truth():
                self.truth()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.timeout <= 0 or self.latency_ms < 0 or self.raster_spacing <= 0:
            raise ConfigError("timeout and raster_spacing must be positive, latency_ms >= 0")
        return self

    def dumps(self) -> str:
        """Effective settings; ``out`` is left out so runs compare byte for byte."""
        lines = ["# effective configuration"]
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None or f.name == "out":
                continue
            lines.append(f"{f.name} = {_format(v)}")
        return "\n".join(lines) + "\n"


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key: str, typ: str, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if "bool" in typ:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if "int" in typ:
            return int(raw)
        if "float" in typ:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {n}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


def load_config(path=None, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg.update(parse_config_text(text))
    if overrides:
        cfg.update(overrides)
    return cfg

