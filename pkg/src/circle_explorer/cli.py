"""Command-line entry point: ``simulate``, ``serve``, ``replay``, ``baseline``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .experiment import (LOG_COLUMNS, read_log, raster_scan, replay, run_experiment)
from .nested import ExplorationStalled, read_ensemble
from .sensor import (ENDPOINT_ENV, BindFailure, FileDropSensor, RemoteSensor, SensorError,
                     SensorServer, SimulatedSensor)

log = logging.getLogger("circle_explorer")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


def _overrides(args) -> dict:
    values = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "out", None) is not None:
        values["out"] = args.out
    return values


def _load(args) -> RunConfig:
    cfg = load_config(args.config, _overrides(args))
    if getattr(args, "true_circle", None):
        cfg.set_truth(args.true_circle)
    sensor = getattr(args, "sensor", None) or os.environ.get(ENDPOINT_ENV)
    if sensor:
        cfg.sensor = sensor
    return cfg.validate()


def make_sensor(cfg: RunConfig):
    mode, _, target = cfg.sensor.partition(":")
    if mode == "simulated":
        return SimulatedSensor(cfg.truth())
    if mode == "remote":
        return RemoteSensor.from_endpoint(target, cfg.timeout)
    if mode == "filedrop":
        if not target:
            raise ConfigError("filedrop sensor needs a directory: filedrop:PATH")
        return FileDropSensor(target, cfg.timeout)
    raise ConfigError(f"unknown sensor mode {cfg.sensor!r}")


def _summary_text(cfg: RunConfig, state) -> str:
    s = state.summary
    lines = [f"converged = {'true' if state.converged else 'false'}",
             f"measurements = {state.iteration}",
             f"mean_x0 = {s.mean_x0!r}", f"std_x0 = {s.std_x0!r}",
             f"mean_y0 = {s.mean_y0!r}", f"std_y0 = {s.std_y0!r}",
             f"mean_r = {s.mean_r!r}", f"std_r = {s.std_r!r}",
             f"log_z = {state.log_z!r}"]
    if cfg.has_truth():
        lines += [f"true_x0 = {cfg.true_x0!r}", f"true_y0 = {cfg.true_y0!r}",
                  f"true_r = {cfg.true_r!r}"]
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if cfg.sensor == "simulated" and not cfg.has_truth():
        raise ConfigError("simulate needs a true circle (--true-circle X,Y,R or true_* keys)")
    exp = cfg.experiment()
    sensor = make_sensor(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.effective").write_text(cfg.dumps())
    try:
        state, records = run_experiment(exp, sensor, out)
    finally:
        close = getattr(sensor, "close", None)
        if close:
            close()
    (out / "summary.txt").write_text(_summary_text(cfg, state))
    print(_summary_text(cfg, state), end="")
    return EXIT_OK if state.converged else EXIT_NOT_CONVERGED


def cmd_serve(args) -> int:
    cfg = _load(args)
    server = SensorServer(cfg.truth(), args.host, args.port, cfg.latency_ms / 1000.0)
    print(f"listening on {server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_replay(args) -> int:
    log_path = Path(args.log)
    if log_path.is_dir():
        log_path = log_path / "log.csv"
    config_path = args.config
    if config_path is None and (log_path.parent / "config.effective").exists():
        config_path = log_path.parent / "config.effective"
    args.config = config_path
    cfg = _load(args)
    try:
        rows = read_log(log_path)
    except OSError as exc:
        raise ConfigError(f"cannot read log: {exc}") from None
    entries = replay(rows, cfg.experiment())
    summaries = [e.summary for e in entries]

    writer = csv.writer(sys.stdout, lineterminator="\n")
    cols = LOG_COLUMNS[5:11]
    writer.writerow(("iteration",) + cols)
    for k, s in enumerate(summaries):
        vals = [s.mean_x0, s.std_x0, s.mean_y0, s.std_y0, s.mean_r, s.std_r]
        writer.writerow([k] + [repr(v) for v in vals])

    mismatched = [row["iteration"] for row, s in zip(rows, summaries[1:])
                  if [row[c] for c in cols] != [s.mean_x0, s.std_x0, s.mean_y0,
                                                 s.std_y0, s.mean_r, s.std_r]]
    for k, entry in enumerate(entries):
        dump = log_path.parent / f"iter_{k}_ensemble.csv"
        if dump.exists() and not np.array_equal(read_ensemble(dump).circles,
                                                entry.ensemble.circles):
            mismatched.append(f"ensemble {k}")
    print(f"# replayed {len(rows)} measurement(s); "
          f"{'all summaries match' if not mismatched else f'mismatch at {mismatched}'}")
    return EXIT_OK if not mismatched else EXIT_ERROR


def cmd_baseline(args) -> int:
    cfg = _load(args)
    if not cfg.has_truth():
        raise ConfigError("baseline needs a true circle (--true-circle X,Y,R)")
    print("seed,adaptive_n,raster_n,ratio,converged,"
          "adaptive_mean_x0,adaptive_mean_y0,adaptive_mean_r,"
          "adaptive_std_x0,adaptive_std_y0,adaptive_std_r,"
          "raster_mean_x0,raster_mean_y0,raster_mean_r,"
          "raster_std_x0,raster_std_y0,raster_std_r")
    ratios = []
    base = args.seed_base if args.seed_base is not None else cfg.seed
    for t in range(args.trials):
        cfg.seed = base + t
        exp = cfg.experiment()
        state, _ = run_experiment(exp, SimulatedSensor(cfg.truth()))
        n_raster, raster_summary, _ = raster_scan(exp, SimulatedSensor(cfg.truth()),
                                                  cfg.raster_spacing)
        ratio = state.iteration / n_raster
        ratios.append(ratio)
        a, r = state.summary, raster_summary
        vals = [*a.mean, *a.std, *r.mean, *r.std]
        print(f"{cfg.seed},{state.iteration},{n_raster},{ratio:.4f},"
              f"{str(state.converged).lower()}," + ",".join(f"{v:.4f}" for v in vals))
    print(f"# median adaptive/raster ratio {np.median(ratios):.4f} over {len(ratios)} trial(s)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="circle-explorer",
                                     description="Autonomous circle characterization by "
                                                 "maximum-entropy measurement selection.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")

    p = sub.add_parser("simulate", help="run an adaptive experiment")
    common(p)
    p.add_argument("--true-circle", metavar="X,Y,R")
    p.add_argument("--sensor", help="simulated | remote:HOST:PORT | filedrop:PATH")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="serve the simulated sensor over TCP")
    common(p)
    p.add_argument("--true-circle", metavar="X,Y,R")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=5757)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="re-run inference over a logged dataset")
    common(p)
    p.add_argument("log", help="log.csv or the run directory holding it")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("baseline", help="compare against a raster scan")
    common(p)
    p.add_argument("--true-circle", metavar="X,Y,R")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed-base", type=int, default=None,
                   help="first trial seed (defaults to the master seed)")
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "serve":
        logging.getLogger("circle_explorer.sensor").setLevel(logging.INFO)
    try:
        return args.func(args)
    except (ConfigError, SensorError, ExplorationStalled, BindFailure, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
