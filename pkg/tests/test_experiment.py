import math
from dataclasses import replace

import numpy as np
import pytest

from circle_explorer.experiment import (LOG_COLUMNS, ExperimentConfig, StoppingRule,
                                        bootstrap, raster_positions, read_log, replay,
                                        run_experiment, step)
from circle_explorer.model import Circle, SensorResponse, contains_point
from circle_explorer.nested import read_ensemble
from circle_explorer.sensor import GroundTruth, SensorTimeout, SimulatedSensor

TRUE = Circle(10, 15, 5)


def sim(seed=0, response=SensorResponse()):
    return SimulatedSensor(GroundTruth(TRUE, response, seed))


class FlakySensor:
    """Times out ``fails`` times before every successful reading."""

    def __init__(self, inner, fails):
        self.inner, self.fails, self._left = inner, fails, fails

    def measure(self, x, y):
        if self._left:
            self._left -= 1
            raise SensorTimeout("simulated timeout")
        self._left = self.fails
        return self.inner.measure(x, y)


class TestBootstrap:
    def test_prior_ensemble(self):
        s = bootstrap(ExperimentConfig(seed=4))
        assert s.iteration == 0 and len(s.dataset) == 0 and not s.converged
        assert len(s.ensemble) == 150
        assert abs(s.summary.std_x0 - 20 / math.sqrt(12)) <= 0.2 * 20 / math.sqrt(12)
        assert s.log_z == 0.0


class TestStep:
    def test_adds_one_measurement(self):
        cfg = ExperimentConfig(seed=1)
        s0 = bootstrap(cfg)
        s1, rec = step(s0, sim(1), cfg)
        s2, rec2 = step(s1, sim(1), cfg)
        assert (len(s1.dataset), len(s2.dataset)) == (1, 2)
        assert (s1.iteration, rec2.iteration) == (1, 2)
        assert len(s0.dataset) == 0
        assert cfg.prior.bounds.contains(rec.x, rec.y)

    def test_rejects_converged(self):
        cfg = ExperimentConfig()
        s = replace(bootstrap(cfg), converged=True)
        with pytest.raises(ValueError):
            step(s, sim(), cfg)

    def test_timeout_retried(self):
        cfg = ExperimentConfig(seed=2, retries=2)
        s, rec = step(bootstrap(cfg), FlakySensor(sim(2), 2), cfg)
        assert rec.d == sim(2).measure(rec.x, rec.y).value
        assert len(s.dataset) == 1

    def test_timeout_exhausts_retries(self):
        cfg = ExperimentConfig(seed=2, retries=1)
        with pytest.raises(SensorTimeout):
            step(bootstrap(cfg), FlakySensor(sim(2), 2), cfg)


class TestRunExperiment:
    def test_single_measurement_budget(self):
        cfg = ExperimentConfig(seed=3, stopping=StoppingRule(max_measurements=1))
        state, records = run_experiment(cfg, sim(3))
        assert len(records) == 1
        assert not state.converged and state.exhausted

    def test_trajectory_reproducible(self):
        cfg = ExperimentConfig(seed=5, stopping=StoppingRule(max_measurements=8))
        a = run_experiment(cfg, sim(5))[1]
        b = run_experiment(cfg, sim(5))[1]
        assert [r.row() for r in a] == [r.row() for r in b]

    def test_converges_and_invariants(self):
        cfg = ExperimentConfig(seed=6)
        state, records = run_experiment(cfg, sim(6))
        assert state.converged
        assert state.iteration == len(state.dataset) == len(records)
        assert [r.iteration for r in records] == list(range(1, len(records) + 1))
        s = state.summary
        assert s.std_x0 <= 0.5 and s.std_y0 <= 0.5 and s.std_r <= 0.5

    def test_noise_free_consistency(self):
        quiet = SensorResponse(sigma=1e-3)
        cfg = ExperimentConfig(response=quiet, seed=8, stopping=StoppingRule(max_measurements=12))
        state, _ = run_experiment(cfg, sim(8, quiet))
        for m in state.dataset:
            white = m.d > 0.5
            for c in state.ensemble.circles:
                assert contains_point(Circle(*c), m.x, m.y) == white

    def test_binary_question_halves_ensemble(self):
        surviving = []
        for seed in range(6):
            cfg = ExperimentConfig(seed=seed)
            _, records = run_experiment(cfg, sim(seed))
            for rec in records:
                f = rec.white_fraction
                if 0.35 <= f <= 0.65:
                    surviving.append(f if rec.d > 0.5 else 1 - f)
        assert len(surviving) >= 10
        assert 0.3 <= float(np.median(surviving)) <= 0.7


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = ExperimentConfig(seed=9, stopping=StoppingRule(max_measurements=6))
    state, records = run_experiment(cfg, sim(9), out=out)
    return out, cfg, state, records


class TestArtifacts:
    def test_files(self, run_dir):
        out, _, _, records = run_dir
        names = {p.name for p in out.iterdir()}
        assert "log.csv" in names and "iter_0_ensemble.csv" in names
        for k in range(1, len(records) + 1):
            assert {f"iter_{k}_ensemble.csv", f"iter_{k}_entropy.pgm",
                    f"iter_{k}_entropy.txt"} <= names

    def test_log_roundtrip(self, run_dir):
        out, _, _, records = run_dir
        rows = read_log(out / "log.csv")
        assert len(rows) == len(records)
        assert all(r["ms"] == 0 for r in rows)
        assert rows[-1]["std_r"] == records[-1].summary.std_r

    def test_replay_bit_exact(self, run_dir):
        out, cfg, state, _ = run_dir
        rows = read_log(out / "log.csv")
        entries = replay(rows, cfg)
        assert len(entries) == len(rows) + 1
        for row, e in zip(rows, entries[1:]):
            m, s = e.summary.mean, e.summary.std
            assert (row["mean_x0"], row["std_x0"], row["mean_y0"], row["std_y0"],
                    row["mean_r"], row["std_r"]) == (m[0], s[0], m[1], s[1], m[2], s[2])
        assert np.array_equal(entries[-1].ensemble.circles, state.ensemble.circles)
        assert np.array_equal(entries[0].ensemble.circles,
                              read_ensemble(out / "iter_0_ensemble.csv").circles)

    def test_truncated_replay(self, run_dir):
        out, cfg, _, _ = run_dir
        rows = read_log(out / "log.csv")[:3]
        entries = replay(rows, cfg)
        assert np.array_equal(entries[3].ensemble.circles,
                              read_ensemble(out / "iter_3_ensemble.csv").circles)

    def test_read_log_errors(self, tmp_path):
        bad = tmp_path / "log.csv"
        bad.write_text("a,b\n")
        with pytest.raises(ValueError):
            read_log(bad)
        header = ",".join(LOG_COLUMNS) + "\n"
        bad.write_text(header + "1,2,3\n")
        with pytest.raises(ValueError):
            read_log(bad)
        row = ["2"] + ["0.5"] * (len(LOG_COLUMNS) - 1)
        bad.write_text(header + ",".join(row) + "\n")
        with pytest.raises(ValueError):
            read_log(bad)


def test_raster_lattice():
    pts = raster_positions(ExperimentConfig().prior)
    assert pts.shape == (600, 2)
    assert pts[0].tolist() == [0.5, 0.5]
