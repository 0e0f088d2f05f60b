import filecmp
import subprocess
import sys

import pytest

from circle_explorer.cli import main
from circle_explorer.config import ConfigError, RunConfig, load_config, parse_config_text
from circle_explorer.model import Circle
from circle_explorer.sensor import ENDPOINT_ENV, GroundTruth, RemoteSensor, SensorServer

TRUE = "10,15,5"


def simulate(out, *extra):
    return main(["simulate", "--seed", "7", "--true-circle", TRUE, "--out", str(out), *extra])


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "r1"
    assert simulate(out) == 0
    return out


class TestSimulate:
    def test_byte_identical(self, run_dir, tmp_path):
        assert simulate(tmp_path / "r2") == 0
        assert same_tree(run_dir, tmp_path / "r2")

    def test_artifacts(self, run_dir):
        names = {p.name for p in run_dir.iterdir()}
        assert {"log.csv", "config.effective", "summary.txt", "iter_0_ensemble.csv",
                "iter_1_entropy.pgm", "iter_1_entropy.txt"} <= names

    def test_missing_truth(self, tmp_path, capsys):
        out = tmp_path / "none"
        assert main(["simulate", "--out", str(out)]) == 1
        assert not out.exists()
        assert "true circle" in capsys.readouterr().err

    def test_not_converged_exit(self, tmp_path):
        assert simulate(tmp_path / "short", "--set", "max_measurements=2") == 2

    def test_remote_matches_simulated(self, run_dir, tmp_path, monkeypatch):
        srv = SensorServer(GroundTruth(Circle(10, 15, 5), seed=7)).start()
        try:
            monkeypatch.setenv(ENDPOINT_ENV, f"remote:{srv.endpoint}")
            assert main(["simulate", "--seed", "7", "--out", str(tmp_path / "rem")]) == 0
        finally:
            srv.stop()
        assert (tmp_path / "rem" / "log.csv").read_bytes() == (run_dir / "log.csv").read_bytes()

    def test_unknown_sensor(self, tmp_path):
        assert simulate(tmp_path / "x", "--sensor", "telepathy") == 1


class TestReplay:
    def test_full(self, run_dir, capsys):
        assert main(["replay", str(run_dir)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[-1].endswith("all summaries match")
        n_rows = len((run_dir / "log.csv").read_text().splitlines()) - 1
        assert len(out) == 1 + (n_rows + 1) + 1

    def test_truncated(self, run_dir, tmp_path, capsys):
        lines = (run_dir / "log.csv").read_text().splitlines(keepends=True)
        short = tmp_path / "log.csv"
        short.write_text("".join(lines[:4]))
        assert main(["replay", str(short), "--config", str(run_dir / "config.effective")]) == 0
        assert "replayed 3 measurement(s)" in capsys.readouterr().out

    def test_empty_log_gives_prior(self, run_dir, tmp_path, capsys):
        empty = tmp_path / "log.csv"
        empty.write_text((run_dir / "log.csv").read_text().splitlines(keepends=True)[0])
        assert main(["replay", str(empty), "--config", str(run_dir / "config.effective")]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[1].startswith("0,") and len(out) == 3

    def test_tampered_log(self, run_dir, tmp_path, capsys):
        lines = (run_dir / "log.csv").read_text().splitlines(keepends=True)
        fields = lines[1].split(",")
        fields[6] = repr(float(fields[6]) + 1e-9)
        bad = tmp_path / "log.csv"
        bad.write_text(lines[0] + ",".join(fields))
        assert main(["replay", str(bad), "--config", str(run_dir / "config.effective")]) == 1
        assert "mismatch" in capsys.readouterr().out


def test_baseline(capsys):
    assert main(["baseline", "--true-circle", TRUE, "--trials", "1", "--seed", "3"]) == 0
    out = capsys.readouterr().out.splitlines()
    row = out[1].split(",")
    assert row[2] == "600"
    assert int(row[1]) * 10 <= 600


def test_serve_subprocess():
    proc = subprocess.Popen([sys.executable, "-m", "circle_explorer.cli", "serve", "--port", "0",
                             "--true-circle", TRUE, "--seed", "7"],
                            stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True)
    try:
        line = proc.stdout.readline().strip()
        assert line.startswith("listening on ")
        client = RemoteSensor.from_endpoint(line.split()[-1], timeout=10)
        assert client.request("MEASURE 10.000 15.000\n").startswith("LIGHT ")
        assert client.request("nonsense\n") == "ERR bad_request"
        client.close()
    finally:
        proc.terminate()
        proc.wait(timeout=10)


class TestConfig:
    def test_parse(self):
        vals = parse_config_text("# comment\nsigma = 0.1  # trailing\n\nn_live=50\n")
        assert vals == {"sigma": "0.1", "n_live": "50"}

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("sigmaa = 0.1\n")
        with pytest.raises(ConfigError):
            load_config(p)
        assert main(["simulate", "--config", str(p), "--true-circle", TRUE,
                     "--out", str(tmp_path / "o")]) == 1

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            RunConfig().update({"n_live": "many"})

    def test_roundtrip(self):
        cfg = RunConfig(sigma=0.07, seed=4, record_timing=True)
        cfg.set_truth("1.5,2.5,3")
        again = load_config(overrides=parse_config_text(cfg.dumps()))
        assert again.dumps() == cfg.dumps()

    def test_overrides_file(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("seed = 1\nsensor = remote:h:1\n")
        assert load_config(p, {"seed": "2"}).seed == 2

    def test_truth_outside_prior(self):
        cfg = RunConfig()
        cfg.set_truth("10,15,20")
        with pytest.raises(ConfigError):
            cfg.validate()


def test_env_sensor_overridden_by_flag(tmp_path, monkeypatch):
    monkeypatch.setenv(ENDPOINT_ENV, "remote:127.0.0.1:1")
    assert simulate(tmp_path / "flag", "--sensor", "simulated", "--set", "max_measurements=1") == 2


def test_help_runs():
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
