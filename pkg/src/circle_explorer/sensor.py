"""Measurement backends: an in-process simulator and two remote transports.

Wire protocol (line oriented, ASCII, ``\\n`` terminated)::

    request   MEASURE <x> <y>        positions in cm, 3 fractional digits
    response  LIGHT <value>          4 fractional digits
              ERR <token>            bad_request | out_of_range | busy

The same lines travel over TCP (:class:`RemoteSensor` / :class:`SensorServer`)
or through a directory as ``request.txt`` / ``result.txt``
(:class:`FileDropSensor` / :class:`FileDropResponder`).
"""

from __future__ import annotations

import logging
import math
import os
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .model import Circle, FieldBounds, SensorResponse, contains_point

log = logging.getLogger(__name__)

REQUEST_FILE = "request.txt"
RESULT_FILE = "result.txt"
ENDPOINT_ENV = "CIRCLE_EXPLORER_SENSOR"


class SensorError(Exception):
    pass


class OutOfField(SensorError):
    pass


class SensorTimeout(SensorError):
    pass


class SensorBusy(SensorError):
    pass


class ProtocolError(SensorError):
    pass


class SensorConnectionError(SensorError):
    pass


class BindFailure(SensorError):
    pass


@dataclass(frozen=True)
class GroundTruth:
    circle: Circle
    response: SensorResponse = field(default_factory=SensorResponse)
    seed: int = 0
    bounds: FieldBounds = field(default_factory=FieldBounds)


@dataclass(frozen=True)
class SensorReading:
    position: Tuple[float, float]
    value: float
    latency: float = 0.0


def quantize_position(v: float) -> float:
    return float(f"{v:.3f}")


def quantize_value(v: float) -> float:
    return float(f"{v:.4f}")


def format_request(x: float, y: float) -> str:
    return f"MEASURE {x:.3f} {y:.3f}\n"


def parse_request(line: str) -> Tuple[float, float]:
    parts = line.split()
    if len(parts) != 3 or parts[0] != "MEASURE":
        raise ProtocolError(f"bad request {line!r}")
    try:
        x, y = float(parts[1]), float(parts[2])
    except ValueError:
        raise ProtocolError(f"bad request {line!r}") from None
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ProtocolError(f"bad request {line!r}")
    return x, y


def format_reading(value: float) -> str:
    return f"LIGHT {value:.4f}\n"


def format_error(token: str) -> str:
    return f"ERR {token}\n"


def parse_response(line: str) -> float:
    """Value of a ``LIGHT`` line; ``ERR`` lines raise the matching error."""
    parts = line.split()
    if len(parts) == 2 and parts[0] == "LIGHT":
        try:
            value = float(parts[1])
        except ValueError:
            raise ProtocolError(f"malformed response {line!r}") from None
        if not math.isfinite(value):
            raise ProtocolError(f"non-finite reading {line!r}")
        return value
    if len(parts) == 2 and parts[0] == "ERR":
        token = parts[1]
        if token == "out_of_range":
            raise OutOfField("sensor reports position out of range")
        if token == "busy":
            raise SensorBusy("sensor is busy")
        if token == "bad_request":
            raise ProtocolError("sensor rejected the request")
    raise ProtocolError(f"malformed response {line!r}")


def measure_simulated(gt: GroundTruth, pos: Tuple[float, float],
                      rng: np.random.Generator) -> SensorReading:
    x, y = pos
    if not gt.bounds.contains(x, y):
        raise OutOfField(f"position ({x}, {y}) outside the field")
    s = gt.response
    mean = s.d_white if contains_point(gt.circle, x, y) else s.d_black
    return SensorReading((x, y), float(rng.normal(mean, s.sigma)))


class SimulatedSensor:
    """Ground-truth backend; request ``k`` draws noise from ``(seed, k)``."""

    def __init__(self, truth: GroundTruth):
        self.truth = truth
        self.counter = 0

    def measure(self, x: float, y: float) -> SensorReading:
        pos = (quantize_position(x), quantize_position(y))
        rng = np.random.default_rng([self.truth.seed, self.counter])
        reading = measure_simulated(self.truth, pos, rng)
        self.counter += 1
        return SensorReading(pos, quantize_value(reading.value))

    def close(self):
        pass


class RemoteSensor:
    """Blocking TCP client keeping one connection open across requests."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.host = host
        self.port = int(port)
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._buf = b""

    @classmethod
    def from_endpoint(cls, endpoint: str, timeout: float = 10.0) -> "RemoteSensor":
        host, _, port = endpoint.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"endpoint must be HOST:PORT, got {endpoint!r}")
        return cls(host, int(port), timeout)

    def _connect(self):
        try:
            self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except ConnectionRefusedError as exc:
            raise SensorConnectionError(f"connection refused by {self.host}:{self.port}") from exc
        except socket.timeout as exc:
            raise SensorTimeout(f"connect to {self.host}:{self.port} timed out") from exc
        except OSError as exc:
            raise SensorConnectionError(str(exc)) from exc
        self._buf = b""

    def _readline(self) -> str:
        deadline = time.monotonic() + self.timeout
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise SensorTimeout("no response within timeout")
            self._sock.settimeout(remaining)
            try:
                chunk = self._sock.recv(4096)
            except socket.timeout:
                raise SensorTimeout("no response within timeout") from None
            if not chunk:
                raise ProtocolError("connection closed before a full response")
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line.decode("ascii", errors="replace")

    def request(self, line: str) -> str:
        """Send one raw request line and return the raw response line."""
        if self._sock is None:
            self._connect()
        try:
            self._sock.sendall(line.encode("ascii"))
            return self._readline()
        except (SensorTimeout, ProtocolError):
            self.close()
            raise
        except OSError as exc:
            self.close()
            raise SensorConnectionError(str(exc)) from exc

    def measure(self, x: float, y: float) -> SensorReading:
        pos = (quantize_position(x), quantize_position(y))
        t0 = time.monotonic()
        value = parse_response(self.request(format_request(*pos)))
        return SensorReading(pos, value, time.monotonic() - t0)

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
                self._buf = b""


def answer(sensor: SimulatedSensor, line: str) -> str:
    """Server-side handling of one request line."""
    try:
        x, y = parse_request(line)
    except ProtocolError:
        return format_error("bad_request")
    try:
        return format_reading(sensor.measure(x, y).value)
    except OutOfField:
        return format_error("out_of_range")


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        srv: SensorServer = self.server
        for raw in self.rfile:
            line = raw.decode("ascii", errors="replace").strip()
            if not line:
                continue
            if not srv.arm.acquire(blocking=False):
                reply = format_error("busy")
            else:
                try:
                    if srv.latency > 0:
                        time.sleep(srv.latency)
                    reply = answer(srv.sensor, line)
                finally:
                    srv.arm.release()
            log.info("%s -> %s", line, reply.strip())
            try:
                self.wfile.write(reply.encode("ascii"))
                self.wfile.flush()
            except OSError:
                return


class SensorServer(socketserver.ThreadingTCPServer):
    """TCP front-end over a :class:`SimulatedSensor`.

    Requests are served one at a time; a request arriving while another is
    in flight is answered ``ERR busy``.
    """

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, truth: GroundTruth, host: str = "127.0.0.1", port: int = 0,
                 latency: float = 0.0):
        self.sensor = SimulatedSensor(truth)
        self.latency = latency
        self.arm = threading.Lock()
        self._thread: Optional[threading.Thread] = None
        try:
            super().__init__((host, port), _Handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "SensorServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()


def serve_sensor(truth: GroundTruth, host: str = "127.0.0.1", port: int = 0,
                 latency: float = 0.0) -> None:
    """Serve until interrupted."""
    server = SensorServer(truth, host, port, latency)
    log.info("serving sensor on %s", server.endpoint)
    try:
        server.serve_forever()
    finally:
        server.server_close()


def _write_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


class FileDropSensor:
    """Client side of the file exchange: write ``request.txt``, poll ``result.txt``."""

    def __init__(self, directory, timeout: float = 10.0, poll_interval: float = 0.01):
        self.directory = Path(directory)
        self.timeout = timeout
        self.poll_interval = poll_interval

    def measure(self, x: float, y: float) -> SensorReading:
        pos = (quantize_position(x), quantize_position(y))
        result = self.directory / RESULT_FILE
        if result.exists():
            result.unlink()
        t0 = time.monotonic()
        _write_atomic(self.directory / REQUEST_FILE, format_request(*pos))
        while not result.exists():
            if time.monotonic() - t0 > self.timeout:
                raise SensorTimeout(f"no {RESULT_FILE} within {self.timeout}s")
            time.sleep(self.poll_interval)
        line = result.read_text().strip()
        result.unlink()
        return SensorReading(pos, parse_response(line), time.monotonic() - t0)

    def close(self):
        pass


class FileDropResponder:
    """Instrument side of the file exchange, polling in a background thread."""

    def __init__(self, truth: GroundTruth, directory, poll_interval: float = 0.01):
        self.sensor = SimulatedSensor(truth)
        self.directory = Path(directory)
        self.poll_interval = poll_interval
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def poll_once(self) -> bool:
        request = self.directory / REQUEST_FILE
        if not request.exists():
            return False
        line = request.read_text().strip()
        request.unlink()
        _write_atomic(self.directory / RESULT_FILE, answer(self.sensor, line))
        return True

    def _run(self):
        while not self._stop.is_set():
            if not self.poll_once():
                time.sleep(self.poll_interval)

    def start(self) -> "FileDropResponder":
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
