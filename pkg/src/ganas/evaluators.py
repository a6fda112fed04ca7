"""Fitness evaluators and the worker wire protocol.

Two evaluators ship with the engine: a deterministic surrogate for
desk-scale runs, and a client that delegates evaluation to an external
trainer worker. The worker speaks newline-delimited JSON, one object per
line, over its standard streams or a TCP connection. Both directions open
with a ``hello`` handshake carrying the protocol version.

Message schemas (all lines UTF-8, ``\\n`` terminated, no pretty-printing):

    {"type": "hello", "protocol_version": 1}
    {"type": "evaluate", "id": str, "architecture": {...}, "epochs": int,
     "dataset": {...} | null}
    {"type": "result", "id": str, "fitness": float}
    {"type": "error", "id": str, "message": str}

The client keeps one request in flight per connection and retries a failed
transport exactly once with the same request id; workers are required to
be idempotent per id, which makes the retry safe.
"""

from __future__ import annotations

import json
import logging
import math
import queue
import shlex
import socket
import subprocess
import threading
import time
from dataclasses import dataclass
from typing import Protocol

from ganas import kernels
from ganas.genome import Genome, SearchSpaceConfig, serialize

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1

# Surrogate target: depth 8, ten-million-parameter scale, weighted 0.6/0.4.
# Arbitrary but fixed; places a non-boundary optimum inside small spaces.
_TARGET_LENGTH = 8.0
_TARGET_LOG10_PARAMS = 7.0


class ProtocolError(Exception):
    """Malformed or out-of-contract wire message."""

    def __init__(self, message: str, line: str | None = None):
        super().__init__(f"{message}: {line!r}" if line is not None else message)
        self.line = line


class WorkerError(Exception):
    """The worker answered with an error message."""


class VersionError(Exception):
    """Handshake protocol version mismatch."""


@dataclass(frozen=True)
class TrainingBudget:
    """Epoch budget plus a dataset reference handed to the worker."""

    epochs: int = 600
    dataset: dict | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class EvaluationRequest:
    id: str
    architecture: dict
    epochs: int
    dataset: dict | None = None


@dataclass(frozen=True)
class EvaluationResult:
    id: str
    fitness: float | None = None
    error: str | None = None


class Evaluator(Protocol):
    """Single capability: genome plus decoded architecture to fitness.

    ``deterministic`` declares whether repeated evaluation of the same
    architecture returns the same fitness. ``requires_architecture`` lets
    the engine skip building the wire document for evaluators that work
    from the genome alone.
    """

    deterministic: bool
    requires_architecture: bool

    def evaluate(self, genome: Genome, architecture: dict | None,
                 budget: TrainingBudget) -> float: ...


def surrogate_score(length: int, params: int) -> float:
    """Deterministic fitness from depth and parameter count, in [0, 1]."""
    depth_term = math.exp(-((length - _TARGET_LENGTH) ** 2) / 8.0)
    width_term = math.exp(-((math.log10(params) - _TARGET_LOG10_PARAMS) ** 2) / 0.5)
    return min(max(0.6 * depth_term + 0.4 * width_term, 0.0), 1.0)


def surrogate_evaluate(genome: Genome, cfg: SearchSpaceConfig) -> float:
    """Surrogate fitness of a valid genome under ``cfg``."""
    kinds, f1s, f2s = kernels.pack(genome)
    return kernels.surrogate_fitness(kinds, f1s, f2s, cfg.input_shape[0], cfg.num_classes)


class SurrogateEvaluator:
    """Pure stand-in for trained accuracy; smooth in depth and width."""

    deterministic = True
    requires_architecture = False

    def __init__(self, cfg: SearchSpaceConfig):
        self.cfg = cfg

    def evaluate(self, genome: Genome, architecture: dict | None,
                 budget: TrainingBudget) -> float:
        return surrogate_evaluate(genome, self.cfg)


# --- wire codec ---------------------------------------------------------


def _encode(message: dict) -> str:
    return json.dumps(message, separators=(",", ":")) + "\n"


def encode_hello() -> str:
    return _encode({"type": "hello", "protocol_version": PROTOCOL_VERSION})


def encode_request(request: EvaluationRequest) -> str:
    if not request.id:
        raise ProtocolError("request id must be non-empty")
    if not isinstance(request.architecture, dict):
        raise ProtocolError("request architecture must be an object")
    if request.epochs < 1:
        raise ProtocolError(f"request epochs must be >= 1, got {request.epochs}")
    return _encode({
        "type": "evaluate",
        "id": request.id,
        "architecture": request.architecture,
        "epochs": request.epochs,
        "dataset": request.dataset,
    })


def decode_message(line: str) -> dict:
    """Parse and validate one wire line of any message type."""
    try:
        message = json.loads(line)
    except json.JSONDecodeError:
        raise ProtocolError("invalid JSON", line) from None
    if not isinstance(message, dict):
        raise ProtocolError("message is not an object", line)
    kind = message.get("type")
    if kind == "hello":
        if not isinstance(message.get("protocol_version"), int):
            raise ProtocolError("hello missing protocol_version", line)
    elif kind == "evaluate":
        for key in ("id", "architecture", "epochs"):
            if key not in message:
                raise ProtocolError(f"evaluate missing {key}", line)
    elif kind == "result":
        if not isinstance(message.get("id"), str):
            raise ProtocolError("result missing id", line)
        fitness = message.get("fitness")
        if not isinstance(fitness, (int, float)) or isinstance(fitness, bool):
            raise ProtocolError("result missing numeric fitness", line)
        if not 0.0 <= fitness <= 1.0:
            raise ProtocolError(f"fitness {fitness} outside [0, 1]", line)
    elif kind == "error":
        if not isinstance(message.get("id"), str):
            raise ProtocolError("error missing id", line)
        if not isinstance(message.get("message"), str):
            raise ProtocolError("error missing message", line)
    else:
        raise ProtocolError(f"unknown message type {kind!r}", line)
    return message


def decode_response(line: str) -> EvaluationResult:
    """Decode a worker reply; only result and error messages are replies."""
    message = decode_message(line)
    kind = message["type"]
    if kind == "result":
        return EvaluationResult(id=message["id"], fitness=float(message["fitness"]))
    if kind == "error":
        return EvaluationResult(id=message["id"], error=message["message"])
    raise ProtocolError(f"unexpected {kind!r} message in reply position", line)


# --- worker connection --------------------------------------------------


class _LineReader(threading.Thread):
    """Pumps lines from a text stream into a queue; None marks EOF."""

    def __init__(self, stream):
        super().__init__(daemon=True)
        self.stream = stream
        self.lines: queue.Queue = queue.Queue()
        self.start()

    def run(self):
        try:
            for line in self.stream:
                self.lines.put(line.rstrip("\n"))
        except (OSError, ValueError):
            pass
        self.lines.put(None)


class WorkerConnection:
    """One worker, one in-flight request.

    Construct via :meth:`from_command` (subprocess over stdio) or
    :meth:`from_address` (TCP). The connection handshakes lazily on first
    use and can be reset, which respawns or reconnects and re-handshakes.
    """

    def __init__(self, open_transport):
        self._open_transport = open_transport
        self._transport = None
        self._reader: _LineReader | None = None
        self._ready = False

    @classmethod
    def from_command(cls, command: str | list[str]) -> "WorkerConnection":
        argv = shlex.split(command) if isinstance(command, str) else list(command)

        def open_transport():
            process = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1,
            )
            return _ProcessTransport(process)

        return cls(open_transport)

    @classmethod
    def from_address(cls, host: str, port: int, connect_timeout: float = 10.0) -> "WorkerConnection":
        def open_transport():
            sock = socket.create_connection((host, port), timeout=connect_timeout)
            return _SocketTransport(sock)

        return cls(open_transport)

    def ensure_ready(self, timeout: float) -> None:
        if self._ready:
            return
        if self._transport is None:
            self._transport = self._open_transport()
            self._reader = _LineReader(self._transport.reader)
        self._send(encode_hello())
        line = self._recv(timeout)
        message = decode_message(line)
        if message.get("type") != "hello":
            raise ProtocolError("expected hello during handshake", line)
        if message["protocol_version"] != PROTOCOL_VERSION:
            raise VersionError(
                f"worker speaks protocol {message['protocol_version']}, "
                f"engine speaks {PROTOCOL_VERSION}"
            )
        self._ready = True

    def reset(self) -> None:
        self.close()

    def close(self) -> None:
        if self._transport is not None:
            self._transport.close()
        self._transport = None
        self._reader = None
        self._ready = False

    def _send(self, line: str) -> None:
        try:
            self._transport.writer.write(line)
            self._transport.writer.flush()
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise ConnectionError(f"worker transport write failed: {exc}") from exc

    def _recv(self, timeout: float) -> str:
        try:
            line = self._reader.lines.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError(f"no worker reply within {timeout}s") from None
        if line is None:
            raise ConnectionError("worker closed the connection")
        return line


class _ProcessTransport:
    def __init__(self, process):
        self.process = process
        self.reader = process.stdout
        self.writer = process.stdin

    def close(self):
        try:
            self.process.stdin.close()
        except OSError:
            pass
        try:
            self.process.terminate()
            self.process.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            self.process.kill()


class _SocketTransport:
    def __init__(self, sock):
        self.sock = sock
        self.reader = sock.makefile("r", encoding="utf-8", newline="\n")
        self.writer = sock.makefile("w", encoding="utf-8", newline="\n")

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


def external_evaluate(connection: WorkerConnection, request: EvaluationRequest,
                      timeout: float) -> float:
    """Send one request and wait for its matching-id reply.

    Transport faults (timeout, closed stream, undecodable reply) trigger a
    single reconnect-and-resend with the same id; replies whose id does not
    match the request are stale duplicates and are discarded.
    """
    line = encode_request(request)
    last_fault: Exception | None = None
    for attempt in range(2):
        if attempt:
            log.warning("retrying evaluation %r after %s", request.id, last_fault)
            connection.reset()
        try:
            connection.ensure_ready(timeout)
            connection._send(line)
            deadline = time.monotonic() + timeout
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TimeoutError(f"no reply for {request.id!r} within {timeout}s")
                reply = decode_response(connection._recv(remaining))
                if reply.id != request.id:
                    log.warning("discarding stale reply for %r", reply.id)
                    continue
                if reply.error is not None:
                    raise WorkerError(reply.error)
                return reply.fitness
        except (TimeoutError, ConnectionError, ProtocolError) as exc:
            last_fault = exc
    raise last_fault


class WorkerEvaluator:
    """Evaluator that delegates training to an external worker."""

    requires_architecture = True

    def __init__(self, connection: WorkerConnection, timeout: float = 3600.0,
                 deterministic: bool = False):
        self.connection = connection
        self.timeout = timeout
        self.deterministic = deterministic

    def evaluate(self, genome: Genome, architecture: dict | None,
                 budget: TrainingBudget) -> float:
        request = EvaluationRequest(
            id=serialize(genome),
            architecture=architecture,
            epochs=budget.epochs,
            dataset=budget.dataset,
        )
        return external_evaluate(self.connection, request, self.timeout)

    def close(self) -> None:
        self.connection.close()
