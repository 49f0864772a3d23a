"""Black-box classifier oracles.

Everything the engine may learn about a model passes through
``OracleClient``: the class count, the declared input shape, and one
probability vector per image. Argmax tie-breaking and confidence binning
happen on the engine side in double precision, so behavior never depends
on who serves the model.

Two implementations ship here: a deterministic linear-softmax model for
desk-scale runs, loaded from a JSON weights file, and a client for the
line-delimited JSON wire protocol (over TCP or a subprocess stdio pipe)
for anything larger.
"""

from __future__ import annotations

import abc
import base64
import json
import queue
import shlex
import socket
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coverage import OutputTuple
from .errors import (
    CodofuzzError,
    ConfigurationError,
    InputError,
    ParseError,
    ProtocolError,
    TransportError,
)
from .images import check_image

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_S = 30.0


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax: shifts by the max before exponentiating
    so arbitrarily large logits cannot overflow."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise InputError(f"logits must be a nonempty 1-D vector, got shape {z.shape}")
    if not np.isfinite(z).all():
        raise InputError("logits contain NaN or Inf")
    shifted = np.exp(z - z.max())
    return shifted / shifted.sum()


@dataclass
class Prediction:
    """One oracle answer. ``latency_us`` is measurement plumbing and does
    not participate in equality, so stored suites compare clean."""

    prob_vector: np.ndarray
    output: OutputTuple
    latency_us: int = field(default=0, compare=False)

    def __eq__(self, other):
        if not isinstance(other, Prediction):
            return NotImplemented
        return self.output == other.output and np.array_equal(
            self.prob_vector, other.prob_vector
        )


class OracleClient(abc.ABC):
    """A classifier visible only through its probability outputs.

    Implementations that cannot tolerate concurrent ``predict`` calls set
    ``serial_only = True``; the engine serializes calls to such clients.
    """

    serial_only = False

    @property
    @abc.abstractmethod
    def n_classes(self) -> int: ...

    @property
    @abc.abstractmethod
    def input_shape(self) -> tuple[int, int, int]: ...

    @abc.abstractmethod
    def _prob_vector(self, image: np.ndarray) -> np.ndarray:
        """Return the raw probability vector for one validated image."""

    def describe(self) -> str:
        """A short descriptor recorded in run manifests."""
        return type(self).__name__

    def _check_shape(self, image: np.ndarray) -> np.ndarray:
        img = check_image(image)
        if img.shape != self.input_shape:
            raise InputError(
                f"image shape {img.shape} does not match model input {self.input_shape}"
            )
        return img

    def predict(self, image: np.ndarray) -> Prediction:
        img = self._check_shape(image)
        t0 = time.perf_counter_ns()
        probs = np.asarray(self._prob_vector(img), dtype=np.float64)
        latency_us = (time.perf_counter_ns() - t0) // 1000
        if probs.shape != (self.n_classes,):
            raise ProtocolError(
                f"oracle returned {probs.shape} probabilities, expected ({self.n_classes},)"
            )
        return Prediction(
            prob_vector=probs,
            output=OutputTuple.from_probs(probs),
            latency_us=int(latency_us),
        )

    def predict_batch(self, images) -> list[Prediction]:
        """Elementwise identical to calling predict on each image in order."""
        out = []
        for i, image in enumerate(images):
            try:
                out.append(self.predict(image))
            except TransportError:
                raise
            except CodofuzzError as err:
                raise type(err)(f"batch index {i}: {err}") from err
        return out

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class LinearSoftmaxModel(OracleClient):
    """Deterministic reference oracle: softmax over an affine map of the
    flattened pixels. Small enough to analyze by hand, yet produces the
    nonuniform confidence landscape coverage-guided fuzzing needs.

    Safe for concurrent reads: prediction never mutates state.
    """

    def __init__(self, weights, bias, input_shape, source: str = "builtin"):
        self._weights = np.asarray(weights, dtype=np.float64)
        self._bias = np.asarray(bias, dtype=np.float64)
        h, w, c = (int(v) for v in input_shape)
        self._input_shape = (h, w, c)
        self._source = source
        n, d = self._weights.shape
        if n < 2:
            raise ConfigurationError(f"model must have >= 2 classes, got {n}")
        if d != h * w * c:
            raise ConfigurationError(
                f"weights expect {d} features but input shape {self._input_shape} has {h * w * c}"
            )
        if self._bias.shape != (n,):
            raise ConfigurationError(f"bias shape {self._bias.shape} does not match {n} classes")
        if not (np.isfinite(self._weights).all() and np.isfinite(self._bias).all()):
            raise ConfigurationError("model weights contain non-finite values")

    @property
    def n_classes(self) -> int:
        return int(self._weights.shape[0])

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self._input_shape

    def describe(self) -> str:
        return f"builtin:{self._source}"

    def _prob_vector(self, image: np.ndarray) -> np.ndarray:
        x = image.reshape(-1).astype(np.float64)
        return softmax(self._weights @ x + self._bias)

    def to_json_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "input_shape": list(self._input_shape),
            "weights": [float(v) for v in self._weights.ravel()],
            "bias": [float(v) for v in self._bias],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()), encoding="utf-8")

    @classmethod
    def from_json_dict(cls, doc: dict, source: str = "builtin") -> "LinearSoftmaxModel":
        try:
            n = int(doc["n_classes"])
            shape = tuple(int(v) for v in doc["input_shape"])
            weights = np.asarray(doc["weights"], dtype=np.float64).reshape(n, -1)
            bias = np.asarray(doc["bias"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as err:
            raise ParseError(f"malformed linear-softmax model file: {err}") from err
        return cls(weights, bias, shape, source=source)

    @classmethod
    def load(cls, path) -> "LinearSoftmaxModel":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ParseError(str(err), path=str(path)) from err
        return cls.from_json_dict(doc, source=str(path))


def encode_pixels(image: np.ndarray) -> str:
    """Base64 of the image's little-endian float32 pixels, row-major."""
    return base64.b64encode(
        np.ascontiguousarray(image, dtype="<f4").tobytes()
    ).decode("ascii")


def decode_pixels(payload: str, shape, count: int = 1) -> np.ndarray:
    h, w, c = (int(v) for v in shape)
    raw = base64.b64decode(payload.encode("ascii"), validate=True)
    flat = np.frombuffer(raw, dtype="<f4")
    expect = count * h * w * c
    if flat.size != expect:
        raise ProtocolError(f"pixel payload holds {flat.size} floats, expected {expect}")
    return flat.reshape((count, h, w, c)).astype(np.float32)


class _LineTransport:
    """Reads newline-delimited JSON from a stream on a daemon thread so
    request waits can honor a timeout on any platform."""

    def __init__(self, timeout_s: float):
        self.timeout_s = timeout_s
        self._lines: queue.Queue = queue.Queue()
        self._reader = None

    def _start_reader(self, stream):
        def pump():
            try:
                for line in stream:
                    self._lines.put(line)
            except Exception as err:  # surfaced as EOF with a cause
                self._lines.put(err)
            self._lines.put(None)

        self._reader = threading.Thread(target=pump, daemon=True)
        self._reader.start()

    def send_line(self, text: str) -> None:
        raise NotImplementedError

    def recv_message(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            raise TransportError(f"no response within {self.timeout_s}s") from None
        if line is None:
            raise TransportError("peer closed the connection")
        if isinstance(line, Exception):
            raise TransportError(f"read failed: {line}", cause=line)
        line = line.strip()
        if not line:
            return self.recv_message()
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as err:
            raise ProtocolError(f"peer sent invalid JSON: {line[:120]!r}") from err
        if not isinstance(doc, dict):
            raise ProtocolError("peer sent a non-object message")
        return doc

    def close(self) -> None:
        pass


class _TcpTransport(_LineTransport):
    def __init__(self, host: str, port: int, timeout_s: float):
        super().__init__(timeout_s)
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout_s)
        except OSError as err:
            raise TransportError(f"cannot connect to {host}:{port}: {err}", cause=err) from err
        self._sock.settimeout(timeout_s)
        self._start_reader(self._sock.makefile("r", encoding="utf-8", newline="\n"))

    def send_line(self, text: str) -> None:
        try:
            self._sock.sendall((text + "\n").encode("utf-8"))
        except OSError as err:
            raise TransportError(f"send failed: {err}", cause=err) from err

    def close(self) -> None:
        # the reader thread's makefile handle keeps the fd alive, so an
        # explicit shutdown is what actually sends FIN to the peer
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass


class _CmdTransport(_LineTransport):
    def __init__(self, command: str, timeout_s: float):
        super().__init__(timeout_s)
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as err:
            raise TransportError(f"cannot spawn {command!r}: {err}", cause=err) from err
        self._start_reader(self._proc.stdout)

    def send_line(self, text: str) -> None:
        try:
            self._proc.stdin.write(text + "\n")
            self._proc.stdin.flush()
        except (OSError, ValueError) as err:
            raise TransportError(f"send failed: {err}", cause=err) from err

    def close(self) -> None:
        try:
            self._proc.stdin.close()
        except (OSError, ValueError):
            pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()


class RemoteOracle(OracleClient):
    """Client side of the wire protocol.

    One JSON object per line. The client opens with
    ``{"op":"hello","version":1}`` and the server answers with its class
    count and input shape. Predictions correlate on ``id`` and may arrive
    out of order. A transport failure triggers one reconnect-and-resend;
    a second failure raises TransportError so the run can abort with a
    resumable snapshot.
    """

    serial_only = True

    def __init__(self, descriptor: str, timeout_s: float = DEFAULT_TIMEOUT_S):
        self._descriptor = descriptor
        self._timeout_s = timeout_s
        self._next_id = 0
        self._pending: dict[int, dict] = {}
        self._transport = None
        self._n_classes = 0
        self._input_shape = (0, 0, 0)
        self._connect()

    # -- connection management -------------------------------------------

    def _open_transport(self) -> _LineTransport:
        desc = self._descriptor
        if desc.startswith("tcp:"):
            rest = desc[len("tcp:"):]
            host, _, port = rest.rpartition(":")
            if not host or not port.isdigit():
                raise ConfigurationError(f"bad tcp descriptor {desc!r}, want tcp:host:port")
            return _TcpTransport(host, int(port), self._timeout_s)
        if desc.startswith("cmd:"):
            return _CmdTransport(desc[len("cmd:"):], self._timeout_s)
        raise ConfigurationError(f"unknown oracle descriptor {desc!r}")

    def _connect(self) -> None:
        self._transport = self._open_transport()
        self._pending.clear()
        self._transport.send_line(json.dumps({"op": "hello", "version": PROTOCOL_VERSION}))
        reply = self._transport.recv_message()
        if reply.get("op") != "model":
            raise ProtocolError(f"expected model metadata after hello, got {reply!r}")
        try:
            self._n_classes = int(reply["n_classes"])
            self._input_shape = tuple(int(v) for v in reply["input_shape"])
        except (KeyError, TypeError, ValueError) as err:
            raise ProtocolError(f"malformed model metadata: {reply!r}") from err
        if self._n_classes < 2 or len(self._input_shape) != 3:
            raise ProtocolError(f"unusable model metadata: {reply!r}")

    def _reconnect(self) -> None:
        if self._transport is not None:
            self._transport.close()
        self._connect()

    # -- request plumbing --------------------------------------------------

    def _take_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def _await_response(self, want_id: int) -> dict:
        if want_id in self._pending:
            return self._pending.pop(want_id)
        while True:
            msg = self._transport.recv_message()
            if msg.get("op") == "error" and "id" not in msg:
                raise ProtocolError(f"server error: {msg.get('message', '?')}")
            mid = msg.get("id")
            if mid == want_id:
                return msg
            if mid is None:
                raise ProtocolError(f"response without id: {msg!r}")
            self._pending[int(mid)] = msg

    def _roundtrip(self, request: dict) -> dict:
        """Send one request with a single retry on transport failure."""
        first_error = None
        for attempt in (1, 2):
            try:
                request = dict(request, id=self._take_id())
                self._transport.send_line(json.dumps(request))
                return self._await_response(request["id"])
            except TransportError as err:
                first_error = err
                if attempt == 1:
                    try:
                        self._reconnect()
                    except (TransportError, ProtocolError) as err2:
                        raise TransportError(
                            f"reconnect failed: {err2}", attempts=2, cause=first_error
                        ) from err2
        raise TransportError(
            f"request failed after retry: {first_error}", attempts=2, cause=first_error
        )

    @staticmethod
    def _probs_from(msg: dict, key: str):
        if msg.get("op") == "error":
            raise InputError(f"server rejected request: {msg.get('message', '?')}")
        if msg.get("op") != "result" or key not in msg:
            raise ProtocolError(f"unexpected response: {msg!r}")
        return msg[key]

    # -- OracleClient surface ---------------------------------------------

    @property
    def n_classes(self) -> int:
        return self._n_classes

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self._input_shape

    def describe(self) -> str:
        return self._descriptor

    def _prob_vector(self, image: np.ndarray) -> np.ndarray:
        msg = self._roundtrip(
            {
                "op": "predict",
                "shape": list(self._input_shape),
                "pixels": encode_pixels(image),
            }
        )
        return np.asarray(self._probs_from(msg, "probs"), dtype=np.float64)

    def predict_batch(self, images) -> list[Prediction]:
        validated = []
        for i, img in enumerate(images):
            try:
                validated.append(self._check_shape(img))
            except CodofuzzError as err:
                raise type(err)(f"batch index {i}: {err}") from err
        images = validated
        if not images:
            return []
        stacked = np.stack(images)
        t0 = time.perf_counter_ns()
        msg = self._roundtrip(
            {
                "op": "predict",
                "shape": list(self._input_shape),
                "count": len(images),
                "pixels_batch": base64.b64encode(
                    np.ascontiguousarray(stacked, dtype="<f4").tobytes()
                ).decode("ascii"),
            }
        )
        latency_us = (time.perf_counter_ns() - t0) // (1000 * len(images))
        rows = self._probs_from(msg, "probs_batch")
        if len(rows) != len(images):
            raise ProtocolError(f"batch returned {len(rows)} rows for {len(images)} images")
        out = []
        for row in rows:
            probs = np.asarray(row, dtype=np.float64)
            out.append(
                Prediction(
                    prob_vector=probs,
                    output=OutputTuple.from_probs(probs),
                    latency_us=int(latency_us),
                )
            )
        return out

    def close(self) -> None:
        if self._transport is not None:
            self._transport.close()
            self._transport = None


def connect_oracle(descriptor: str, timeout_s: float = DEFAULT_TIMEOUT_S) -> OracleClient:
    """Build an oracle from a CLI-style descriptor:

    * ``builtin:<model.json>`` - in-process linear-softmax model
    * ``tcp:<host>:<port>``    - wire protocol over a stream socket
    * ``cmd:<command line>``   - wire protocol over a subprocess pipe
    """
    if descriptor.startswith("builtin:"):
        return LinearSoftmaxModel.load(descriptor[len("builtin:"):])
    if descriptor.startswith(("tcp:", "cmd:")):
        return RemoteOracle(descriptor, timeout_s=timeout_s)
    raise ConfigurationError(f"unknown oracle descriptor {descriptor!r}")
