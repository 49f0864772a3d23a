"""The wire-protocol server.

One JSON object per line. The peer opens with
{"op":"hello","version":1} and gets the model's class count and input
shape back; each {"op":"predict"} request is answered exactly once,
correlated by id, as {"op":"result",...} or {"op":"error",...}. A
malformed or unanswerable request produces an error response (with the
request id whenever one could be recovered) and never takes the server
down; only EOF or a signal ends the session.

Pixels arrive as base64 little-endian float32 in [0, 1], row-major
(height, width, channels); the batch form stacks `count` images. Any
input normalization is applied here, server-side.
"""

from __future__ import annotations

import base64
import json
import logging
import socket
import sys

import numpy as np

from .models import ServedModel

log = logging.getLogger("model_server")

PROTOCOL_VERSION = 1


class RequestError(Exception):
    """A request that cannot be served; the message goes to the peer."""


def decode_pixels(payload: str, shape, count: int) -> np.ndarray:
    try:
        raw = base64.b64decode(str(payload).encode("ascii"), validate=True)
    except (ValueError, UnicodeEncodeError) as err:
        raise RequestError(f"bad base64 pixel payload: {err}") from err
    h, w, c = shape
    flat = np.frombuffer(raw, dtype="<f4")
    expect = count * h * w * c
    if flat.size != expect:
        raise RequestError(f"pixel payload holds {flat.size} floats, expected {expect}")
    return flat.reshape((count, h, w, c)).astype(np.float64)


def _request_shape(msg: dict, model: ServedModel) -> tuple[int, int, int]:
    try:
        shape = tuple(int(v) for v in msg["shape"])
    except (KeyError, TypeError, ValueError) as err:
        raise RequestError(f"missing or malformed shape field: {err}") from err
    if len(shape) != 3:
        raise RequestError(f"shape must be [H, W, C], got {list(shape)}")
    if shape != model.input_shape:
        raise RequestError(
            f"request shape {list(shape)} does not match model input {list(model.input_shape)}"
        )
    return shape


class ModelServer:
    """Per-message protocol logic, transport-agnostic and stateless
    beyond the wrapped model (so transports stay trivial)."""

    def __init__(self, model: ServedModel):
        self.model = model

    def handle_line(self, line: str) -> list[str]:
        """Process one incoming line; returns the response lines to send
        (empty for blank input)."""
        line = line.strip()
        if not line:
            return []
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as err:
            return [self._encode({"op": "error", "message": f"malformed JSON: {err}"})]
        if not isinstance(msg, dict):
            return [self._encode({"op": "error", "message": "message must be a JSON object"})]
        return [self._encode(self._respond(msg))]

    def _respond(self, msg: dict) -> dict:
        op = msg.get("op")
        req_id = msg.get("id")
        if op == "hello":
            h, w, c = self.model.input_shape
            return {"op": "model", "n_classes": self.model.n_classes, "input_shape": [h, w, c]}
        if op != "predict":
            return self._error(req_id, f"unknown op {op!r}")
        try:
            return self._predict(msg, req_id)
        except RequestError as err:
            return self._error(req_id, str(err))
        except ValueError as err:
            return self._error(req_id, f"prediction failed: {err}")

    def _predict(self, msg: dict, req_id) -> dict:
        if req_id is None:
            raise RequestError("predict request carries no id")
        shape = _request_shape(msg, self.model)
        if "pixels_batch" in msg:
            try:
                count = int(msg["count"])
            except (KeyError, TypeError, ValueError) as err:
                raise RequestError(f"batch request needs a count field: {err}") from err
            if count < 0:
                raise RequestError(f"count must be nonnegative, got {count}")
            images = decode_pixels(msg["pixels_batch"], shape, count)
            rows = [self.model.probs_for(img).tolist() for img in images]
            return {"op": "result", "id": req_id, "probs_batch": rows}
        if "pixels" not in msg:
            raise RequestError("predict request carries neither pixels nor pixels_batch")
        image = decode_pixels(msg["pixels"], shape, 1)[0]
        return {"op": "result", "id": req_id, "probs": self.model.probs_for(image).tolist()}

    @staticmethod
    def _error(req_id, message: str) -> dict:
        out = {"op": "error", "message": message}
        if req_id is not None:
            out["id"] = req_id
        return out

    @staticmethod
    def _encode(msg: dict) -> str:
        return json.dumps(msg, separators=(",", ":"))


def serve_stdio(model: ServedModel, stdin=None, stdout=None) -> None:
    """Answer requests on a stdio pipe until EOF."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    server = ModelServer(model)
    log.info("serving %s on stdio", model.name)
    for line in stdin:
        for response in server.handle_line(line):
            stdout.write(response + "\n")
        stdout.flush()


def serve_tcp(model: ServedModel, host: str = "127.0.0.1", port: int = 0, ready=None) -> None:
    """Answer requests over TCP, one connection at a time, until the
    listener is closed. ``ready(bound_port)`` fires once listening."""
    server = ModelServer(model)
    with socket.create_server((host, port)) as listener:
        bound = listener.getsockname()[1]
        log.info("serving %s on %s:%d", model.name, host, bound)
        if ready is not None:
            ready(bound)
        while True:
            try:
                conn, peer = listener.accept()
            except OSError:
                return  # listener closed
            log.info("connection from %s:%d", *peer)
            with conn:
                reader = conn.makefile("r", encoding="utf-8", newline="\n")
                try:
                    for line in reader:
                        for response in server.handle_line(line):
                            conn.sendall((response + "\n").encode("utf-8"))
                except (ConnectionError, OSError) as err:
                    log.warning("connection dropped: %s", err)
            log.info("connection closed")
