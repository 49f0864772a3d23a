"""Tests for softmax, the built-in linear model, and the wire-protocol
client (against a minimal in-test stub server)."""

import json
import socket
import sys
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codofuzz.errors import ConfigurationError, InputError, TransportError
from codofuzz.oracle import (
    LinearSoftmaxModel,
    RemoteOracle,
    connect_oracle,
    decode_pixels,
    encode_pixels,
    softmax,
)

# softmax(1, 2, 3) computed with 40-digit arithmetic
SOFTMAX_123 = (
    0.0900305731703804579980221,
    0.2447284710547976524729596,
    0.6652409557748218895290183,
)


class TestSoftmax:
    def test_uniform_logits(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_large_logits_do_not_overflow(self):
        probs = softmax([1000.0, 0.0])
        assert np.isfinite(probs).all()
        assert probs[0] == pytest.approx(1.0)
        assert probs[1] == pytest.approx(0.0, abs=1e-300)

    def test_matches_extended_precision_reference(self):
        np.testing.assert_allclose(softmax([1.0, 2.0, 3.0]), SOFTMAX_123, rtol=0, atol=1e-12)

    def test_two_class_closed_form(self):
        probs = softmax([1.0, 0.0])
        assert probs[0] == pytest.approx(0.7310585786300049, abs=1e-12)
        assert probs[1] == pytest.approx(0.2689414213699951, abs=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(InputError):
            softmax([1.0, float("nan")])
        with pytest.raises(InputError):
            softmax([float("inf"), 0.0])

    @given(
        logits=st.lists(st.floats(-50, 50), min_size=2, max_size=8),
        shift=st.floats(-100, 100),
    )
    @settings(max_examples=200, deadline=None)
    def test_shift_invariance(self, logits, shift):
        z = np.asarray(logits)
        np.testing.assert_allclose(softmax(z + shift), softmax(z), atol=1e-12)

    @given(logits=st.lists(st.floats(-50, 50), min_size=2, max_size=8))
    @settings(max_examples=200, deadline=None)
    def test_simplex_output(self, logits):
        probs = softmax(logits)
        assert (probs > 0).all()
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)


def zero_model(n_classes=4, shape=(2, 2, 1)):
    d = shape[0] * shape[1] * shape[2]
    return LinearSoftmaxModel(np.zeros((n_classes, d)), np.zeros(n_classes), shape)


class TestLinearSoftmaxModel:
    def test_zero_weights_give_uniform(self):
        model = zero_model()
        pred = model.predict(np.zeros((2, 2, 1), dtype=np.float32))
        np.testing.assert_allclose(pred.prob_vector, [0.25] * 4, atol=1e-15)
        assert pred.output.predicted_class == 0  # tie-break

    def test_two_class_logits(self):
        # weights chosen so a one-pixel image produces logits (1, 0)
        weights = np.array([[1.0], [0.0]])
        model = LinearSoftmaxModel(weights, np.zeros(2), (1, 1, 1))
        pred = model.predict(np.ones((1, 1, 1), dtype=np.float32))
        assert pred.prob_vector[0] == pytest.approx(0.7310585786300049, abs=1e-12)

    def test_simplex_property_over_random_images(self):
        rng = np.random.default_rng(5)
        model = LinearSoftmaxModel(
            rng.normal(size=(6, 12)), rng.normal(size=6), (2, 2, 3)
        )
        for _ in range(1000):
            img = rng.random((2, 2, 3)).astype(np.float32)
            pred = model.predict(img)
            assert pred.prob_vector.sum() == pytest.approx(1.0, abs=1e-5)
            assert pred.output.confidence >= 1 / 6 - 1e-9

    def test_determinism(self):
        rng = np.random.default_rng(6)
        model = LinearSoftmaxModel(rng.normal(size=(3, 4)), rng.normal(size=3), (2, 2, 1))
        img = rng.random((2, 2, 1)).astype(np.float32)
        a = model.predict(img)
        b = model.predict(img)
        assert np.array_equal(a.prob_vector, b.prob_vector)
        assert a == b

    def test_shape_mismatch_rejected(self):
        model = zero_model()
        with pytest.raises(InputError):
            model.predict(np.zeros((3, 3, 1), dtype=np.float32))

    def test_batch_empty(self):
        assert zero_model().predict_batch([]) == []

    def test_batch_matches_singles(self):
        rng = np.random.default_rng(7)
        model = LinearSoftmaxModel(rng.normal(size=(5, 12)), rng.normal(size=5), (2, 2, 3))
        images = [rng.random((2, 2, 3)).astype(np.float32) for _ in range(256)]
        batch = model.predict_batch(images)
        singles = [model.predict(img) for img in images]
        assert len(batch) == len(singles)
        for got, want in zip(batch, singles):
            assert np.array_equal(got.prob_vector, want.prob_vector)

    def test_batch_reports_failing_index(self):
        model = zero_model()
        good = np.zeros((2, 2, 1), dtype=np.float32)
        bad = np.zeros((3, 3, 1), dtype=np.float32)
        with pytest.raises(InputError, match="batch index 1"):
            model.predict_batch([good, bad])

    def test_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        model = LinearSoftmaxModel(rng.normal(size=(3, 8)), rng.normal(size=3), (2, 4, 1))
        path = tmp_path / "model.json"
        model.save(path)
        again = LinearSoftmaxModel.load(path)
        img = rng.random((2, 4, 1)).astype(np.float32)
        assert np.array_equal(model.predict(img).prob_vector, again.predict(img).prob_vector)

    def test_rejects_mismatched_shapes(self):
        with pytest.raises(ConfigurationError):
            LinearSoftmaxModel(np.zeros((3, 5)), np.zeros(3), (2, 2, 1))
        with pytest.raises(ConfigurationError):
            LinearSoftmaxModel(np.zeros((3, 4)), np.zeros(2), (2, 2, 1))


class TestPixelCodec:
    def test_round_trip(self):
        rng = np.random.default_rng(9)
        img = rng.random((4, 3, 1)).astype(np.float32)
        decoded = decode_pixels(encode_pixels(img), (4, 3, 1))
        assert np.array_equal(decoded[0], img)


# ---------------------------------------------------------------------------
# wire protocol client against a stub server
# ---------------------------------------------------------------------------


class StubServer(threading.Thread):
    """Line-delimited JSON peer wrapping a LinearSoftmaxModel, with knobs
    for delivering responses out of order or dropping a connection."""

    def __init__(self, model: LinearSoftmaxModel, decoy_first=False, drop_after=None):
        super().__init__(daemon=True)
        self.model = model
        self.decoy_first = decoy_first
        self.drop_after = drop_after
        self.listener = socket.create_server(("127.0.0.1", 0))
        self.port = self.listener.getsockname()[1]
        self.requests_served = 0

    def _respond(self, msg: dict) -> dict:
        if msg.get("op") == "hello":
            h, w, c = self.model.input_shape
            return {"op": "model", "n_classes": self.model.n_classes, "input_shape": [h, w, c]}
        if msg.get("op") != "predict":
            return {"op": "error", "id": msg.get("id"), "message": "unknown op"}
        shape = msg["shape"]
        if "pixels_batch" in msg:
            images = decode_pixels(msg["pixels_batch"], shape, count=int(msg["count"]))
            rows = [self.model.predict(img).prob_vector.tolist() for img in images]
            return {"op": "result", "id": msg["id"], "probs_batch": rows}
        image = decode_pixels(msg["pixels"], shape)[0]
        return {"op": "result", "id": msg["id"], "probs": self.model.predict(image).prob_vector.tolist()}

    def run(self):
        while True:
            try:
                conn, _ = self.listener.accept()
            except OSError:
                return
            with conn, conn.makefile("r", encoding="utf-8") as reader:
                for line in reader:
                    if self.drop_after is not None and self.requests_served >= self.drop_after:
                        break  # simulate a dying server
                    msg = json.loads(line)
                    reply = self._respond(msg)
                    self.requests_served += 1
                    if self.decoy_first and reply.get("op") == "result":
                        # an out-of-order response for some other request id
                        decoy = dict(reply, id=reply["id"] + 1000)
                        conn.sendall((json.dumps(decoy) + "\n").encode())
                    conn.sendall((json.dumps(reply) + "\n").encode())

    def close(self):
        self.listener.close()


@pytest.fixture
def stub_model():
    rng = np.random.default_rng(42)
    return LinearSoftmaxModel(rng.normal(size=(3, 8)), rng.normal(size=3), (2, 4, 1))


class TestRemoteOracle:
    def test_handshake_and_predict(self, stub_model):
        server = StubServer(stub_model)
        server.start()
        try:
            with RemoteOracle(f"tcp:127.0.0.1:{server.port}", timeout_s=5) as oracle:
                assert oracle.n_classes == 3
                assert oracle.input_shape == (2, 4, 1)
                rng = np.random.default_rng(1)
                for _ in range(20):
                    img = rng.random((2, 4, 1)).astype(np.float32)
                    got = oracle.predict(img)
                    want = stub_model.predict(np.asarray(img, dtype="<f4"))
                    np.testing.assert_allclose(got.prob_vector, want.prob_vector, atol=1e-9)
        finally:
            server.close()

    def test_out_of_order_responses_correlate(self, stub_model):
        server = StubServer(stub_model, decoy_first=True)
        server.start()
        try:
            with RemoteOracle(f"tcp:127.0.0.1:{server.port}", timeout_s=5) as oracle:
                rng = np.random.default_rng(2)
                images = [rng.random((2, 4, 1)).astype(np.float32) for _ in range(4)]
                preds = [oracle.predict(img) for img in images]
                for img, pred in zip(images, preds):
                    want = stub_model.predict(img)
                    np.testing.assert_allclose(pred.prob_vector, want.prob_vector, atol=1e-9)
        finally:
            server.close()

    def test_batch_equals_singles(self, stub_model):
        server = StubServer(stub_model)
        server.start()
        try:
            with RemoteOracle(f"tcp:127.0.0.1:{server.port}", timeout_s=5) as oracle:
                rng = np.random.default_rng(3)
                images = [rng.random((2, 4, 1)).astype(np.float32) for _ in range(8)]
                batch = oracle.predict_batch(images)
                singles = [oracle.predict(img) for img in images]
                for got, want in zip(batch, singles):
                    assert np.array_equal(got.prob_vector, want.prob_vector)
        finally:
            server.close()

    def test_single_retry_then_recovery(self, stub_model):
        # server drops the connection after the handshake + first predict;
        # the client must reconnect and answer the second predict anyway
        server = StubServer(stub_model, drop_after=2)
        server.start()
        try:
            with RemoteOracle(f"tcp:127.0.0.1:{server.port}", timeout_s=5) as oracle:
                rng = np.random.default_rng(4)
                img = rng.random((2, 4, 1)).astype(np.float32)
                first = oracle.predict(img)
                server.drop_after = None  # let the re-connection live
                second = oracle.predict(img)
                assert np.array_equal(first.prob_vector, second.prob_vector)
        finally:
            server.close()

    def test_transport_error_after_double_failure(self, stub_model):
        server = StubServer(stub_model, drop_after=1)
        server.start()
        try:
            with pytest.raises(TransportError) as info:
                with RemoteOracle(f"tcp:127.0.0.1:{server.port}", timeout_s=1) as oracle:
                    server.drop_after = 0  # every later request dies, reconnects included
                    oracle.predict(np.zeros((2, 4, 1), dtype=np.float32))
            assert info.value.attempts == 2
        finally:
            server.close()

    def test_cmd_transport(self, stub_model, tmp_path):
        model_path = tmp_path / "model.json"
        stub_model.save(model_path)
        script = tmp_path / "serve_stub.py"
        script.write_text(STDIO_STUB, encoding="utf-8")
        desc = f"cmd:{sys.executable} {script} {model_path}"
        with connect_oracle(desc, timeout_s=10) as oracle:
            assert oracle.n_classes == 3
            rng = np.random.default_rng(11)
            img = rng.random((2, 4, 1)).astype(np.float32)
            got = oracle.predict(img)
            want = stub_model.predict(img)
            np.testing.assert_allclose(got.prob_vector, want.prob_vector, atol=1e-9)

    def test_bad_descriptor(self):
        with pytest.raises(ConfigurationError):
            connect_oracle("carrier-pigeon:coop")
        with pytest.raises(ConfigurationError):
            RemoteOracle("tcp:nonsense")


STDIO_STUB = """\
import json, sys
from codofuzz.oracle import LinearSoftmaxModel, decode_pixels

model = LinearSoftmaxModel.load(sys.argv[1])
for line in sys.stdin:
    msg = json.loads(line)
    if msg["op"] == "hello":
        h, w, c = model.input_shape
        out = {"op": "model", "n_classes": model.n_classes, "input_shape": [h, w, c]}
    else:
        img = decode_pixels(msg["pixels"], msg["shape"])[0]
        out = {"op": "result", "id": msg["id"], "probs": model.predict(img).prob_vector.tolist()}
    sys.stdout.write(json.dumps(out) + "\\n")
    sys.stdout.flush()
"""
