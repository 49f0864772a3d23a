"""Protocol-level tests for the server: message handling, error
responses, id discipline, and both transports."""

import base64
import io
import json
import socket
import threading

import numpy as np
import pytest

from model_server.models import ModelLoadError, ServedModel, load_linear_softmax, load_model
from model_server.server import ModelServer, serve_stdio, serve_tcp

from codofuzz.desk import write_desk_assets


@pytest.fixture(scope="module")
def model_path(tmp_path_factory):
    root = tmp_path_factory.mktemp("assets")
    model_path, _ = write_desk_assets(root)
    return model_path


@pytest.fixture(scope="module")
def model(model_path):
    return load_linear_softmax(model_path)


def encode_image(img: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(img, dtype="<f4").tobytes()).decode("ascii")


def roundtrip(server: ModelServer, msg) -> dict:
    if isinstance(msg, dict):
        msg = json.dumps(msg)
    (line,) = server.handle_line(msg)
    return json.loads(line)


class TestHandleLine:
    def test_hello_echoes_metadata(self, model):
        server = ModelServer(model)
        reply = roundtrip(server, {"op": "hello", "version": 1})
        assert reply == {"op": "model", "n_classes": 3, "input_shape": [16, 16, 1]}

    def test_all_zeros_image_probs_sum_to_one(self, model):
        server = ModelServer(model)
        img = np.zeros((16, 16, 1), dtype=np.float32)
        reply = roundtrip(server, {
            "op": "predict", "id": 1, "shape": [16, 16, 1], "pixels": encode_image(img),
        })
        assert reply["op"] == "result" and reply["id"] == 1
        assert sum(reply["probs"]) == pytest.approx(1.0, abs=1e-5)

    def test_unknown_op_is_error_not_crash(self, model):
        server = ModelServer(model)
        reply = roundtrip(server, {"op": "train", "id": 9})
        assert reply["op"] == "error" and reply["id"] == 9
        # still responsive afterwards
        assert roundtrip(server, {"op": "hello", "version": 1})["op"] == "model"

    def test_malformed_json_is_error_without_id(self, model):
        server = ModelServer(model)
        reply = roundtrip(server, "this is not json {")
        assert reply["op"] == "error" and "id" not in reply

    def test_shape_mismatch_is_per_request_error(self, model):
        server = ModelServer(model)
        img = np.zeros((8, 8, 1), dtype=np.float32)
        reply = roundtrip(server, {
            "op": "predict", "id": 4, "shape": [8, 8, 1], "pixels": encode_image(img),
        })
        assert reply["op"] == "error" and reply["id"] == 4
        assert "shape" in reply["message"]

    def test_payload_size_mismatch(self, model):
        server = ModelServer(model)
        img = np.zeros((4, 4, 1), dtype=np.float32)
        reply = roundtrip(server, {
            "op": "predict", "id": 5, "shape": [16, 16, 1], "pixels": encode_image(img),
        })
        assert reply["op"] == "error" and reply["id"] == 5

    def test_predict_without_id_is_error(self, model):
        server = ModelServer(model)
        img = np.zeros((16, 16, 1), dtype=np.float32)
        reply = roundtrip(server, {"op": "predict", "shape": [16, 16, 1], "pixels": encode_image(img)})
        assert reply["op"] == "error"

    def test_batch_request(self, model):
        server = ModelServer(model)
        rng = np.random.default_rng(0)
        batch = rng.random((3, 16, 16, 1)).astype(np.float32)
        reply = roundtrip(server, {
            "op": "predict", "id": 6, "shape": [16, 16, 1],
            "count": 3, "pixels_batch": encode_image(batch),
        })
        assert reply["op"] == "result"
        assert len(reply["probs_batch"]) == 3
        for row, img in zip(reply["probs_batch"], batch):
            want = model.probs_for(img.astype(np.float64))
            np.testing.assert_allclose(row, want, atol=1e-12)

    def test_blank_lines_ignored(self, model):
        assert ModelServer(model).handle_line("   \n") == []

    def test_offline_equivalence_1000_requests(self, model):
        server = ModelServer(model)
        rng = np.random.default_rng(1)
        for i in range(1000):
            img = rng.random((16, 16, 1)).astype(np.float32)
            reply = roundtrip(server, {
                "op": "predict", "id": i, "shape": [16, 16, 1], "pixels": encode_image(img),
            })
            want = model.probs_for(img.astype(np.float64))
            np.testing.assert_allclose(reply["probs"], want, atol=1e-12)


class TestStdioTransport:
    def test_serve_until_eof(self, model):
        img = np.zeros((16, 16, 1), dtype=np.float32)
        lines = [
            json.dumps({"op": "hello", "version": 1}),
            json.dumps({"op": "predict", "id": 1, "shape": [16, 16, 1], "pixels": encode_image(img)}),
        ]
        stdin = io.StringIO("\n".join(lines) + "\n")
        stdout = io.StringIO()
        serve_stdio(model, stdin=stdin, stdout=stdout)
        replies = [json.loads(l) for l in stdout.getvalue().splitlines()]
        assert replies[0]["op"] == "model"
        assert replies[1]["op"] == "result" and replies[1]["id"] == 1


class TestTcpTransport:
    def test_ids_answered_exactly_once_and_survives_garbage(self, model):
        port_box = {}
        ready = threading.Event()
        thread = threading.Thread(
            target=serve_tcp,
            kwargs=dict(model=model, port=0, ready=lambda p: (port_box.update(p=p), ready.set())),
            daemon=True,
        )
        thread.start()
        assert ready.wait(5)

        rng = np.random.default_rng(2)
        with socket.create_connection(("127.0.0.1", port_box["p"]), timeout=10) as conn:
            reader = conn.makefile("r", encoding="utf-8")

            def send(text):
                conn.sendall((text + "\n").encode("utf-8"))

            send(json.dumps({"op": "hello", "version": 1}))
            assert json.loads(reader.readline())["op"] == "model"

            sent_ids = []
            for i in range(50):
                img = rng.random((16, 16, 1)).astype(np.float32)
                send(json.dumps({
                    "op": "predict", "id": 1000 + i, "shape": [16, 16, 1],
                    "pixels": encode_image(img),
                }))
                sent_ids.append(1000 + i)
                if i % 10 == 3:
                    send("{{{ definitely not json")  # malformed injection
                if i % 10 == 7:
                    send(json.dumps({"op": "mystery", "id": 77000 + i}))

            got_ids = []
            replies = 0
            want_replies = 50 + 5 + 5  # results + malformed errors + unknown-op errors
            while replies < want_replies:
                msg = json.loads(reader.readline())
                replies += 1
                if msg["op"] == "result":
                    got_ids.append(msg["id"])
            assert got_ids == sent_ids  # exactly once each, in order


class TestLoadModel:
    def test_rejects_unknown_suffix(self, tmp_path):
        path = tmp_path / "weights.onnx"
        path.write_bytes(b"x")
        with pytest.raises(ModelLoadError):
            load_model(str(path))

    def test_rejects_malformed_json(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("{\"n_classes\": 3}", encoding="utf-8")
        with pytest.raises(ModelLoadError):
            load_model(str(path))

    def test_normalization_applied(self, model_path):
        plain = load_model(str(model_path))
        normed = load_model(str(model_path), mean=[0.5], std=[2.0])
        img = np.full((16, 16, 1), 0.5)
        # normalized input becomes all zeros: uniform probabilities
        np.testing.assert_allclose(normed.probs_for(img), [1 / 3] * 3, atol=1e-12)
        assert not np.allclose(plain.probs_for(img), [1 / 3] * 3)

    def test_served_model_validates_output(self):
        broken = ServedModel(
            n_classes=3, input_shape=(2, 2, 1),
            predict_fn=lambda x: np.array([0.5, 0.1, 0.1]), emits_probs=True,
        )
        with pytest.raises(ValueError):
            broken.probs_for(np.zeros((2, 2, 1)))


class TestTorchScript:
    def test_wraps_scripted_linear(self, tmp_path):
        torch = pytest.importorskip("torch")
        h, w, c = 4, 4, 1

        class Tiny(torch.nn.Module):
            def __init__(self):
                super().__init__()
                self.fc = torch.nn.Linear(h * w * c, 3)
                torch.manual_seed(0)
                with torch.no_grad():
                    self.fc.weight.copy_(torch.randn(3, h * w * c))
                    self.fc.bias.zero_()

            def forward(self, x):
                return self.fc(x.reshape(x.shape[0], -1))

        path = tmp_path / "tiny.pt"
        torch.jit.script(Tiny()).save(str(path))
        served = load_model(str(path), input_shape=(h, w, c))
        assert served.n_classes == 3
        probs = served.probs_for(np.full((h, w, c), 0.25))
        assert probs.sum() == pytest.approx(1.0, abs=1e-5)
        assert (probs > 0).all()
