"""Models the server can wrap.

A ServedModel turns one image (float64, height x width x channels,
values in [0, 1]) into a probability vector. Input normalization
(per-channel mean/std) happens here, server-side, so clients always
speak raw unit-range pixels. If the underlying predictor emits logits,
the server applies its own softmax; either way the result must sum to 1
within 1e-5.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

PROB_SUM_TOL = 1e-5


class ModelLoadError(Exception):
    """The model file could not be loaded or is inconsistent."""


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    shifted = np.exp(z - z.max())
    return shifted / shifted.sum()


@dataclass
class ServedModel:
    n_classes: int
    input_shape: tuple[int, int, int]
    predict_fn: Callable[[np.ndarray], np.ndarray]
    emits_probs: bool
    normalize_mean: np.ndarray | None = None
    normalize_std: np.ndarray | None = None
    name: str = "model"

    def probs_for(self, image: np.ndarray) -> np.ndarray:
        """Probability vector for one image, normalized and softmaxed as
        the model requires."""
        x = np.asarray(image, dtype=np.float64)
        if x.shape != self.input_shape:
            raise ValueError(f"image shape {x.shape} does not match {self.input_shape}")
        if self.normalize_mean is not None:
            x = (x - self.normalize_mean) / self.normalize_std
        y = np.asarray(self.predict_fn(x), dtype=np.float64).reshape(-1)
        if y.shape != (self.n_classes,):
            raise ValueError(f"model produced {y.shape}, expected ({self.n_classes},)")
        probs = y if self.emits_probs else softmax(y)
        total = probs.sum()
        if not np.isfinite(probs).all() or abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"model output is not a probability vector (sum {total})")
        return probs


def _parse_normalization(mean, std, channels: int):
    if mean is None and std is None:
        return None, None
    mean_arr = np.asarray(mean if mean is not None else [0.0] * channels, dtype=np.float64)
    std_arr = np.asarray(std if std is not None else [1.0] * channels, dtype=np.float64)
    if mean_arr.size != channels or std_arr.size != channels:
        raise ModelLoadError(
            f"normalization needs {channels} per-channel values, got {mean_arr.size}/{std_arr.size}"
        )
    if (std_arr <= 0).any():
        raise ModelLoadError("normalization std must be positive")
    return mean_arr.reshape(1, 1, channels), std_arr.reshape(1, 1, channels)


def load_linear_softmax(path) -> ServedModel:
    """Load the engine's linear-softmax model file format:
    {"n_classes", "input_shape", "weights" (row-major), "bias"}.

    This is an independent implementation used for cross-implementation
    parity checks against the in-engine oracle."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        n = int(doc["n_classes"])
        shape = tuple(int(v) for v in doc["input_shape"])
        weights = np.asarray(doc["weights"], dtype=np.float64).reshape(n, -1)
        bias = np.asarray(doc["bias"], dtype=np.float64)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
        raise ModelLoadError(f"{path}: {err}") from err
    h, w, c = shape
    if weights.shape[1] != h * w * c or bias.shape != (n,):
        raise ModelLoadError(f"{path}: weight/bias shapes do not match the declared input")

    def predict(image: np.ndarray) -> np.ndarray:
        return softmax(weights @ image.reshape(-1) + bias)

    return ServedModel(
        n_classes=n,
        input_shape=shape,
        predict_fn=predict,
        emits_probs=True,
        name=path.name,
    )


def load_torchscript(
    path,
    input_shape: tuple[int, int, int],
    mean=None,
    std=None,
    device: str = "cpu",
) -> ServedModel:
    """Wrap a TorchScript classifier. The module takes a (1, C, H, W)
    float tensor and returns logits; normalization is applied before the
    HWC -> CHW transpose feeds it."""
    try:
        import torch
    except ImportError as err:
        raise ModelLoadError("torch is not installed; cannot serve TorchScript models") from err
    try:
        module = torch.jit.load(str(path), map_location=device)
    except (OSError, RuntimeError) as err:
        raise ModelLoadError(f"{path}: {err}") from err
    module.eval()
    h, w, c = (int(v) for v in input_shape)
    mean_arr, std_arr = _parse_normalization(mean, std, c)

    probe = torch.zeros((1, c, h, w), device=device)
    with torch.no_grad():
        out = module(probe)
    n_classes = int(out.reshape(-1).shape[0])

    def predict(image: np.ndarray) -> np.ndarray:
        tensor = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))[None]).to(
            device=device, dtype=torch.float32
        )
        with torch.no_grad():
            logits = module(tensor)
        return logits.detach().cpu().double().numpy().reshape(-1)

    model = ServedModel(
        n_classes=n_classes,
        input_shape=(h, w, c),
        predict_fn=predict,
        emits_probs=False,
        normalize_mean=mean_arr,
        normalize_std=std_arr,
        name=Path(path).name,
    )
    return model


def load_model(
    spec: str,
    input_shape=None,
    mean=None,
    std=None,
    device: str = "cpu",
) -> ServedModel:
    """Resolve a --model argument: .json is the linear-softmax format,
    .pt/.pth is TorchScript (requires --input-shape)."""
    path = Path(spec)
    if path.suffix == ".json":
        model = load_linear_softmax(path)
        if mean is not None or std is not None:
            model.normalize_mean, model.normalize_std = _parse_normalization(
                mean, std, model.input_shape[2]
            )
        return model
    if path.suffix in (".pt", ".pth"):
        if input_shape is None:
            raise ModelLoadError("TorchScript models need --input-shape H,W,C")
        return load_torchscript(path, input_shape, mean=mean, std=std, device=device)
    raise ModelLoadError(f"unrecognized model file {spec!r} (want .json, .pt, or .pth)")
