"""Shipped desk-scale assets: a synthetic blob dataset and a matching
linear-softmax classifier.

Three classes sit on a ring around the image center, 30 degrees apart,
each rendering an elongated bar that points along its coordinate's
polar direction. Coordinate noise is anisotropic: generous along the
radial axis (which only modulates confidence) and tight along the
tangential axis (which is what separates the classes). The classifier's
weight rows are the bars rendered at the class means, so it behaves
like a template matcher.

Two properties follow, mirroring how trained networks respond to input
corruption. Clean samples classify correctly with high confidence, and
rotating an image damages its template match symmetrically in the
rotation magnitude (the bar both slides along the ring and turns out of
alignment), so accuracy decays smoothly and monotonically with the
rotation budget. Mutations that blur, rescale, or warp the bar spread
the model's confidence over the whole reachable range, giving
coverage-guided fuzzing a landscape worth exploring.

Everything here is produced deterministically from fixed constants; no
training and no stored binaries.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .dataio import SyntheticBlobs, render_blob_image
from .oracle import LinearSoftmaxModel

DESK_N_CLASSES = 3
DESK_HEIGHT = 16
DESK_WIDTH = 16
DESK_BUMP_SIGMA = 1.5
DESK_BAR_ASPECT = 4.0
DESK_RING_RADIUS = 0.30
DESK_CLASS_GAP_DEGREES = 30.0
DESK_BASE_ANGLE_DEGREES = 90.0
DESK_RADIAL_SIGMA = 0.04
DESK_ANGULAR_SIGMA_DEGREES = 4.0
DESK_MODEL_GAIN = 0.7
DESK_DATASET_SEED = 7
DESK_DATASET_COUNT = 600


def desk_class_angles() -> tuple[float, ...]:
    return tuple(
        DESK_BASE_ANGLE_DEGREES + DESK_CLASS_GAP_DEGREES * k for k in range(DESK_N_CLASSES)
    )


def desk_means() -> tuple[tuple[float, float], ...]:
    """Class coordinate means on the ring, in unit (x, y) coordinates."""
    means = []
    for angle_deg in desk_class_angles():
        angle = math.radians(angle_deg)
        means.append(
            (
                0.5 + DESK_RING_RADIUS * math.cos(angle),
                0.5 + DESK_RING_RADIUS * math.sin(angle),
            )
        )
    return tuple(means)


def desk_covs() -> tuple[tuple[tuple[float, float], tuple[float, float]], ...]:
    """Per-class coordinate covariance: radial sigma along the ring
    normal, a small angular sigma along the ring tangent."""
    sig_t = DESK_RING_RADIUS * math.radians(DESK_ANGULAR_SIGMA_DEGREES)
    covs = []
    for angle_deg in desk_class_angles():
        a = math.radians(angle_deg)
        r_hat = np.array([math.cos(a), math.sin(a)])
        t_hat = np.array([-math.sin(a), math.cos(a)])
        cov = DESK_RADIAL_SIGMA**2 * np.outer(r_hat, r_hat) + sig_t**2 * np.outer(t_hat, t_hat)
        covs.append(tuple(tuple(float(v) for v in row) for row in cov))
    return tuple(covs)


def make_blobs_source(
    count: int = DESK_DATASET_COUNT, seed: int = DESK_DATASET_SEED
) -> SyntheticBlobs:
    return SyntheticBlobs(
        n_classes=DESK_N_CLASSES,
        height=DESK_HEIGHT,
        width=DESK_WIDTH,
        means=desk_means(),
        covs=desk_covs(),
        bump_sigma=DESK_BUMP_SIGMA,
        bar_aspect=DESK_BAR_ASPECT,
        count=count,
        seed=seed,
    )


def make_desk_model() -> LinearSoftmaxModel:
    """Template-matching classifier over the class-mean bar renderings."""
    templates = []
    for x, y in desk_means():
        img = render_blob_image(
            DESK_HEIGHT, DESK_WIDTH, x, y, DESK_BUMP_SIGMA, DESK_BAR_ASPECT
        )
        templates.append(img.reshape(-1).astype(np.float64))
    weights = DESK_MODEL_GAIN * np.stack(templates)
    bias = np.zeros(DESK_N_CLASSES)
    return LinearSoftmaxModel(weights, bias, (DESK_HEIGHT, DESK_WIDTH, 1), source="desk")


def write_desk_assets(out_dir) -> tuple[Path, Path]:
    """Write model.json and blobs.json so the CLI can run desk-scale
    fuzzing out of the box. Returns (model_path, dataset_path)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "model.json"
    make_desk_model().save(model_path)
    blobs_path = out / "blobs.json"
    blobs_path.write_text(
        json.dumps(make_blobs_source().to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return model_path, blobs_path
