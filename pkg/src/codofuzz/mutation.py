"""Label-preserving image transformations and the metamorphic validity
constraint that keeps mutants close to their seed.

Transforms split into two families. Pixel-level transforms (auto-contrast,
color jitter, gaussian blur) change values in place; affine transforms
(crop, horizontal flip, rotation, perspective) move content around. Along
any mutation lineage at most one affine transform may appear, and an
affine step resets the reference image that pixel-level changes are
measured against.

A pixel-level mutant is valid when either the number of changed
components stays below an alpha fraction of the image, or the largest
componentwise change stays below beta (on the [0, 1] pixel scale).
Affine mutants are valid by construction because their parameter ranges
are bounded.

Geometric transforms use bilinear interpolation with symmetric edge
reflection (scipy.ndimage's "reflect" mode). Positive rotation angles
turn image content counterclockwise as displayed with row 0 on top.

Everything here is a pure function of its inputs and the rng state, so
mutations parallelize freely as long as each worker owns its own rng
stream.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, InputError
from .images import check_image, quantize, same_shape


class TransformKind(str, enum.Enum):
    RANDOM_CROP = "random_crop"
    AUTO_CONTRAST = "auto_contrast"
    COLOR_JITTER = "color_jitter"
    HORIZONTAL_FLIP = "horizontal_flip"
    ROTATION = "rotation"
    GAUSSIAN_BLUR = "gaussian_blur"
    RANDOM_PERSPECTIVE = "random_perspective"


AFFINE_KINDS = frozenset(
    {
        TransformKind.RANDOM_CROP,
        TransformKind.HORIZONTAL_FLIP,
        TransformKind.ROTATION,
        TransformKind.RANDOM_PERSPECTIVE,
    }
)

PIXEL_KINDS = frozenset(set(TransformKind) - AFFINE_KINDS)


@dataclass(frozen=True)
class TransformRanges:
    """Parameter ranges for sampled transforms. Small by default so that
    mutants stay label-preserving; all CLI-configurable."""

    rotation_max_degrees: float = 15.0
    crop_min_area: float = 0.8
    brightness: tuple[float, float] = (0.8, 1.25)
    contrast: tuple[float, float] = (0.8, 1.25)
    blur_sigma: tuple[float, float] = (0.5, 1.5)
    perspective_max: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.rotation_max_degrees <= 180.0:
            raise ConfigurationError(f"rotation_max_degrees out of range: {self.rotation_max_degrees}")
        if not 0.0 < self.crop_min_area <= 1.0:
            raise ConfigurationError(f"crop_min_area must be in (0, 1]: {self.crop_min_area}")
        for name in ("brightness", "contrast", "blur_sigma"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi):
                raise ConfigurationError(f"{name} range must satisfy 0 < lo <= hi: ({lo}, {hi})")
        if not 0.0 <= self.perspective_max < 0.5:
            raise ConfigurationError(f"perspective_max must be in [0, 0.5): {self.perspective_max}")

    def to_dict(self) -> dict:
        return {
            "rotation_max_degrees": self.rotation_max_degrees,
            "crop_min_area": self.crop_min_area,
            "brightness": list(self.brightness),
            "contrast": list(self.contrast),
            "blur_sigma": list(self.blur_sigma),
            "perspective_max": self.perspective_max,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TransformRanges":
        kwargs = {}
        for name in ("rotation_max_degrees", "crop_min_area", "perspective_max"):
            if name in doc:
                kwargs[name] = float(doc[name])
        for name in ("brightness", "contrast", "blur_sigma"):
            if name in doc:
                lo, hi = doc[name]
                kwargs[name] = (float(lo), float(hi))
        return cls(**kwargs)


@dataclass(frozen=True)
class MutationRecord:
    """Enough to replay one mutation: the transform, its sampled
    parameters, and how many rng draws producing it consumed."""

    kind: TransformKind
    params: dict
    is_affine: bool
    parent_id: int
    rng_draws: int

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "params": self.params,
            "is_affine": self.is_affine,
            "parent_id": self.parent_id,
            "rng_draws": self.rng_draws,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MutationRecord":
        return cls(
            kind=TransformKind(doc["kind"]),
            params=dict(doc["params"]),
            is_affine=bool(doc["is_affine"]),
            parent_id=int(doc["parent_id"]),
            rng_draws=int(doc["rng_draws"]),
        )


@dataclass
class LineageState:
    """Per-lineage bookkeeping: the image pixel-level changes are measured
    against, whether the single allowed affine step was spent, and depth."""

    reference_image: np.ndarray
    affine_used: bool = False
    depth: int = 0

    def child(self, candidate: np.ndarray, record: MutationRecord) -> "LineageState":
        """The state an accepted candidate hands to its own children. An
        affine step resets the reference to the affine output."""
        return LineageState(
            reference_image=candidate if record.is_affine else self.reference_image,
            affine_used=self.affine_used or record.is_affine,
            depth=self.depth + 1,
        )


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Fold integer indices into [0, n) by symmetric reflection
    (... c b a | a b c ... | c b a ...)."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n
    idx = np.remainder(idx, period)
    return np.where(idx >= n, period - 1 - idx, idx)


def _sample_bilinear(image: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample image at fractional (row, col) positions with bilinear
    weights and symmetric edge reflection. Output shape: rows.shape + (C,)."""
    h, w = image.shape[:2]
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = (rows - r0).astype(np.float32)[..., None]
    fc = (cols - c0).astype(np.float32)[..., None]
    r0i = _reflect_index(r0, h)
    r1i = _reflect_index(r0 + 1, h)
    c0i = _reflect_index(c0, w)
    c1i = _reflect_index(c0 + 1, w)
    top = image[r0i, c0i] * (1.0 - fc) + image[r0i, c1i] * fc
    bot = image[r1i, c0i] * (1.0 - fc) + image[r1i, c1i] * fc
    return top * (1.0 - fr) + bot * fr


def _output_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return rows, cols


def _homography_from_corners(src_corners, h: int, w: int) -> np.ndarray:
    """3x3 map (in x=col, y=row homogeneous coords) sending the output
    frame corners onto the given source quad, corner for corner."""
    dst = [(0.0, 0.0), (0.0, w - 1.0), (h - 1.0, w - 1.0), (h - 1.0, 0.0)]
    a = np.zeros((8, 8), dtype=np.float64)
    b = np.zeros(8, dtype=np.float64)
    for i, ((sy, sx), (dy, dx)) in enumerate(zip(src_corners, dst)):
        a[2 * i] = [dx, dy, 1, 0, 0, 0, -dx * sx, -dy * sx]
        b[2 * i] = sx
        a[2 * i + 1] = [0, 0, 0, dx, dy, 1, -dx * sy, -dy * sy]
        b[2 * i + 1] = sy
    coeff = np.linalg.solve(a, b)
    return np.append(coeff, 1.0).reshape(3, 3)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


def _rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    h, w = image.shape[:2]
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = _output_grid(h, w)
    y, x = rows - cy, cols - cx
    src_cols = x * cos_t - y * sin_t + cx
    src_rows = x * sin_t + y * cos_t + cy
    return _sample_bilinear(image, src_rows, src_cols)


def _crop_resize(image: np.ndarray, top: int, left: int, height: int, width: int) -> np.ndarray:
    h, w = image.shape[:2]
    if not (0 <= top and 0 <= left and top + height <= h and left + width <= w and height >= 1 and width >= 1):
        raise ConfigurationError(f"crop box {(top, left, height, width)} outside image {(h, w)}")
    rows, cols = _output_grid(h, w)
    src_rows = top + (rows + 0.5) * (height / h) - 0.5
    src_cols = left + (cols + 0.5) * (width / w) - 0.5
    return _sample_bilinear(image, src_rows, src_cols)


def _perspective(image: np.ndarray, src_corners) -> np.ndarray:
    h, w = image.shape[:2]
    mat = _homography_from_corners(src_corners, h, w)
    rows, cols = _output_grid(h, w)
    denom = mat[2, 0] * cols + mat[2, 1] * rows + mat[2, 2]
    src_cols = (mat[0, 0] * cols + mat[0, 1] * rows + mat[0, 2]) / denom
    src_rows = (mat[1, 0] * cols + mat[1, 1] * rows + mat[1, 2]) / denom
    return _sample_bilinear(image, src_rows, src_cols)


def _auto_contrast(image: np.ndarray) -> np.ndarray:
    out = image.copy()
    for ch in range(image.shape[2]):
        lo = float(image[:, :, ch].min())
        hi = float(image[:, :, ch].max())
        if hi > lo:
            out[:, :, ch] = (image[:, :, ch] - lo) / (hi - lo)
    return out


def _color_jitter(image: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    out = image.astype(np.float64) * brightness
    mean = out.mean()
    out = mean + (out - mean) * contrast
    return out.astype(np.float32)


def _gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(image, sigma=(sigma, sigma, 0.0), mode="reflect")


def apply_transform(image: np.ndarray, kind: TransformKind, params: dict) -> np.ndarray:
    """Apply one transform. Output has the input's shape with pixels
    clamped to [0, 1]; crops are resized back to the original frame."""
    img = check_image(image)
    kind = TransformKind(kind)
    if kind is TransformKind.ROTATION:
        out = _rotate(img, float(params["degrees"]))
    elif kind is TransformKind.HORIZONTAL_FLIP:
        out = img[:, ::-1, :]
    elif kind is TransformKind.RANDOM_CROP:
        out = _crop_resize(
            img,
            int(params["top"]),
            int(params["left"]),
            int(params["height"]),
            int(params["width"]),
        )
    elif kind is TransformKind.RANDOM_PERSPECTIVE:
        corners = [(float(y), float(x)) for y, x in params["src_corners"]]
        if len(corners) != 4:
            raise ConfigurationError("src_corners must list 4 (row, col) points")
        out = _perspective(img, corners)
    elif kind is TransformKind.AUTO_CONTRAST:
        out = _auto_contrast(img)
    elif kind is TransformKind.COLOR_JITTER:
        out = _color_jitter(img, float(params["brightness"]), float(params["contrast"]))
    elif kind is TransformKind.GAUSSIAN_BLUR:
        sigma = float(params["sigma"])
        if sigma <= 0:
            raise ConfigurationError(f"blur sigma must be positive, got {sigma}")
        out = _gaussian_blur(img, sigma)
    else:  # pragma: no cover - enum is exhaustive
        raise ConfigurationError(f"unknown transform {kind}")
    return np.clip(np.ascontiguousarray(out, dtype=np.float32), 0.0, 1.0)


# ---------------------------------------------------------------------------
# sampling and validity
# ---------------------------------------------------------------------------


def admissible_kinds(affine_used: bool, allow_hflip: bool = True) -> list[TransformKind]:
    """Transforms a lineage may still draw from, in enum declaration
    order. Pixel-level kinds always remain, so this is never empty."""
    kinds = []
    for kind in TransformKind:
        if kind in AFFINE_KINDS and affine_used:
            continue
        if kind is TransformKind.HORIZONTAL_FLIP and not allow_hflip:
            continue
        kinds.append(kind)
    return kinds


def _sample_params(
    kind: TransformKind,
    shape: tuple[int, int, int],
    ranges: TransformRanges,
    rng: np.random.Generator,
) -> tuple[dict, int]:
    """Sample parameters for one transform; returns (params, n_draws)."""
    h, w, _ = shape
    if kind is TransformKind.ROTATION:
        return {"degrees": float(rng.uniform(-ranges.rotation_max_degrees, ranges.rotation_max_degrees))}, 1
    if kind is TransformKind.HORIZONTAL_FLIP:
        return {}, 0
    if kind is TransformKind.RANDOM_CROP:
        scale = math.sqrt(float(rng.uniform(ranges.crop_min_area, 1.0)))
        ch = max(1, round(h * scale))
        cw = max(1, round(w * scale))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        return {"top": top, "left": left, "height": ch, "width": cw}, 3
    if kind is TransformKind.RANDOM_PERSPECTIVE:
        dy = ranges.perspective_max * (h - 1) / 2.0
        dx = ranges.perspective_max * (w - 1) / 2.0
        shifts = [float(rng.uniform(0.0, d)) for _ in range(4) for d in (dy, dx)]
        tl = (shifts[0], shifts[1])
        tr = (shifts[2], w - 1 - shifts[3])
        br = (h - 1 - shifts[4], w - 1 - shifts[5])
        bl = (h - 1 - shifts[6], shifts[7])
        return {"src_corners": [list(tl), list(tr), list(br), list(bl)]}, 8
    if kind is TransformKind.AUTO_CONTRAST:
        return {}, 0
    if kind is TransformKind.COLOR_JITTER:
        return {
            "brightness": float(rng.uniform(*ranges.brightness)),
            "contrast": float(rng.uniform(*ranges.contrast)),
        }, 2
    if kind is TransformKind.GAUSSIAN_BLUR:
        return {"sigma": float(rng.uniform(*ranges.blur_sigma))}, 1
    raise ConfigurationError(f"unknown transform {kind}")  # pragma: no cover


def mutate(
    image: np.ndarray,
    lineage: LineageState,
    rng: np.random.Generator,
    ranges: TransformRanges | None = None,
    allow_hflip: bool = True,
    parent_id: int = -1,
) -> tuple[np.ndarray, MutationRecord]:
    """Draw one transform uniformly among the kinds the lineage still
    admits, sample its parameters, and apply it. The candidate is NOT
    quantized or validity-checked here; the fuzz loop owns both."""
    kinds = admissible_kinds(lineage.affine_used, allow_hflip)
    ranges = ranges or TransformRanges()
    kind = kinds[int(rng.integers(0, len(kinds)))]
    params, n_draws = _sample_params(kind, image.shape, ranges, rng)
    candidate = apply_transform(image, kind, params)
    record = MutationRecord(
        kind=kind,
        params=params,
        is_affine=kind in AFFINE_KINDS,
        parent_id=parent_id,
        rng_draws=n_draws + 1,
    )
    return candidate, record


def is_valid(
    reference: np.ndarray,
    candidate: np.ndarray,
    alpha: float = 0.2,
    beta: float = 0.5,
) -> bool:
    """Metamorphic closeness check for pixel-level mutants: either few
    components changed (L0 below alpha of the image) or no component
    changed much (L-infinity below beta on the [0, 1] scale)."""
    if not (0.0 < alpha <= 1.0 and 0.0 < beta <= 1.0):
        raise ConfigurationError(f"alpha and beta must be in (0, 1], got {alpha}, {beta}")
    ref = check_image(reference)
    cand = check_image(candidate)
    same_shape(ref, cand)
    diff = np.abs(cand.astype(np.float64) - ref.astype(np.float64))
    l0 = int(np.count_nonzero(diff))
    if l0 <= alpha * diff.size:
        return True
    return float(diff.max()) <= beta


def replay_lineage(seed_image: np.ndarray, records) -> np.ndarray:
    """Regenerate a test input from its seed and mutation records. Every
    step quantizes back to the 8-bit grid, matching the fuzz loop, so the
    result is bit-for-bit the stored image."""
    img = quantize(check_image(seed_image))
    for record in records:
        img = quantize(apply_transform(img, record.kind, record.params))
    return img
