"""Dataset ingestion, suite persistence, and replayable storage.

Three dataset sources are supported: IDX image/label file pairs
(big-endian, magic 0x00000803 / 0x00000801), directories of PNGs with a
``labels.csv`` index, and a deterministic synthetic generator that
renders class-dependent gaussian blobs for desk-scale runs.

Suites persist to a directory as ``suite.jsonl`` (one metadata record
per accepted input), lossless 8-bit PNGs under ``images/``,
``coverage.json``, ``report.json``, ``trace.csv``, and a
``manifest.json`` carrying SHA-256 digests of everything else so that
corruption is detected on load. Images are quantized to the 8-bit grid
before prediction and storage, which makes stored bytes, oracle inputs,
and lineage replay agree exactly.
"""

from __future__ import annotations

import csv
import hashlib
import math
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from PIL import Image

from .coverage import CoverageSnapshot, OutputTuple
from .errors import ConfigurationError, CorruptionError, DataError, ParseError
from .fuzzer import FuzzReport, SeedPool, TestInput, TestSuite
from .images import check_image, quantize, to_bytes, to_unit
from .mutation import LineageState, MutationRecord
from .oracle import OracleClient, Prediction

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# dataset sources
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdxPair:
    images_path: str
    labels_path: str


@dataclass(frozen=True)
class PngDirectory:
    root: str


@dataclass(frozen=True)
class SyntheticBlobs:
    """Images derived from 2-D blob coordinates: each sample draws a
    coordinate from its class's gaussian cluster and renders a blob
    there. With ``bar_aspect > 1`` the blob is an elongated bar pointing
    along the coordinate's own polar direction (relative to the image
    center), which makes rendered images orientation-sensitive the way
    natural images are. Fully determined by the parameters and seed."""

    n_classes: int
    height: int
    width: int
    means: tuple  # per class, (x, y) in unit coordinates
    covs: tuple  # per class, 2x2 covariance of the coordinate
    bump_sigma: float = 1.8
    bar_aspect: float = 1.0
    count: int = 300
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "kind": "synthetic_blobs",
            "n_classes": self.n_classes,
            "height": self.height,
            "width": self.width,
            "means": [list(m) for m in self.means],
            "covs": [[list(r) for r in c] for c in self.covs],
            "bump_sigma": self.bump_sigma,
            "bar_aspect": self.bar_aspect,
            "count": self.count,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticBlobs":
        return cls(
            n_classes=int(doc["n_classes"]),
            height=int(doc["height"]),
            width=int(doc["width"]),
            means=tuple(tuple(float(v) for v in m) for m in doc["means"]),
            covs=tuple(tuple(tuple(float(v) for v in r) for r in c) for c in doc["covs"]),
            bump_sigma=float(doc.get("bump_sigma", 1.8)),
            bar_aspect=float(doc.get("bar_aspect", 1.0)),
            count=int(doc["count"]),
            seed=int(doc.get("seed", 0)),
        )


DatasetSource = IdxPair | PngDirectory | SyntheticBlobs


def _read_exact(fh, n: int, path: str, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ParseError(
            f"truncated file: wanted {n} bytes for {what}, got {len(buf)}",
            path=path,
            offset=fh.tell() - len(buf),
        )
    return buf


def read_idx_images(path) -> np.ndarray:
    """Read an IDX image file into a uint8 array of shape (n, H, W)."""
    path = str(path)
    with open(path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, path, "header"))
        if magic != IDX_IMAGES_MAGIC:
            raise ParseError(
                f"bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}",
                path=path,
                offset=0,
            )
        data = _read_exact(fh, count * rows * cols, path, f"{count} images of {rows}x{cols}")
    return np.frombuffer(data, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    path = str(path)
    with open(path, "rb") as fh:
        magic, count = struct.unpack(">II", _read_exact(fh, 8, path, "header"))
        if magic != IDX_LABELS_MAGIC:
            raise ParseError(
                f"bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}",
                path=path,
                offset=0,
            )
        data = _read_exact(fh, count, path, f"{count} labels")
    return np.frombuffer(data, dtype=np.uint8)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


def _load_idx(source: IdxPair) -> Iterator[tuple[np.ndarray, int]]:
    images = read_idx_images(source.images_path)
    labels = read_idx_labels(source.labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ParseError(
            f"image count {images.shape[0]} does not match label count {labels.shape[0]}",
            path=source.labels_path,
        )
    for img, label in zip(images, labels):
        yield to_unit(img[:, :, None]), int(label)


def _load_png_dir(source: PngDirectory) -> Iterator[tuple[np.ndarray, int]]:
    root = Path(source.root)
    labels_path = root / "labels.csv"
    if not labels_path.exists():
        raise ParseError("missing labels.csv", path=str(labels_path))
    with open(labels_path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["filename", "label"]:
            raise ParseError(f"labels.csv header must be 'filename,label', got {header}",
                             path=str(labels_path))
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ParseError(f"row {line_no} has {len(row)} fields", path=str(labels_path))
            name, label = row
            img_path = root / "images" / name
            try:
                with Image.open(img_path) as img:
                    if img.mode not in ("L", "RGB"):
                        img = img.convert("RGB" if img.mode in ("RGBA", "P") else "L")
                    arr = np.asarray(img, dtype=np.uint8)
            except OSError as err:
                raise ParseError(f"cannot read image: {err}", path=str(img_path)) from err
            if arr.ndim == 2:
                arr = arr[:, :, None]
            yield to_unit(arr), int(label)


def render_blob_image(
    height: int,
    width: int,
    x: float,
    y: float,
    bump_sigma: float,
    bar_aspect: float = 1.0,
) -> np.ndarray:
    """Render one gaussian blob at unit coordinate (x, y), quantized.

    With ``bar_aspect > 1`` the blob is stretched into a bar whose long
    axis points along the coordinate's polar direction seen from the
    image center; aspect 1 reduces to the isotropic bump."""
    px = float(np.clip(x, 0.0, 1.0)) * (width - 1)
    py = float(np.clip(y, 0.0, 1.0)) * (height - 1)
    phi = math.atan2(y - 0.5, x - 0.5)
    sig_par = bump_sigma * math.sqrt(bar_aspect)
    sig_perp = bump_sigma / math.sqrt(bar_aspect)
    rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    dx = cc - px
    dy = rr - py
    along = dx * math.cos(phi) + dy * math.sin(phi)
    across = -dx * math.sin(phi) + dy * math.cos(phi)
    img = np.exp(-(along**2) / (2.0 * sig_par**2) - (across**2) / (2.0 * sig_perp**2))
    return quantize(img[:, :, None].astype(np.float32))


def _load_blobs(source: SyntheticBlobs) -> Iterator[tuple[np.ndarray, int]]:
    if source.n_classes < 2:
        raise ConfigurationError(f"blobs need >= 2 classes, got {source.n_classes}")
    if len(source.means) != source.n_classes or len(source.covs) != source.n_classes:
        raise ConfigurationError("means and covs must list one entry per class")
    rng = np.random.default_rng(source.seed)
    means = [np.asarray(m, dtype=np.float64) for m in source.means]
    covs = [np.asarray(c, dtype=np.float64) for c in source.covs]
    for i in range(source.count):
        label = i % source.n_classes
        x, y = rng.multivariate_normal(means[label], covs[label])
        yield render_blob_image(
            source.height, source.width, x, y, source.bump_sigma, source.bar_aspect
        ), label


def load_dataset(source: DatasetSource) -> Iterator[tuple[np.ndarray, int]]:
    """Yield (image in [0,1], label) pairs in a deterministic order."""
    if isinstance(source, IdxPair):
        return _load_idx(source)
    if isinstance(source, PngDirectory):
        return _load_png_dir(source)
    if isinstance(source, SyntheticBlobs):
        return _load_blobs(source)
    raise ConfigurationError(f"unknown dataset source {source!r}")


def parse_dataset_arg(text: str) -> DatasetSource:
    """Resolve a CLI dataset argument:

    * ``idx:<images>,<labels>`` or two comma-separated ``.idx`` paths
    * ``png:<dir>`` or a directory containing labels.csv
    * ``blobs:<spec.json>`` or a ``.json`` file with kind synthetic_blobs
    """
    if text.startswith("idx:"):
        images, _, labels = text[4:].partition(",")
        return IdxPair(images, labels)
    if text.startswith("png:"):
        return PngDirectory(text[4:])
    if text.startswith("blobs:"):
        text = text[6:]
    path = Path(text)
    if path.is_dir():
        return PngDirectory(str(path))
    if path.suffix == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("kind") != "synthetic_blobs":
            raise ConfigurationError(f"{path}: unknown dataset kind {doc.get('kind')!r}")
        return SyntheticBlobs.from_dict(doc)
    if "," in text:
        images, _, labels = text.partition(",")
        return IdxPair(images, labels)
    raise ConfigurationError(f"cannot interpret dataset argument {text!r}")


def write_png_dataset(root, items: Iterable[tuple[np.ndarray, int]]) -> None:
    """Write (image, label) pairs as a PngDirectory dataset."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (img, label) in enumerate(items):
        name = f"{i:06d}.png"
        _save_png(root / "images" / name, check_image(img))
        rows.append((name, int(label)))
    with open(root / "labels.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("filename,label\n")
        for name, label in rows:
            fh.write(f"{name},{label}\n")


# ---------------------------------------------------------------------------
# seed selection
# ---------------------------------------------------------------------------


def build_seed_set(
    stream: Iterable[tuple[np.ndarray, int]],
    oracle: OracleClient,
    per_class: int,
    rng: np.random.Generator,
) -> SeedPool:
    """Select up to ``per_class`` correctly classified images per class,
    uniformly at random among the correct ones. Classes with no correct
    image are skipped with a warning and recorded on the pool."""
    if per_class < 1:
        raise ConfigurationError(f"per_class must be >= 1, got {per_class}")
    correct: dict[int, list[tuple[np.ndarray, int, Prediction]]] = {}
    for image, label in stream:
        img = quantize(check_image(image))
        pred = oracle.predict(img)
        if pred.output.predicted_class == label:
            correct.setdefault(label, []).append((img, label, pred))

    pool = SeedPool()
    skipped = [c for c in range(oracle.n_classes) if c not in correct]
    for c in skipped:
        log.warning("class %d has no correctly classified image; skipping", c)
    next_id = 0
    for label in sorted(correct):
        candidates = correct[label]
        if len(candidates) < per_class:
            log.warning(
                "class %d has only %d correct images, wanted %d",
                label, len(candidates), per_class,
            )
            chosen = list(range(len(candidates)))
        else:
            chosen = sorted(rng.choice(len(candidates), size=per_class, replace=False).tolist())
        for idx in chosen:
            img, lbl, pred = candidates[idx]
            seed = TestInput(
                id=next_id,
                image=img,
                ground_truth=lbl,
                seed_root_id=next_id,
                prediction=pred,
            )
            next_id += 1
            pool.add(seed, state=_fresh_state(img))
    pool.skipped_classes = skipped
    if not pool.entries:
        raise ConfigurationError("no class produced a correctly classified seed")
    return pool


def _fresh_state(image: np.ndarray) -> LineageState:
    return LineageState(reference_image=image)


# ---------------------------------------------------------------------------
# suite persistence
# ---------------------------------------------------------------------------


def _save_png(path: Path, image: np.ndarray) -> None:
    raw = to_bytes(image)
    if raw.shape[2] == 1:
        pil = Image.fromarray(raw[:, :, 0], mode="L")
    elif raw.shape[2] == 3:
        pil = Image.fromarray(raw, mode="RGB")
    else:
        raise DataError(f"PNG storage supports 1 or 3 channels, got {raw.shape[2]}")
    pil.save(path, format="PNG", compress_level=6)


def _load_png(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return to_unit(arr)


def _input_record(t: TestInput, image_name: str) -> dict:
    if t.prediction is None:
        raise DataError(f"input {t.id} has no prediction; suites store predicted inputs only")
    return {
        "id": t.id,
        "ground_truth": t.ground_truth,
        "seed_root_id": t.seed_root_id,
        "accepted_iteration": t.accepted_iteration,
        "image": image_name,
        "lineage": [r.to_dict() for r in t.lineage],
        "prediction": {
            "predicted_class": t.prediction.output.predicted_class,
            "confidence": t.prediction.output.confidence,
            "probs": [float(v) for v in t.prediction.prob_vector],
        },
    }


def _input_from_record(doc: dict, images_dir: Path) -> TestInput:
    probs = np.asarray(doc["prediction"]["probs"], dtype=np.float64)
    output = OutputTuple.from_probs(probs)
    if output.predicted_class != int(doc["prediction"]["predicted_class"]):
        raise CorruptionError(
            f"input {doc['id']}: stored predicted class "
            f"{doc['prediction']['predicted_class']} does not match its probabilities"
        )
    return TestInput(
        id=int(doc["id"]),
        image=_load_png(images_dir / doc["image"]),
        ground_truth=int(doc["ground_truth"]),
        seed_root_id=int(doc["seed_root_id"]),
        lineage=[MutationRecord.from_dict(r) for r in doc["lineage"]],
        prediction=Prediction(prob_vector=probs, output=output),
        accepted_iteration=int(doc["accepted_iteration"]),
    )


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_hash(config_dict: dict) -> str:
    return hashlib.sha256(
        json.dumps(config_dict, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()


def save_suite(suite: TestSuite, out_dir, report: FuzzReport | None = None) -> None:
    """Persist a suite (and optionally its run report) to a directory.
    Files are written deterministically: identical runs produce
    byte-identical suite.jsonl, coverage.json, and images."""
    out = Path(out_dir)
    images_dir = out / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    names = []
    with open(out / "suite.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for t in suite.inputs:
            name = f"{t.id:06d}.png"
            _save_png(images_dir / name, t.image)
            names.append(name)
            fh.write(json.dumps(_input_record(t, name), sort_keys=True,
                                separators=(",", ":")) + "\n")
            fh.flush()

    if suite.coverage is not None:
        (out / "coverage.json").write_text(suite.coverage.to_json() + "\n", encoding="utf-8")

    if report is not None:
        (out / "report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        with open(out / "trace.csv", "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "cdc", "kcdc", "accepts"])
            for row in report.trace:
                writer.writerow([row.iteration, row.cdc, row.kcdc, row.accepts])

    digests = {}
    for rel in ["suite.jsonl", "coverage.json", "report.json", "trace.csv"]:
        p = out / rel
        if p.exists():
            digests[rel] = _sha256(p)
    for name in names:
        digests[f"images/{name}"] = _sha256(images_dir / name)

    manifest = {
        "version": MANIFEST_VERSION,
        "config_hash": config_hash(suite.meta.get("config", {})),
        "oracle": suite.meta.get("oracle", "unknown"),
        "counts": {"inputs": len(suite.inputs)},
        "meta": suite.meta,
        "digests": digests,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_manifest(suite_dir) -> dict:
    path = Path(suite_dir) / "manifest.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as err:
        raise ParseError(f"cannot read manifest: {err}", path=str(path)) from err
    except json.JSONDecodeError as err:
        raise ParseError(f"malformed manifest: {err}", path=str(path)) from err


def load_suite(suite_dir) -> TestSuite:
    """Load a stored suite, verifying every digest in its manifest."""
    root = Path(suite_dir)
    manifest = load_manifest(root)
    for rel, want in manifest.get("digests", {}).items():
        p = root / rel
        if not p.exists():
            raise CorruptionError(f"{p}: listed in manifest but missing")
        got = _sha256(p)
        if got != want:
            raise CorruptionError(f"{p}: digest mismatch (manifest {want[:12]}.., file {got[:12]}..)")

    inputs = []
    suite_path = root / "suite.jsonl"
    with open(suite_path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as err:
                raise ParseError(f"line {line_no}: {err}", path=str(suite_path)) from err
            inputs.append(_input_from_record(doc, root / "images"))

    coverage = None
    cov_path = root / "coverage.json"
    if cov_path.exists():
        coverage = CoverageSnapshot.from_json(cov_path.read_text(encoding="utf-8"))

    return TestSuite(inputs=inputs, coverage=coverage, meta=manifest.get("meta", {}))


def load_report(suite_dir) -> dict:
    path = Path(suite_dir) / "report.json"
    return json.loads(path.read_text(encoding="utf-8"))
