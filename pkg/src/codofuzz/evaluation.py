"""Test-suite quality metrics and the rotation-correlation harness.

A suite is judged on four axes: how many inputs the model misclassifies,
how uncertain the model is on average (mean predictive entropy, natural
log), how impartially the predicted classes are spread (normalized
entropy of the predicted-class histogram), and how many distinct
(ground truth, predicted) error pairs it reveals out of the N(N-1)
possible.

The rotation harness checks that coverage correlates with error content:
rotating a labeled test set by progressively larger maximum angles
should cost accuracy while the grid-selected subset catches more errors
and covers more cells.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .coverage import CoverageMatrix
from .errors import DataError, InputError
from .fuzzer import TestSuite
from .images import quantize
from .mutation import TransformKind, apply_transform
from .oracle import OracleClient


def _require_predictions(suite: TestSuite):
    for t in suite.inputs:
        if t.prediction is None:
            raise DataError(f"input {t.id} has no prediction")
    return suite.inputs


def shannon_entropy(probs) -> float:
    """Natural-log Shannon entropy with the 0 * log 0 = 0 convention."""
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def misclassified_count(suite: TestSuite) -> int:
    """Number of fault-revealing inputs: predicted class differs from the
    ground truth."""
    return sum(
        1
        for t in _require_predictions(suite)
        if t.prediction.output.predicted_class != t.ground_truth
    )


def avg_entropy(suite: TestSuite) -> float:
    """Mean predictive entropy over the suite, in nats."""
    inputs = _require_predictions(suite)
    if not inputs:
        raise DataError("average entropy is undefined for an empty suite")
    return float(np.mean([shannon_entropy(t.prediction.prob_vector) for t in inputs]))


def predicted_class_histogram(suite: TestSuite, n_classes: int) -> np.ndarray:
    inputs = _require_predictions(suite)
    hist = np.zeros(n_classes, dtype=np.int64)
    for t in inputs:
        k = t.prediction.output.predicted_class
        if not 0 <= k < n_classes:
            raise InputError(f"predicted class {k} out of range for {n_classes} classes")
        hist[k] += 1
    return hist


def output_impartiality(suite: TestSuite, n_classes: int) -> float:
    """Entropy of the predicted-class histogram normalized by log N:
    1.0 for perfectly class-balanced predictions, 0.0 for a single class."""
    hist = predicted_class_histogram(suite, n_classes)
    total = int(hist.sum())
    if total == 0:
        raise DataError("output impartiality is undefined for an empty suite")
    if n_classes < 2:
        raise InputError("output impartiality needs at least 2 classes")
    return shannon_entropy(hist / total) / math.log(n_classes)


def distinct_error_types(suite: TestSuite) -> tuple[int, set[tuple[int, int]]]:
    """Distinct (ground truth, predicted) pairs with the two unequal."""
    pairs = {
        (t.ground_truth, t.prediction.output.predicted_class)
        for t in _require_predictions(suite)
        if t.prediction.output.predicted_class != t.ground_truth
    }
    return len(pairs), pairs


def distinct_classes(suite: TestSuite) -> int:
    inputs = _require_predictions(suite)
    if not inputs:
        raise DataError("distinct classes is undefined for an empty suite")
    return len({t.prediction.output.predicted_class for t in inputs})


@dataclass
class SuiteMetrics:
    n_inputs: int
    n_misclassified: int
    avg_entropy: float
    output_impartiality: float
    distinct_classes: int
    distinct_error_types: int

    def to_dict(self) -> dict:
        return {
            "n_inputs": self.n_inputs,
            "n_misclassified": self.n_misclassified,
            "avg_entropy": self.avg_entropy,
            "output_impartiality": self.output_impartiality,
            "distinct_classes": self.distinct_classes,
            "distinct_error_types": self.distinct_error_types,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SuiteMetrics":
        return cls(
            n_inputs=int(doc["n_inputs"]),
            n_misclassified=int(doc["n_misclassified"]),
            avg_entropy=float(doc["avg_entropy"]),
            output_impartiality=float(doc["output_impartiality"]),
            distinct_classes=int(doc["distinct_classes"]),
            distinct_error_types=int(doc["distinct_error_types"]),
        )


def compute_metrics(suite: TestSuite, n_classes: int | None = None) -> SuiteMetrics:
    if n_classes is None:
        n_classes = _suite_classes(suite)
    n_err, _ = distinct_error_types(suite)
    return SuiteMetrics(
        n_inputs=len(suite.inputs),
        n_misclassified=misclassified_count(suite),
        avg_entropy=avg_entropy(suite),
        output_impartiality=output_impartiality(suite, n_classes),
        distinct_classes=distinct_classes(suite),
        distinct_error_types=n_err,
    )


def _suite_classes(suite: TestSuite) -> int:
    if suite.coverage is not None:
        return suite.coverage.n_classes
    n = suite.meta.get("n_classes")
    if n is None:
        raise DataError("suite does not declare its class count")
    return int(n)


# ---------------------------------------------------------------------------
# rotation-correlation harness
# ---------------------------------------------------------------------------


@dataclass
class RotationRow:
    """One row per maximum rotation angle: what the grid selected out of
    the rotated set and how the full set scored."""

    max_degrees: float
    n_total: int
    n_selected: int
    n_selected_errors: int
    cdc_achieved: float
    accuracy: float

    def to_dict(self) -> dict:
        return {
            "max_degrees": self.max_degrees,
            "n_total": self.n_total,
            "n_selected": self.n_selected,
            "n_selected_errors": self.n_selected_errors,
            "cdc_achieved": self.cdc_achieved,
            "accuracy": self.accuracy,
        }


def rotation_correlation(
    dataset: Sequence[tuple[np.ndarray, int]],
    oracle: OracleClient,
    degrees: Sequence[float],
    n_bins: int,
    cap: int,
    rng_seed: int = 0,
    exclude_infeasible: bool = True,
) -> list[RotationRow]:
    """For each maximum angle u, rotate every image by an angle uniform in
    [-u, +u], stream the rotated set through a fresh coverage grid, and
    record the selected subset's error count alongside the full set's
    accuracy.

    One unit draw per image is scaled by each u (so larger budgets rotate
    the same image further) and the streaming order is a single rng
    shuffle, fixed across all u values.
    """
    data = [(quantize(img), int(label)) for img, label in dataset]
    if not data:
        raise DataError("rotation correlation needs a nonempty labeled dataset")
    degs = [float(u) for u in degrees]
    if degs != sorted(degs) or degs[0] != 0.0:
        raise InputError(f"degrees must be ascending and start at 0, got {degs}")

    rng = np.random.default_rng(rng_seed)
    unit_draws = rng.uniform(-1.0, 1.0, size=len(data))
    order = rng.permutation(len(data))

    rows = []
    for u in degs:
        cov = CoverageMatrix(oracle.n_classes, n_bins, cap)
        n_correct = 0
        n_selected = 0
        n_selected_errors = 0
        for idx in order:
            image, label = data[idx]
            if u > 0.0:
                image = quantize(
                    apply_transform(
                        image,
                        TransformKind.ROTATION,
                        {"degrees": float(u * unit_draws[idx])},
                    )
                )
            pred = oracle.predict(image)
            correct = pred.output.predicted_class == label
            n_correct += int(correct)
            if cov.update(pred.output):
                n_selected += 1
                n_selected_errors += int(not correct)
        rows.append(
            RotationRow(
                max_degrees=u,
                n_total=len(data),
                n_selected=n_selected,
                n_selected_errors=n_selected_errors,
                cdc_achieved=cov.cdc(exclude_infeasible),
                accuracy=n_correct / len(data),
            )
        )
    return rows


def write_rotation_rows(rows: Sequence[RotationRow], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "rotation.csv", "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["max_degrees", "n_total", "n_selected", "n_selected_errors", "cdc_achieved", "accuracy"]
        )
        for row in rows:
            writer.writerow(
                [row.max_degrees, row.n_total, row.n_selected,
                 row.n_selected_errors, row.cdc_achieved, row.accuracy]
            )
    (out / "rotation.json").write_text(
        json.dumps([r.to_dict() for r in rows], indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

CONFIDENCE_HIST_BINS = 20


def _subset_outputs(suite: TestSuite):
    correct, wrong = [], []
    for t in _require_predictions(suite):
        out = t.prediction.output
        (correct if out.predicted_class == t.ground_truth else wrong).append(out)
    return {"correct": correct, "misclassified": wrong}


def _write_histograms(label: str, suite: TestSuite, n_classes: int, out: Path) -> None:
    snap = suite.coverage
    for subset, outputs in _subset_outputs(suite).items():
        conf = np.array([o.confidence for o in outputs], dtype=np.float64)
        counts, edges = np.histogram(conf, bins=CONFIDENCE_HIST_BINS, range=(0.0, 1.0))
        with open(out / f"{label}_confidence_{subset}.csv", "w", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_lo", "bin_hi", "count"])
            for i, n in enumerate(counts):
                writer.writerow([edges[i], edges[i + 1], int(n)])

        hist = np.zeros(n_classes, dtype=np.int64)
        for o in outputs:
            hist[o.predicted_class] += 1
        with open(out / f"{label}_class_{subset}.csv", "w", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["class", "count"])
            for k, n in enumerate(hist):
                writer.writerow([k, int(n)])

        if snap is not None:
            grid = CoverageMatrix(snap.n_classes, snap.n_bins, max(snap.cap, len(outputs) or 1))
            for o in outputs:
                grid.update(o)
            with open(out / f"{label}_grid_{subset}.csv", "w", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                for row in grid.counts:
                    writer.writerow([int(v) for v in row])


def emit_report(
    suites: TestSuite | Mapping[str, TestSuite],
    out_dir,
) -> dict[str, SuiteMetrics]:
    """Write metrics.json, metrics.csv, and per-suite histogram CSVs for
    the correctly classified and misclassified subsets. Returns the
    computed metrics keyed by suite label."""
    if isinstance(suites, TestSuite):
        suites = {"suite": suites}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    metrics: dict[str, SuiteMetrics] = {}
    for label, suite in suites.items():
        n_classes = _suite_classes(suite)
        metrics[label] = compute_metrics(suite, n_classes)
        _write_histograms(label, suite, n_classes, out)

    (out / "metrics.json").write_text(
        json.dumps({k: m.to_dict() for k, m in metrics.items()}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    fields = ["label", "n_inputs", "n_misclassified", "avg_entropy",
              "output_impartiality", "distinct_classes", "distinct_error_types"]
    with open(out / "metrics.csv", "w", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for label, m in metrics.items():
            doc = m.to_dict()
            writer.writerow([label] + [doc[f] for f in fields[1:]])
    return metrics
