"""Co-domain coverage over classifier outputs.

The co-domain of an N-class probabilistic classifier is the set of
(predicted class, confidence) tuples it can emit. This module discretizes
that space into an N x M grid: one row per class, M equal-width
confidence bins per row, and at most ``cap`` inputs counted per cell.
Coverage is scored two ways:

* ``cdc``  - fraction of cells occupied by at least one input.
* ``kcdc`` - fraction of total cell capacity consumed.

The winning softmax probability of an N-class simplex point is at least
1/N, so columns 0 .. floor(M/N) - 1 can never be reached by a valid
output. Those cells form the infeasible region and are excluded from
both score denominators by default.

Counts are exact integers; scores are computed in double precision at
query time, never incrementally, so they cannot drift.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, InputError

# Tolerances for validating externally supplied probability vectors.
PROB_SUM_TOL = 1e-5
PROB_SLACK = 1e-9


@dataclass(frozen=True)
class OutputTuple:
    """A classifier's output for one input: the argmax class, its
    probability, and the full probability vector it came from.

    Ties in the argmax break to the lowest class index so that binning is
    deterministic regardless of which oracle produced the vector.
    """

    predicted_class: int
    confidence: float
    prob_vector: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.prob_vector, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 2:
            raise InputError(f"prob_vector must be 1-D with >= 2 entries, got shape {probs.shape}")
        if not np.isfinite(probs).all():
            raise InputError("prob_vector contains non-finite entries")
        if probs.min() < -PROB_SLACK:
            raise InputError(f"prob_vector has negative entry {probs.min()}")
        total = probs.sum()
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise InputError(f"prob_vector sums to {total}, expected 1 within {PROB_SUM_TOL}")
        expect = int(np.argmax(probs))
        if self.predicted_class != expect:
            raise InputError(
                f"predicted_class {self.predicted_class} is not the tie-broken argmax {expect}"
            )
        if abs(self.confidence - probs[expect]) > PROB_SLACK:
            raise InputError("confidence does not equal max(prob_vector)")
        probs.flags.writeable = False
        object.__setattr__(self, "prob_vector", probs)

    @classmethod
    def from_probs(cls, probs: Iterable[float]) -> "OutputTuple":
        arr = np.asarray(probs, dtype=np.float64)
        k = int(np.argmax(arr))
        return cls(predicted_class=k, confidence=float(arr[k]), prob_vector=arr)

    @property
    def n_classes(self) -> int:
        return int(self.prob_vector.size)

    def __eq__(self, other):
        if not isinstance(other, OutputTuple):
            return NotImplemented
        return (
            self.predicted_class == other.predicted_class
            and self.confidence == other.confidence
            and np.array_equal(self.prob_vector, other.prob_vector)
        )


def bin_index(confidence: float, n_bins: int) -> int:
    """Map a confidence in [0, 1] to one of ``n_bins`` equal-width bins.

    The bin is floor(confidence * n_bins); a confidence of exactly 1.0
    clamps to the last bin so the grid stays closed on the right.
    """
    if n_bins < 1:
        raise ConfigurationError(f"n_bins must be >= 1, got {n_bins}")
    c = float(confidence)
    if c < -PROB_SLACK or c > 1.0 + PROB_SLACK:
        raise InputError(f"confidence {c} outside [0, 1]")
    return min(max(int(c * n_bins), 0), n_bins - 1)


def infeasible_cells(n_classes: int, n_bins: int) -> set[tuple[int, int]]:
    """Cells no valid argmax output can occupy: per row, the columns whose
    entire confidence range lies below 1/n_classes. Empty when M < N."""
    _check_dims(n_classes, n_bins, 1)
    cut = n_bins // n_classes
    return {(r, c) for r in range(n_classes) for c in range(cut)}


def feasible_cell_count(n_classes: int, n_bins: int) -> int:
    return n_classes * (n_bins - n_bins // n_classes)


def _check_dims(n_classes: int, n_bins: int, cap: int) -> None:
    if n_classes < 2:
        raise ConfigurationError(f"n_classes must be >= 2, got {n_classes}")
    if n_bins < 1:
        raise ConfigurationError(f"n_bins must be >= 1, got {n_bins}")
    if cap < 1:
        raise ConfigurationError(f"cap must be >= 1, got {cap}")


class CoverageMatrix:
    """The N x M grid of per-cell counts, bounded by ``cap`` per cell.

    Cells fill first come, first counted; once a cell holds ``cap``
    inputs further arrivals are rejected and leave the grid unchanged.
    Updates are single-writer; score queries from other threads are safe
    only between updates.
    """

    def __init__(self, n_classes: int, n_bins: int, cap: int):
        _check_dims(n_classes, n_bins, cap)
        self.n_classes = int(n_classes)
        self.n_bins = int(n_bins)
        self.cap = int(cap)
        self._counts = np.zeros((self.n_classes, self.n_bins), dtype=np.int64)
        self._total = 0

    @property
    def counts(self) -> np.ndarray:
        view = self._counts.view()
        view.flags.writeable = False
        return view

    @property
    def total_assigned(self) -> int:
        return self._total

    def update(self, out: OutputTuple) -> bool:
        """Count ``out`` in its cell. True iff the cell had room, i.e. the
        input increased coverage."""
        r = out.predicted_class
        if not 0 <= r < self.n_classes:
            raise InputError(f"class index {r} out of range for {self.n_classes} classes")
        c = bin_index(out.confidence, self.n_bins)
        if self._counts[r, c] < self.cap:
            self._counts[r, c] += 1
            self._total += 1
            return True
        return False

    def _denominator_cells(self, exclude_infeasible: bool) -> int:
        if exclude_infeasible:
            return feasible_cell_count(self.n_classes, self.n_bins)
        return self.n_classes * self.n_bins

    def cdc(self, exclude_infeasible: bool = True) -> float:
        """Fraction of cells occupied by at least one input."""
        occupied = int(np.count_nonzero(self._counts))
        return occupied / self._denominator_cells(exclude_infeasible)

    def kcdc(self, exclude_infeasible: bool = True) -> float:
        """Fraction of total cell capacity consumed."""
        return self._total / (self._denominator_cells(exclude_infeasible) * self.cap)

    def snapshot(self, iteration: int = 0, exclude_infeasible: bool = True) -> "CoverageSnapshot":
        return CoverageSnapshot(
            n_classes=self.n_classes,
            n_bins=self.n_bins,
            cap=self.cap,
            counts=[int(v) for v in self._counts.ravel()],
            cdc=self.cdc(exclude_infeasible),
            kcdc=self.kcdc(exclude_infeasible),
            iteration=int(iteration),
        )

    def __repr__(self):
        return (
            f"CoverageMatrix(n_classes={self.n_classes}, n_bins={self.n_bins}, "
            f"cap={self.cap}, total_assigned={self._total})"
        )


@dataclass
class CoverageSnapshot:
    """A frozen copy of the grid plus its scores, for reporting and
    resumability. ``counts`` is the row-major flattening of the grid."""

    n_classes: int
    n_bins: int
    cap: int
    counts: list[int] = field(default_factory=list)
    cdc: float = 0.0
    kcdc: float = 0.0
    iteration: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_classes": self.n_classes,
                "n_bins": self.n_bins,
                "cap": self.cap,
                "counts": self.counts,
                "cdc": self.cdc,
                "kcdc": self.kcdc,
                "iteration": self.iteration,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "CoverageSnapshot":
        doc = json.loads(text)
        return cls(
            n_classes=int(doc["n_classes"]),
            n_bins=int(doc["n_bins"]),
            cap=int(doc["cap"]),
            counts=[int(v) for v in doc["counts"]],
            cdc=float(doc["cdc"]),
            kcdc=float(doc["kcdc"]),
            iteration=int(doc["iteration"]),
        )

    def to_matrix(self) -> CoverageMatrix:
        """Rebuild a live matrix from the stored counts."""
        if len(self.counts) != self.n_classes * self.n_bins:
            raise InputError(
                f"counts length {len(self.counts)} does not match "
                f"{self.n_classes}x{self.n_bins} grid"
            )
        mat = CoverageMatrix(self.n_classes, self.n_bins, self.cap)
        grid = np.asarray(self.counts, dtype=np.int64).reshape(self.n_classes, self.n_bins)
        if grid.min() < 0 or grid.max() > self.cap:
            raise InputError("stored counts violate the per-cell capacity")
        mat._counts = grid
        mat._total = int(grid.sum())
        return mat
