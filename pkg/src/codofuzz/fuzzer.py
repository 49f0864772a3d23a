"""The coverage-guided fuzzing loop.

Each iteration selects a seed (favoring less-fuzzed ones), mutates it
with a label-preserving transform, checks the metamorphic validity
constraint, and asks the oracle for a prediction only when the mutant is
valid. A valid mutant joins the test suite and the seed pool exactly
when it lands in a non-saturated cell of the coverage grid; everything
else is discarded. The loop stops when the iteration or wall-clock
budget trips, whichever comes first.

Initial seeds are verified as correctly classified at startup and their
outputs are inserted into the grid before fuzzing, so the suite never
spends capacity rediscovering seed behavior. Runs are deterministic
given (config, seeds, oracle): one master seed is split into documented
substreams (0: scheduling, 1: mutation, 2: acceptance coin for the
random baseline, 3: seed-set selection).
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .coverage import CoverageMatrix, CoverageSnapshot, feasible_cell_count
from .errors import ConfigurationError, TransportError
from .images import quantize
from .mutation import LineageState, MutationRecord, TransformRanges, is_valid, mutate
from .oracle import OracleClient, Prediction

log = logging.getLogger(__name__)


class StepOutcome(enum.Enum):
    ACCEPTED = "accepted"
    REJECTED_COVERAGE = "rejected_coverage"
    INVALID = "invalid"


@dataclass
class TestInput:
    """One input with full provenance: where it came from, how it was
    made, and what the model said about it."""

    __test__ = False  # despite the name, not a pytest class

    id: int
    image: np.ndarray
    ground_truth: int
    seed_root_id: int
    lineage: list[MutationRecord] = field(default_factory=list)
    prediction: Prediction | None = None
    accepted_iteration: int = -1

    def __eq__(self, other):
        if not isinstance(other, TestInput):
            return NotImplemented
        return (
            self.id == other.id
            and self.ground_truth == other.ground_truth
            and self.seed_root_id == other.seed_root_id
            and self.lineage == other.lineage
            and self.prediction == other.prediction
            and self.accepted_iteration == other.accepted_iteration
            and np.array_equal(self.image, other.image)
        )


@dataclass
class PoolEntry:
    input: TestInput
    state: LineageState
    times_selected: int = 0
    children_accepted: int = 0


class SeedPool:
    """The evolving seed set: initially correctly classified images, grown
    by every accepted mutant."""

    def __init__(self, entries: list[PoolEntry] | None = None):
        self.entries: list[PoolEntry] = entries or []
        self.skipped_classes: list[int] = []

    @classmethod
    def from_inputs(cls, inputs: list[TestInput]) -> "SeedPool":
        return cls(
            [
                PoolEntry(input=t, state=LineageState(reference_image=t.image))
                for t in inputs
            ]
        )

    def add(self, test_input: TestInput, state: LineageState) -> None:
        self.entries.append(PoolEntry(input=test_input, state=state))

    def __len__(self) -> int:
        return len(self.entries)


def select_seed(pool: SeedPool, rng: np.random.Generator) -> PoolEntry:
    """Sample an entry with probability proportional to
    1 / (1 + times_selected), so fresh seeds get fuzzed first, and count
    the selection."""
    if not pool.entries:
        raise ValueError("cannot select from an empty seed pool")
    weights = np.array([1.0 / (1.0 + e.times_selected) for e in pool.entries])
    idx = int(rng.choice(len(pool.entries), p=weights / weights.sum()))
    entry = pool.entries[idx]
    entry.times_selected += 1
    return entry


@dataclass
class FuzzConfig:
    """Run parameters. Defaults follow the usual desk setup: 10,000
    iterations or six hours, whichever comes first."""

    n_bins: int = 100
    cap: int = 10
    alpha: float = 0.2
    beta: float = 0.5
    max_iterations: int = 10_000
    max_wall_seconds: float = 21_600.0
    rng_seed: int = 0
    ranges: TransformRanges = field(default_factory=TransformRanges)
    exclude_infeasible: bool = True
    allow_hflip: bool = True
    acceptance: str = "cdc"
    random_accept_prob: float | None = None

    def __post_init__(self):
        if self.n_bins < 1 or self.cap < 1:
            raise ConfigurationError(f"n_bins and cap must be >= 1, got {self.n_bins}, {self.cap}")
        if self.max_iterations < 0:
            raise ConfigurationError(f"max_iterations must be >= 0, got {self.max_iterations}")
        if self.max_wall_seconds <= 0:
            raise ConfigurationError(f"max_wall_seconds must be positive, got {self.max_wall_seconds}")
        if not (0.0 < self.alpha <= 1.0 and 0.0 < self.beta <= 1.0):
            raise ConfigurationError(f"alpha and beta must be in (0, 1], got {self.alpha}, {self.beta}")
        if self.acceptance not in ("cdc", "random"):
            raise ConfigurationError(f"acceptance must be 'cdc' or 'random', got {self.acceptance!r}")
        if self.random_accept_prob is not None and not 0.0 <= self.random_accept_prob <= 1.0:
            raise ConfigurationError(f"random_accept_prob must be in [0, 1], got {self.random_accept_prob}")

    def to_dict(self) -> dict:
        return {
            "n_bins": self.n_bins,
            "cap": self.cap,
            "alpha": self.alpha,
            "beta": self.beta,
            "max_iterations": self.max_iterations,
            "max_wall_seconds": self.max_wall_seconds,
            "rng_seed": self.rng_seed,
            "ranges": self.ranges.to_dict(),
            "exclude_infeasible": self.exclude_infeasible,
            "allow_hflip": self.allow_hflip,
            "acceptance": self.acceptance,
            "random_accept_prob": self.random_accept_prob,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FuzzConfig":
        doc = dict(doc)
        if "ranges" in doc:
            doc["ranges"] = TransformRanges.from_dict(doc["ranges"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


def rng_streams(rng_seed: int) -> dict[str, np.random.Generator]:
    """Split the master seed into the engine's named substreams."""
    children = np.random.SeedSequence(rng_seed).spawn(4)
    names = ("scheduling", "mutation", "acceptance", "seed_selection")
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


@dataclass
class TraceRow:
    iteration: int
    cdc: float
    kcdc: float
    accepts: int


@dataclass
class FuzzReport:
    """Counters and the per-iteration coverage trace for one run."""

    iterations: int = 0
    accepted: int = 0
    rejected_coverage: int = 0
    invalid: int = 0
    suite_size: int = 0
    final_cdc: float = 0.0
    final_kcdc: float = 0.0
    trace: list[TraceRow] = field(default_factory=list)
    verify_seconds: float = 0.0
    fuzz_seconds: float = 0.0
    stopped_by: str = "iterations"
    status: str = "completed"
    dropped_seeds: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "accepted": self.accepted,
            "rejected_coverage": self.rejected_coverage,
            "invalid": self.invalid,
            "suite_size": self.suite_size,
            "final_cdc": self.final_cdc,
            "final_kcdc": self.final_kcdc,
            "verify_seconds": self.verify_seconds,
            "fuzz_seconds": self.fuzz_seconds,
            "stopped_by": self.stopped_by,
            "status": self.status,
            "dropped_seeds": self.dropped_seeds,
        }


@dataclass
class TestSuite:
    """Ordered accepted inputs plus the final coverage snapshot and run
    metadata (config, oracle descriptor, seed ids)."""

    __test__ = False  # despite the name, not a pytest class

    inputs: list[TestInput] = field(default_factory=list)
    coverage: CoverageSnapshot | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.inputs)


class FuzzAborted(TransportError):
    """A transport failure killed the run; carries the partial suite and
    report so the caller can persist a resumable snapshot."""

    def __init__(self, message: str, suite: TestSuite, report: FuzzReport, cause=None):
        super().__init__(message, attempts=getattr(cause, "attempts", 1), cause=cause)
        self.suite = suite
        self.report = report


@dataclass
class _FuzzState:
    config: FuzzConfig
    pool: SeedPool
    oracle: OracleClient
    cov: CoverageMatrix
    suite: TestSuite
    report: FuzzReport
    rngs: dict[str, np.random.Generator]
    next_id: int
    iteration: int = 0
    random_accept_prob: float = 0.0


def fuzz_step(state: _FuzzState) -> StepOutcome:
    """One iteration: select, mutate, validity-check, and (for valid
    mutants only) predict and decide acceptance."""
    cfg = state.config
    entry = select_seed(state.pool, state.rngs["scheduling"])
    raw, record = mutate(
        entry.input.image,
        entry.state,
        state.rngs["mutation"],
        ranges=cfg.ranges,
        allow_hflip=cfg.allow_hflip,
        parent_id=entry.input.id,
    )
    candidate = quantize(raw)

    if not record.is_affine and not is_valid(
        entry.state.reference_image, candidate, cfg.alpha, cfg.beta
    ):
        return StepOutcome.INVALID

    prediction = state.oracle.predict(candidate)

    if cfg.acceptance == "cdc":
        accepted = state.cov.update(prediction.output)
    else:
        accepted = float(state.rngs["acceptance"].random()) < state.random_accept_prob
        if accepted:
            state.cov.update(prediction.output)  # telemetry only in random mode

    if not accepted:
        return StepOutcome.REJECTED_COVERAGE

    test_input = TestInput(
        id=state.next_id,
        image=candidate,
        ground_truth=entry.input.ground_truth,
        seed_root_id=entry.input.seed_root_id,
        lineage=entry.input.lineage + [record],
        prediction=prediction,
        accepted_iteration=state.iteration,
    )
    state.next_id += 1
    state.suite.inputs.append(test_input)
    state.pool.add(test_input, entry.state.child(candidate, record))
    entry.children_accepted += 1
    return StepOutcome.ACCEPTED


def verify_seeds(pool: SeedPool, oracle: OracleClient) -> tuple[SeedPool, list[int]]:
    """Re-check that every seed is correctly classified; drop violators
    with a warning. Predictions are refreshed in place."""
    kept, dropped = [], []
    for entry in pool.entries:
        pred = oracle.predict(entry.input.image)
        entry.input.prediction = pred
        if pred.output.predicted_class == entry.input.ground_truth:
            kept.append(entry)
        else:
            dropped.append(entry.input.id)
            log.warning(
                "dropping seed %d: predicted %d but labeled %d",
                entry.input.id,
                pred.output.predicted_class,
                entry.input.ground_truth,
            )
    return SeedPool(kept), dropped


def run_fuzz(
    config: FuzzConfig,
    seeds: SeedPool,
    oracle: OracleClient,
) -> tuple[TestSuite, FuzzReport]:
    """Run the full loop. Raises FuzzAborted (with partial artifacts) on
    a transport failure, ConfigurationError when no verified seed
    remains."""
    report = FuzzReport()
    rngs = rng_streams(config.rng_seed)

    t0 = time.monotonic()
    try:
        seeds, report.dropped_seeds = verify_seeds(seeds, oracle)
    except TransportError as err:
        raise FuzzAborted(f"oracle failed during seed verification: {err}",
                          TestSuite(), report, cause=err) from err
    report.verify_seconds = time.monotonic() - t0
    if not seeds.entries:
        raise ConfigurationError("no correctly classified seeds remain after verification")

    cov = CoverageMatrix(oracle.n_classes, config.n_bins, config.cap)
    for entry in seeds.entries:
        cov.update(entry.input.prediction.output)

    suite = TestSuite(
        meta={
            "n_classes": oracle.n_classes,
            "input_shape": list(oracle.input_shape),
            "config": config.to_dict(),
            "oracle": oracle.describe(),
            "seed_ids": [e.input.id for e in seeds.entries],
            "seed_coverage_total": cov.total_assigned,
        }
    )

    state = _FuzzState(
        config=config,
        pool=seeds,
        oracle=oracle,
        cov=cov,
        suite=suite,
        report=report,
        rngs=rngs,
        next_id=max((e.input.id for e in seeds.entries), default=-1) + 1,
        random_accept_prob=_resolve_random_prob(config, oracle.n_classes),
    )

    fuzz_start = time.monotonic()
    outcome_counts = {o: 0 for o in StepOutcome}
    for i in range(config.max_iterations):
        # Wall clock is checked between iterations, never mid-oracle-call.
        if time.monotonic() - fuzz_start > config.max_wall_seconds:
            report.stopped_by = "wall_clock"
            break
        state.iteration = i
        try:
            outcome = fuzz_step(state)
        except TransportError as err:
            report.status = "aborted"
            _finish_report(report, state, outcome_counts, fuzz_start)
            suite.coverage = cov.snapshot(iteration=report.iterations,
                                          exclude_infeasible=config.exclude_infeasible)
            raise FuzzAborted(f"oracle transport failure at iteration {i}: {err}",
                              suite, report, cause=err) from err
        outcome_counts[outcome] += 1
        report.iterations += 1
        report.trace.append(
            TraceRow(
                iteration=i,
                cdc=cov.cdc(config.exclude_infeasible),
                kcdc=cov.kcdc(config.exclude_infeasible),
                accepts=outcome_counts[StepOutcome.ACCEPTED],
            )
        )

    _finish_report(report, state, outcome_counts, fuzz_start)
    suite.coverage = cov.snapshot(iteration=report.iterations,
                                  exclude_infeasible=config.exclude_infeasible)
    return suite, report


def _resolve_random_prob(config: FuzzConfig, n_classes: int) -> float:
    """Default acceptance rate for the random baseline: spread the grid's
    feasible capacity over the iteration budget so suite sizes stay
    comparable to a coverage-guided run."""
    if config.random_accept_prob is not None:
        return config.random_accept_prob
    if config.max_iterations == 0:
        return 0.0
    capacity = feasible_cell_count(n_classes, config.n_bins) * config.cap
    return min(1.0, capacity / config.max_iterations)


def _finish_report(report, state, outcome_counts, fuzz_start) -> None:
    report.fuzz_seconds = time.monotonic() - fuzz_start
    report.accepted = outcome_counts[StepOutcome.ACCEPTED]
    report.rejected_coverage = outcome_counts[StepOutcome.REJECTED_COVERAGE]
    report.invalid = outcome_counts[StepOutcome.INVALID]
    report.suite_size = len(state.suite.inputs)
    report.final_cdc = state.cov.cdc(state.config.exclude_infeasible)
    report.final_kcdc = state.cov.kcdc(state.config.exclude_infeasible)
