"""Tests for the coverage grid: bin mapping, cell updates, scores, and
the infeasible region."""

import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codofuzz.coverage import (
    CoverageMatrix,
    CoverageSnapshot,
    OutputTuple,
    bin_index,
    feasible_cell_count,
    infeasible_cells,
)
from codofuzz.errors import ConfigurationError, InputError


def reference_bin_index(confidence: float, n_bins: int) -> int:
    """Independent binner: exact rational arithmetic instead of float
    multiplication, then the same right-edge clamp."""
    c = Fraction(confidence) * n_bins
    return min(int(math.floor(c)), n_bins - 1)


def one_hot_output(n_classes: int, k: int) -> OutputTuple:
    probs = np.zeros(n_classes)
    probs[k] = 1.0
    return OutputTuple.from_probs(probs)


def peaked_output(n_classes: int, k: int, confidence: float) -> OutputTuple:
    """A valid probability vector whose argmax is k at the requested
    confidence, with the remainder spread uniformly."""
    rest = (1.0 - confidence) / (n_classes - 1)
    probs = np.full(n_classes, rest)
    probs[k] = confidence
    return OutputTuple.from_probs(probs)


class TestOutputTuple:
    def test_from_probs_takes_argmax(self):
        out = OutputTuple.from_probs([0.1, 0.7, 0.2])
        assert out.predicted_class == 1
        assert out.confidence == 0.7

    def test_argmax_tie_breaks_low(self):
        out = OutputTuple.from_probs([0.25, 0.25, 0.25, 0.25])
        assert out.predicted_class == 0

    def test_rejects_non_simplex(self):
        with pytest.raises(InputError):
            OutputTuple.from_probs([0.5, 0.6])
        with pytest.raises(InputError):
            OutputTuple.from_probs([0.9, -0.1, 0.2])

    def test_rejects_inconsistent_fields(self):
        with pytest.raises(InputError):
            OutputTuple(predicted_class=0, confidence=0.3, prob_vector=np.array([0.3, 0.7]))
        with pytest.raises(InputError):
            OutputTuple(predicted_class=1, confidence=0.5, prob_vector=np.array([0.3, 0.7]))


class TestBinIndex:
    def test_worked_example(self):
        assert bin_index(0.689, 10) == 6

    def test_right_edge_clamps(self):
        assert bin_index(1.0, 10) == 9
        assert bin_index(1.0, 1) == 0

    def test_left_edge(self):
        assert bin_index(0.0, 100) == 0

    def test_rejects_out_of_range(self):
        with pytest.raises(InputError):
            bin_index(1.1, 10)
        with pytest.raises(InputError):
            bin_index(-0.01, 10)
        with pytest.raises(ConfigurationError):
            bin_index(0.5, 0)

    def test_slack_within_tolerance_is_clamped(self):
        assert bin_index(1.0 + 5e-10, 10) == 9
        assert bin_index(-5e-10, 10) == 0

    def test_randomized_cross_check(self):
        rng = np.random.default_rng(2024)
        for _ in range(10_000):
            conf = float(rng.uniform(0.0, 1.0))
            m = int(rng.integers(1, 1000))
            assert bin_index(conf, m) == reference_bin_index(conf, m)

    @given(conf=st.floats(min_value=0.0, max_value=1.0), m=st.integers(1, 10_000))
    def test_always_in_range(self, conf, m):
        assert 0 <= bin_index(conf, m) < m

    @given(
        m=st.integers(1, 500),
        c1=st.floats(min_value=0.0, max_value=1.0),
        c2=st.floats(min_value=0.0, max_value=1.0),
    )
    def test_monotone_in_confidence(self, m, c1, c2):
        lo, hi = sorted((c1, c2))
        assert bin_index(lo, m) <= bin_index(hi, m)


class TestInfeasibleRegion:
    def test_ten_classes_hundred_bins(self):
        cells = infeasible_cells(10, 100)
        assert len(cells) == 100
        assert cells == {(r, c) for r in range(10) for c in range(10)}

    def test_square_grid(self):
        assert infeasible_cells(10, 10) == {(r, 0) for r in range(10)}

    def test_fewer_bins_than_classes(self):
        assert infeasible_cells(100, 10) == set()

    def test_feasible_count(self):
        assert feasible_cell_count(10, 100) == 900
        assert feasible_cell_count(100, 10) == 1000
        assert feasible_cell_count(3, 10) == 21

    def test_valid_output_never_lands_infeasible(self):
        rng = np.random.default_rng(11)
        n, m = 10, 100
        cut = m // n
        for _ in range(2000):
            out = OutputTuple.from_probs(rng.dirichlet(np.ones(n)))
            assert bin_index(out.confidence, m) >= cut

    def test_confidence_exactly_one_over_n_lands_first_feasible(self):
        # M/N integral: the boundary confidence maps to column M/N.
        out = peaked_output(10, 3, 0.1)
        assert out.confidence == pytest.approx(0.1)
        assert bin_index(out.confidence, 100) == 10


class TestCoverageMatrix:
    def test_new_matrix_is_zero(self):
        cov = CoverageMatrix(10, 100, 10)
        assert cov.counts.shape == (10, 100)
        assert cov.counts.sum() == 0
        assert cov.total_assigned == 0

    def test_alternate_table_shape(self):
        cov = CoverageMatrix(100, 10, 10)
        assert cov.counts.size == 1000

    def test_minimal_configuration(self):
        cov = CoverageMatrix(2, 1, 1)
        assert cov.counts.shape == (2, 1)

    def test_rejects_bad_dimensions(self):
        with pytest.raises(ConfigurationError):
            CoverageMatrix(1, 10, 10)
        with pytest.raises(ConfigurationError):
            CoverageMatrix(10, 0, 10)
        with pytest.raises(ConfigurationError):
            CoverageMatrix(10, 10, 0)

    def test_update_worked_example(self):
        cov = CoverageMatrix(10, 10, 10)
        out = peaked_output(10, 9, 0.689)
        assert cov.update(out) is True
        assert cov.counts[9, 6] == 1
        assert cov.total_assigned == 1

    def test_cap_saturation(self):
        cov = CoverageMatrix(10, 10, 10)
        out = peaked_output(10, 2, 0.55)
        for _ in range(10):
            assert cov.update(out) is True
        assert cov.update(out) is False
        assert cov.counts[2, 5] == 10
        assert cov.total_assigned == 10

    def test_same_bin_different_confidence(self):
        cov = CoverageMatrix(10, 10, 1)
        assert cov.update(peaked_output(10, 4, 0.61)) is True
        assert cov.update(peaked_output(10, 4, 0.69)) is False
        assert cov.counts[4, 6] == 1

    def test_rejects_class_out_of_range(self):
        cov = CoverageMatrix(3, 10, 1)
        out = peaked_output(10, 7, 0.62)
        with pytest.raises(InputError):
            cov.update(out)

    def test_cdc_empty(self):
        cov = CoverageMatrix(10, 100, 10)
        assert cov.cdc(exclude_infeasible=True) == 0.0
        assert cov.cdc(exclude_infeasible=False) == 0.0

    def test_cdc_fully_saturated_feasible(self):
        cov = CoverageMatrix(10, 100, 3)
        for r in range(10):
            for c in range(10, 100):
                cov._counts[r, c] = 1
        cov._total = int(cov._counts.sum())
        assert cov.cdc(exclude_infeasible=True) == 1.0
        assert cov.cdc(exclude_infeasible=False) == pytest.approx(0.9)

    def test_cdc_single_cell(self):
        cov = CoverageMatrix(2, 2, 5)
        cov.update(peaked_output(2, 0, 0.9))
        assert cov.cdc(exclude_infeasible=False) == 0.25

    def test_kcdc_empty_and_direct(self):
        cov = CoverageMatrix(2, 2, 3)
        assert cov.kcdc(exclude_infeasible=False) == 0.0
        out = peaked_output(2, 0, 0.9)
        for _ in range(3):
            cov.update(out)
        assert cov.kcdc(exclude_infeasible=False) == pytest.approx(3 / 12)

    def test_kcdc_saturated_feasible_is_one(self):
        cov = CoverageMatrix(5, 10, 2)
        cut = 10 // 5
        for r in range(5):
            for c in range(cut, 10):
                cov._counts[r, c] = 2
        cov._total = int(cov._counts.sum())
        assert cov.kcdc(exclude_infeasible=True) == 1.0

    def test_counts_view_is_read_only(self):
        cov = CoverageMatrix(2, 2, 1)
        with pytest.raises(ValueError):
            cov.counts[0, 0] = 5


class TestReplayEquivalence:
    """Replaying random outputs against a dict-based reference written
    from scratch must produce an identical grid."""

    @staticmethod
    def run_reference(outputs, n_classes, n_bins, cap):
        cells: dict[tuple[int, int], int] = {}
        trues = 0
        for out in outputs:
            r = out.predicted_class
            c = reference_bin_index(out.confidence, n_bins)
            if cells.get((r, c), 0) < cap:
                cells[(r, c)] = cells.get((r, c), 0) + 1
                trues += 1
        grid = np.zeros((n_classes, n_bins), dtype=np.int64)
        for (r, c), v in cells.items():
            grid[r, c] = v
        return grid, trues

    def test_replay_10k_random_outputs(self):
        rng = np.random.default_rng(99)
        n, m, k = 10, 100, 3
        outputs = [OutputTuple.from_probs(rng.dirichlet(np.ones(n) * 0.5)) for _ in range(10_000)]

        cov = CoverageMatrix(n, m, k)
        trues = 0
        last_cdc, last_kcdc = 0.0, 0.0
        for out in outputs:
            if cov.update(out):
                trues += 1
            cdc, kcdc = cov.cdc(), cov.kcdc()
            assert cdc >= last_cdc and kcdc >= last_kcdc
            last_cdc, last_kcdc = cdc, kcdc

        ref_grid, ref_trues = self.run_reference(outputs, n, m, k)
        assert np.array_equal(cov.counts, ref_grid)
        assert trues == ref_trues
        # score/update consistency: capacity consumed equals accepted count
        assert cov.kcdc(exclude_infeasible=False) * (n * m * k) == pytest.approx(trues)

    @given(st.lists(st.tuples(st.integers(0, 4), st.floats(0.21, 1.0)), max_size=60))
    @settings(max_examples=60, deadline=None)
    def test_cap_soundness_property(self, pairs):
        cov = CoverageMatrix(5, 8, 2)
        for k, conf in pairs:
            out = peaked_output(5, k, conf)
            cell = (k, bin_index(out.confidence, 8))
            before = cov.counts[cell]
            accepted = cov.update(out)
            assert accepted == (before < 2)
        assert cov.counts.max() <= 2
        assert cov.total_assigned == cov.counts.sum()


class TestSnapshot:
    def test_round_trip(self):
        cov = CoverageMatrix(3, 4, 2)
        cov.update(peaked_output(3, 1, 0.8))
        cov.update(peaked_output(3, 2, 0.5))
        snap = cov.snapshot(iteration=17)
        again = CoverageSnapshot.from_json(snap.to_json())
        assert again == snap

    def test_json_schema(self):
        snap = CoverageMatrix(2, 2, 1).snapshot()
        doc = json.loads(snap.to_json())
        assert set(doc) == {"n_classes", "n_bins", "cap", "counts", "cdc", "kcdc", "iteration"}
        assert doc["counts"] == [0, 0, 0, 0]

    def test_scores_consistent_when_recomputed(self):
        cov = CoverageMatrix(3, 10, 2)
        rng = np.random.default_rng(3)
        for _ in range(40):
            cov.update(OutputTuple.from_probs(rng.dirichlet(np.ones(3))))
        snap = cov.snapshot(exclude_infeasible=True)
        rebuilt = snap.to_matrix()
        assert rebuilt.cdc(True) == pytest.approx(snap.cdc)
        assert rebuilt.kcdc(True) == pytest.approx(snap.kcdc)
        assert rebuilt.total_assigned == cov.total_assigned
