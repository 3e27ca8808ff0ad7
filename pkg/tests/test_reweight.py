import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairaudit.errors import DataError
from fairaudit.records import Label
from fairaudit.reweight import (
    TprTracker,
    WeightVector,
    dynamic_weights,
    frequency_weights,
    load_weights_jsonl,
    tracker_update,
    weighted_loss,
)

from conftest import make_record


def cohort_from_counts(counts):
    """counts: {(gender, label): n} -> records list."""
    records = []
    i = 0
    for (gender, label), n in counts.items():
        for _ in range(n):
            records.append(make_record(f"s{i}", label=label, gender=gender))
            i += 1
    return records


class TestFrequencyWeights:
    def test_hand_computed_cells(self):
        counts = {("female", "control"): 6, ("female", "mci"): 2,
                  ("male", "control"): 1, ("male", "mci"): 1}
        records = cohort_from_counts(counts)
        wv = frequency_weights(records, "gender")
        by_cell = {}
        for r in records:
            by_cell[(r.gender.value, r.label.value)] = wv.weights[r.subject_id]
        assert by_cell[("female", "control")] == pytest.approx(14 / 15)
        assert by_cell[("female", "mci")] == pytest.approx(1.2)
        assert by_cell[("male", "control")] == pytest.approx(1.4)
        assert by_cell[("male", "mci")] == pytest.approx(0.6)
        assert wv.mean() == pytest.approx(1.0, abs=1e-12)

    def test_independent_table_gives_unit_weights(self):
        counts = {("female", "control"): 6, ("female", "mci"): 3,
                  ("male", "control"): 4, ("male", "mci"): 2}
        wv = frequency_weights(cohort_from_counts(counts), "gender")
        assert all(w == pytest.approx(1.0) for w in wv.values())

    def test_scale_invariance(self):
        counts = {("female", "control"): 3, ("female", "mci"): 1,
                  ("male", "control"): 2, ("male", "mci"): 4}
        doubled = {k: 2 * v for k, v in counts.items()}
        w1 = sorted(set(round(w, 12) for w in
                        frequency_weights(cohort_from_counts(counts), "gender").values()))
        w2 = sorted(set(round(w, 12) for w in
                        frequency_weights(cohort_from_counts(doubled), "gender").values()))
        assert w1 == w2

    @given(st.lists(st.integers(min_value=1, max_value=30), min_size=6, max_size=6))
    @settings(max_examples=40, deadline=None)
    def test_reweighted_joint_factorizes(self, cells):
        keys = [(g, l) for g in ("female", "male") for l in ("control", "mci", "ad")]
        counts = dict(zip(keys, cells))
        records = cohort_from_counts(counts)
        wv = frequency_weights(records, "gender")
        n = len(records)
        total = sum(wv.values())
        assert total == pytest.approx(n, abs=1e-9)
        marg_a = {g: sum(v for (gg, _), v in counts.items() if gg == g) / n
                  for g in ("female", "male")}
        marg_y = {l: sum(v for (_, ll), v in counts.items() if ll == l) / n
                  for l in ("control", "mci", "ad")}
        for (g, l), cnt in counts.items():
            cell_weight = sum(wv.weights[r.subject_id] for r in records
                              if r.gender.value == g and r.label.value == l)
            assert cell_weight / total == pytest.approx(marg_a[g] * marg_y[l], abs=1e-9)

    def test_jsonl_round_trip(self, tmp_path):
        counts = {("female", "control"): 3, ("male", "mci"): 2,
                  ("female", "mci"): 1, ("male", "control"): 1}
        wv = frequency_weights(cohort_from_counts(counts), "gender")
        path = tmp_path / "w.jsonl"
        wv.write_jsonl(path)
        loaded = load_weights_jsonl(path, scheme="frequency", attribute="gender")
        assert loaded.weights == wv.weights


class TestTprTracker:
    def test_count_arithmetic(self):
        tracker = TprTracker(attribute="age_group")
        tracker_update(tracker, [("a80_plus", Label.MCI, True)] * 3
                       + [("a80_plus", Label.MCI, False)])
        assert tracker.tpr("a80_plus", Label.MCI) == pytest.approx(0.75)

    def test_empty_batch_identity(self):
        tracker = TprTracker(attribute="age_group")
        tracker_update(tracker, [("a46_65", Label.AD, True)])
        before = (dict(tracker.correct), dict(tracker.total))
        tracker_update(tracker, [])
        assert (dict(tracker.correct), dict(tracker.total)) == before

    def test_sequential_equals_concatenated(self):
        obs = [("a46_65", Label.CONTROL, True), ("a66_80", Label.MCI, False),
               ("a46_65", Label.CONTROL, False), ("a66_80", Label.MCI, True)]
        t1 = TprTracker(attribute="age_group")
        tracker_update(t1, obs[:2])
        tracker_update(t1, obs[2:])
        t2 = TprTracker(attribute="age_group")
        tracker_update(t2, obs)
        assert t1.correct == t2.correct and t1.total == t2.total

    def test_order_insensitive(self):
        obs = [("a46_65", Label.CONTROL, True), ("a66_80", Label.MCI, False),
               ("a80_plus", Label.AD, True)]
        t1 = TprTracker(attribute="age_group")
        tracker_update(t1, obs)
        t2 = TprTracker(attribute="age_group")
        tracker_update(t2, list(reversed(obs)))
        assert t1.correct == t2.correct and t1.total == t2.total

    def test_unobserved_cell_undefined(self):
        tracker = TprTracker(attribute="age_group")
        assert tracker.tpr("a46_65", Label.AD) is None


class TestDynamicWeights:
    def make_tracker(self, tpr_by_cell, epsilon=0.05, update_period=1):
        tracker = TprTracker(attribute="age_group", epsilon=epsilon,
                             update_period=update_period)
        batch = []
        for (sub, cls), tpr in tpr_by_cell.items():
            batch += [(sub, cls, True)] * int(round(tpr * 20))
            batch += [(sub, cls, False)] * (20 - int(round(tpr * 20)))
        tracker_update(tracker, batch)
        return tracker

    def test_inverse_tpr(self):
        tracker = self.make_tracker({("a46_65", Label.CONTROL): 0.5})
        assert tracker.cell_weight("a46_65", Label.CONTROL) == pytest.approx(2.0)

    def test_perfect_cell_weighs_one(self):
        tracker = self.make_tracker({("a46_65", Label.CONTROL): 1.0})
        assert tracker.cell_weight("a46_65", Label.CONTROL) == pytest.approx(1.0)

    def test_zero_tpr_clamped_by_epsilon(self):
        tracker = self.make_tracker({("a80_plus", Label.MCI): 0.0})
        assert tracker.cell_weight("a80_plus", Label.MCI) == pytest.approx(20.0)

    def test_unseen_cell_neutral(self):
        tracker = self.make_tracker({("a46_65", Label.CONTROL): 0.5})
        records = [make_record("x", label="ad", age=85)]
        wv = dynamic_weights(tracker, records)
        assert wv.weights["x"] == 1.0
        assert wv.scheme == "dynamic_tpr"

    def test_weights_bounded(self):
        tracker = self.make_tracker({("a46_65", Label.CONTROL): 0.3,
                                     ("a66_80", Label.MCI): 0.9})
        for w in tracker.cell_weights().values():
            assert 1.0 <= w <= 1.0 / tracker.epsilon

    def test_refresh_period_holds_weights_stable(self):
        tracker = TprTracker(attribute="age_group", update_period=3)
        tracker_update(tracker, [("a46_65", Label.CONTROL, False)] * 2
                       + [("a46_65", Label.CONTROL, True)] * 2)
        first = tracker.cell_weight("a46_65", Label.CONTROL)
        # two more batches: still inside the refresh window
        tracker_update(tracker, [("a46_65", Label.CONTROL, True)] * 8)
        assert tracker.cell_weight("a46_65", Label.CONTROL) == first
        tracker_update(tracker, [("a46_65", Label.CONTROL, True)] * 8)
        tracker_update(tracker, [("a46_65", Label.CONTROL, True)] * 8)
        assert tracker.cell_weight("a46_65", Label.CONTROL) != first

    def test_empty_tracker_rejected(self):
        tracker = TprTracker(attribute="age_group")
        with pytest.raises(DataError):
            dynamic_weights(tracker, [make_record("x")])


class TestWeightedLoss:
    def test_frequency_scheme_plain_sum(self):
        wv = WeightVector(weights={"a": 2.0, "b": 1.0}, scheme="frequency",
                          attribute="gender")
        assert weighted_loss([1.0, 3.0], wv) == pytest.approx(5.0)

    def test_dynamic_scheme_mean(self):
        wv = WeightVector(weights={"a": 1.0, "b": 1.0, "c": 1.0},
                          scheme="dynamic_tpr", attribute="gender")
        assert weighted_loss([1.0, 2.0, 3.0], wv) == pytest.approx(2.0)

    def test_zero_losses(self):
        wv = WeightVector(weights={"a": 5.0, "b": 0.25}, scheme="frequency",
                          attribute="gender")
        assert weighted_loss([0.0, 0.0], wv) == 0.0

    def test_length_mismatch_rejected(self):
        wv = WeightVector(weights={"a": 1.0}, scheme="frequency", attribute="gender")
        with pytest.raises(DataError):
            weighted_loss([1.0, 2.0], wv)

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(DataError):
            WeightVector(weights={"a": 0.0}, scheme="frequency", attribute="gender")
