import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairaudit.errors import DataError, SchemaError
from fairaudit.pairing import (
    FEATURE_NAMES,
    MatchingPlan,
    brute_force_matching,
    conversion_plan,
    cosine_distance,
    distance_matrix,
    load_features,
    max_weight_matching,
    normalize_features,
    write_plan,
)


def random_symmetric(rng, n):
    d = np.round(rng.uniform(0.0, 2.0, size=(n, n)), 6)
    d = (d + d.T) / 2.0
    np.fill_diagonal(d, 0.0)
    return d


class TestNormalizeFeatures:
    def test_two_point_zscore(self):
        raw = [("a", np.array([0.0, 1.0, 5.0])), ("b", np.array([2.0, 3.0, 7.0]))]
        normed = normalize_features(raw)
        np.testing.assert_allclose(normed[0].x, [-1.0, -1.0, -1.0])
        np.testing.assert_allclose(normed[1].x, [1.0, 1.0, 1.0])

    def test_standardized_input_is_fixed_point(self, rng):
        matrix = rng.normal(size=(20, 3))
        matrix = (matrix - matrix.mean(axis=0)) / matrix.std(axis=0)
        raw = [(f"s{i}", matrix[i]) for i in range(20)]
        normed = normalize_features(raw)
        np.testing.assert_allclose(np.array([f.x for f in normed]), matrix, atol=1e-9)

    def test_constant_feature_names_column(self):
        raw = [("a", np.array([1.0, 2.0, 3.0])), ("b", np.array([1.0, 4.0, 5.0]))]
        with pytest.raises(DataError, match=FEATURE_NAMES[0]):
            normalize_features(raw)

    def test_minmax_option(self):
        raw = [("a", np.array([0.0, 0.0, 0.0])), ("b", np.array([4.0, 2.0, 1.0])),
               ("c", np.array([2.0, 1.0, 0.5]))]
        normed = normalize_features(raw, method="minmax")
        values = np.array([f.x for f in normed])
        assert values.min() == 0.0 and values.max() == 1.0

    def test_feature_csv_loading(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text(
            "subject_id,voiced_segments_per_sec,shimmer_local_db,mfcc1_stddev_norm\n"
            "a,2.5,0.8,1.1\nb,3.0,0.6,0.9\n")
        raw = load_features(path)
        assert [sid for sid, _ in raw] == ["a", "b"]

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("subject_id,voiced_segments_per_sec\na,2.5\n")
        with pytest.raises(SchemaError):
            load_features(path)


class TestCosineDistance:
    def test_identical_direction_zero(self):
        assert cosine_distance(np.array([1.0, 2.0, 3.0]),
                               np.array([2.0, 4.0, 6.0])) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_unit_vectors(self):
        assert cosine_distance(np.array([1.0, 0.0, 0.0]),
                               np.array([0.0, 1.0, 0.0])) == pytest.approx(1.0)

    def test_hand_evaluated_pair(self):
        d = cosine_distance(np.array([1.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        assert d == pytest.approx(1.0 - 1.0 / math.sqrt(2), abs=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(DataError):
            cosine_distance(np.zeros(3), np.array([1.0, 0.0, 0.0]))

    @given(st.integers(min_value=0, max_value=10 ** 6),
           st.floats(min_value=0.1, max_value=50.0))
    @settings(max_examples=30, deadline=None)
    def test_symmetric_and_scale_invariant(self, seed, scale):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=3), rng.normal(size=3)
        if np.linalg.norm(x) == 0 or np.linalg.norm(y) == 0:
            return
        assert cosine_distance(x, y) == pytest.approx(cosine_distance(y, x), abs=1e-12)
        assert cosine_distance(scale * x, y) == pytest.approx(cosine_distance(x, y), abs=1e-9)
        assert 0.0 <= cosine_distance(x, y) <= 2.0


class TestMatching:
    def test_two_speakers_single_pair(self):
        d = np.array([[0.0, 0.7], [0.7, 0.0]])
        plan = max_weight_matching(d, ids=["p", "q"])
        assert plan.pairs == [("p", "q", 0.7)]
        assert plan.unmatched == []
        assert plan.total_weight == pytest.approx(0.7)

    def test_four_speaker_enumerated_optimum(self):
        weights = {(0, 1): 0.9, (2, 3): 0.8, (0, 2): 0.5, (1, 3): 0.5,
                   (0, 3): 0.1, (1, 2): 0.1}
        d = np.zeros((4, 4))
        for (i, j), w in weights.items():
            d[i, j] = d[j, i] = w
        plan = max_weight_matching(d, ids=["1", "2", "3", "4"])
        assert [(p, q) for p, q, _ in plan.pairs] == [("1", "2"), ("3", "4")]
        assert plan.total_weight == pytest.approx(1.7)

    def test_odd_cohort_reports_unmatched(self, rng):
        d = random_symmetric(rng, 5)
        plan = max_weight_matching(d)
        assert len(plan.pairs) == 2
        assert len(plan.unmatched) == 1

    def test_asymmetric_matrix_rejected(self):
        d = np.array([[0.0, 1.0], [0.5, 0.0]])
        with pytest.raises(DataError, match="symmetric"):
            max_weight_matching(d)

    def test_negative_distance_rejected(self):
        d = np.array([[0.0, -0.1], [-0.1, 0.0]])
        with pytest.raises(DataError):
            max_weight_matching(d)

    def test_agrees_with_oracle_on_random_instances(self, rng):
        for n in (2, 4, 6, 8):
            for _ in range(5):
                d = random_symmetric(rng, n)
                exact = max_weight_matching(d)
                oracle = brute_force_matching(d)
                assert exact.total_weight == oracle.total_weight
                assert exact.pairs == oracle.pairs

    def test_scaling_preserves_selected_pairs(self, rng):
        d = random_symmetric(rng, 6)
        base = max_weight_matching(d)
        scaled = max_weight_matching(3.0 * d)
        assert [(p, q) for p, q, _ in base.pairs] == [(p, q) for p, q, _ in scaled.pairs]

    def test_all_equal_weights_lexicographic(self):
        d = np.ones((5, 5))
        np.fill_diagonal(d, 0.0)
        for solver in (max_weight_matching, brute_force_matching):
            plan = solver(d)
            assert [(p, q) for p, q, _ in plan.pairs] == [("0", "1"), ("2", "3")]
            assert plan.unmatched == ["4"]

    def test_brute_force_refuses_large_instances(self, rng):
        with pytest.raises(DataError):
            brute_force_matching(random_symmetric(rng, 13))

    def test_matching_is_disjoint(self, rng):
        d = random_symmetric(rng, 10)
        plan = max_weight_matching(d)
        seen = [v for p, q, _ in plan.pairs for v in (p, q)]
        assert len(seen) == len(set(seen))


class TestConversionPlan:
    def plan(self):
        return MatchingPlan(pairs=[("a", "b", 0.5)], unmatched=[], total_weight=0.5)

    def test_one_utterance_each_two_directives(self):
        directives = conversion_plan(self.plan(), {"a": ["a_u0"], "b": ["b_u0"]})
        assert [(d.source_utterance, d.target_speaker) for d in directives] == [
            ("a_u0", "b"), ("b_u0", "a")]

    def test_three_pairs_two_utterances_each(self):
        plan = MatchingPlan(pairs=[("a", "b", 0.5), ("c", "d", 0.4), ("e", "f", 0.3)],
                            unmatched=[], total_weight=1.2)
        utts = {s: [f"{s}_u0", f"{s}_u1"] for s in "abcdef"}
        directives = conversion_plan(plan, utts)
        assert len(directives) == 12

    def test_empty_matching_empty_plan(self):
        plan = MatchingPlan(pairs=[], unmatched=["a"], total_weight=0.0)
        assert conversion_plan(plan, {"a": ["u"]}) == []

    def test_speaker_without_utterances_rejected(self):
        with pytest.raises(DataError, match="'b'"):
            conversion_plan(self.plan(), {"a": ["a_u0"], "b": []})

    def test_plan_json_shape(self, tmp_path):
        import json
        plan = self.plan()
        directives = conversion_plan(plan, {"a": ["a_u0"], "b": ["b_u0"]})
        path = tmp_path / "plan.json"
        write_plan(path, plan, directives)
        obj = json.loads(path.read_text())
        assert obj["pairs"] == [{"source": "a", "target": "b", "distance": 0.5}]
        assert obj["total_weight"] == 0.5
        assert len(obj["directives"]) == 2


class TestEndToEnd:
    def test_distance_matrix_symmetric_and_matchable(self, rng):
        raw = [(f"s{i}", rng.normal(size=3)) for i in range(7)]
        feats = normalize_features(raw)
        ids, d = distance_matrix(feats)
        assert ids == sorted(ids)
        assert np.array_equal(d, d.T)
        plan = max_weight_matching(d, ids=ids)
        oracle = brute_force_matching(d, ids=ids)
        assert plan.pairs == oracle.pairs
