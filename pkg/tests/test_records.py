import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairaudit.errors import DuplicateIdError, ImputationError, MappingError, SchemaError
from fairaudit.records import (
    AgeGroup,
    Education,
    Label,
    PredictionSet,
    bin_age,
    impute_missing,
    load_attributes,
    load_predictions,
    map_education,
    stratified_split,
    write_predictions,
)

from conftest import make_record

CSV_HEADER = "subject_id,gender,age,education,language,label\n"


def write_csv(tmp_path, rows, name="attrs.csv"):
    path = tmp_path / name
    path.write_text(CSV_HEADER + "".join(r + "\n" for r in rows))
    return path


class TestLoadAttributes:
    def test_three_valid_rows(self, tmp_path):
        path = write_csv(tmp_path, [
            "a,female,70,12,english,control",
            "b,male,85,graduate,spanish,mci",
            "c,female,59,,mandarin,ad",
        ])
        records = load_attributes(path)
        assert len(records) == 3
        assert records[0].age_group is AgeGroup.A66_80
        assert records[1].education is Education.GRADUATE
        assert records[2].education is None

    def test_invalid_language_names_row(self, tmp_path):
        path = write_csv(tmp_path, [
            "a,female,70,12,english,control",
            "b,male,85,12,french,mci",
        ])
        with pytest.raises(SchemaError, match="row 3"):
            load_attributes(path)

    def test_missing_column_is_schema_error(self, tmp_path):
        path = tmp_path / "attrs.csv"
        path.write_text("subject_id,gender,age,language,label\na,female,70,english,control\n")
        with pytest.raises(SchemaError, match="education"):
            load_attributes(path)

    def test_duplicate_subject_id(self, tmp_path):
        path = write_csv(tmp_path, [
            "a,female,70,12,english,control",
            "a,male,71,12,english,mci",
        ])
        with pytest.raises(DuplicateIdError):
            load_attributes(path)

    def test_jsonl_and_csv_agree(self, tmp_path):
        rows = [
            ("a", "female", 70, "12", "english", "control"),
            ("b", "male", 85, "PhD", "spanish", "mci"),
        ]
        csv_path = write_csv(tmp_path, [",".join(str(v) for v in r) for r in rows])
        jsonl_path = tmp_path / "attrs.jsonl"
        jsonl_path.write_text("".join(
            json.dumps(dict(zip(("subject_id", "gender", "age", "education",
                                 "language", "label"), r))) + "\n"
            for r in rows))
        assert load_attributes(csv_path) == load_attributes(jsonl_path)


class TestBinAge:
    @pytest.mark.parametrize("age,expected", [
        (65, AgeGroup.A46_65),
        (66, AgeGroup.A66_80),
        (80, AgeGroup.A66_80),
        (81, AgeGroup.A80_PLUS),
        (46, AgeGroup.A46_65),
        (99, AgeGroup.A80_PLUS),
    ])
    def test_boundaries(self, age, expected):
        assert bin_age(age) is expected

    def test_under_46_maps_to_youngest_with_warning(self, caplog):
        with caplog.at_level("WARNING"):
            assert bin_age(30) is AgeGroup.A46_65
        assert any("below" in r.message for r in caplog.records)

    def test_negative_age_rejected(self):
        with pytest.raises(SchemaError):
            bin_age(-1)

    @given(st.integers(min_value=0, max_value=120))
    def test_total_over_plausible_ages(self, age):
        assert bin_age(age) in AgeGroup


class TestMapEducation:
    @pytest.mark.parametrize("raw,expected", [
        ("8", Education.ELEMENTARY),
        ("12", Education.HIGH_SCHOOL),
        ("13", Education.UNDERGRADUATE),
        ("16", Education.UNDERGRADUATE),
        ("17", Education.GRADUATE),
        ("graduate", Education.GRADUATE),
        ("PhD", Education.GRADUATE),
        ("High School", Education.HIGH_SCHOOL),
        ("bachelor's", Education.UNDERGRADUATE),
    ])
    def test_examples(self, raw, expected):
        assert map_education(raw) is expected

    def test_unmapped_token_lists_it(self):
        with pytest.raises(MappingError, match="kindergarten"):
            map_education("kindergarten")


class TestImputeMissing:
    def test_identity_when_complete(self):
        records = [make_record(f"s{i}", education="graduate") for i in range(4)]
        assert impute_missing(records) == records

    def test_exact_linear_fit_recovered(self):
        # education code is exactly (age - 50) / 10 on observed rows
        ages = [50, 60, 70, 80]
        levels = ["elementary", "high_school", "undergraduate", "graduate"]
        records = [make_record(f"s{i}", age=a, education=l) for i, (a, l) in
                   enumerate(zip(ages, levels))]
        records.append(make_record("missing", age=60, education=None))
        out = impute_missing(records)
        target = next(r for r in out if r.subject_id == "missing")
        assert target.education is Education.HIGH_SCHOOL
        assert target.education_imputed

    def test_observed_values_never_altered(self):
        records = [make_record(f"s{i}", age=50 + i, education="elementary") for i in range(3)]
        records.append(make_record("m", age=80, education=None))
        out = impute_missing(records)
        for before, after in zip(records[:3], out[:3]):
            assert before == after

    def test_synthetic_rule_mostly_recovered(self, rng):
        # generating rule: level index = clip((age - 46) // 14)
        records = []
        truth = {}
        for i in range(200):
            age = int(rng.integers(46, 100))
            code = min(3, (age - 46) // 14)
            level = list(Education)[code]
            missing = rng.random() < 0.35
            truth[f"s{i}"] = level
            records.append(make_record(f"s{i}", age=age,
                                       education=None if missing else level.value))
        out = impute_missing(records)
        imputed = [r for r in out if r.education_imputed]
        assert imputed
        hits = sum(1 for r in imputed if r.education is truth[r.subject_id])
        assert hits / len(imputed) >= 0.8

    def test_all_missing_rejected(self):
        records = [make_record(f"s{i}", education=None) for i in range(3)]
        with pytest.raises(ImputationError):
            impute_missing(records)


class TestStratifiedSplit:
    def test_forced_allocation_two_classes(self):
        records = [make_record(f"s{i}", label="control" if i < 5 else "mci")
                   for i in range(10)]
        part_a, part_b = stratified_split(records, 0.2, ["label"], seed=0)
        assert len(part_b) == 2
        assert {r.label.value for r in part_b} == {"control", "mci"}

    def test_deterministic(self):
        records = [make_record(f"s{i}", label=["control", "mci", "ad"][i % 3])
                   for i in range(30)]
        split1 = stratified_split(records, 0.3, ["label"], seed=7)
        split2 = stratified_split(records, 0.3, ["label"], seed=7)
        assert [r.subject_id for r in split1[1]] == [r.subject_id for r in split2[1]]

    def test_desk_scale_twenty_percent(self):
        # 1646 records over three label strata: |part_b| must land on 329 +- 1
        counts = {"control": 912, "mci": 214, "ad": 520}
        records = []
        i = 0
        for label, n in counts.items():
            for _ in range(n):
                records.append(make_record(f"s{i:04d}", label=label))
                i += 1
        _, part_b = stratified_split(records, 0.2, ["label"], seed=3)
        assert abs(len(part_b) - 329) <= 1

    def test_tiny_stratum_kept_whole_in_part_a(self, caplog):
        records = [make_record("only", label="ad")]
        records += [make_record(f"s{i}", label="control") for i in range(10)]
        with caplog.at_level("WARNING"):
            part_a, part_b = stratified_split(records, 0.2, ["label"], seed=0)
        assert any(r.subject_id == "only" for r in part_a)
        assert all(r.subject_id != "only" for r in part_b)

    @given(st.integers(min_value=0, max_value=2 ** 31 - 1),
           st.integers(min_value=6, max_value=60))
    @settings(max_examples=25, deadline=None)
    def test_partition_properties(self, seed, n):
        records = [make_record(f"s{i}", label=["control", "mci", "ad"][i % 3])
                   for i in range(n)]
        part_a, part_b = stratified_split(records, 0.25, ["label"], seed=seed)
        ids_a = {r.subject_id for r in part_a}
        ids_b = {r.subject_id for r in part_b}
        assert ids_a | ids_b == {r.subject_id for r in records}
        assert not (ids_a & ids_b)


class TestPredictions:
    def test_round_trip(self, tmp_path):
        records = [make_record(f"s{i}") for i in range(3)]
        ps = PredictionSet(entries={r.subject_id: np.array([0.5, 0.3, 0.2])
                                    for r in records}, seed=4)
        path = tmp_path / "preds.jsonl"
        write_predictions(path, [ps])
        loaded = load_predictions(path)
        assert len(loaded) == 1 and loaded[0].seed == 4
        for sid in ps.entries:
            np.testing.assert_allclose(loaded[0].entries[sid], ps.entries[sid])

    def test_bad_probability_sum_rejected(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        path.write_text(json.dumps({"subject_id": "a", "probs": [0.5, 0.5, 0.1],
                                    "seed": 0}) + "\n")
        with pytest.raises(SchemaError, match="sum"):
            load_predictions(path)

    def test_negative_probability_rejected(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        path.write_text(json.dumps({"subject_id": "a", "probs": [1.1, -0.05, -0.05],
                                    "seed": 0}) + "\n")
        with pytest.raises(SchemaError, match="negative"):
            load_predictions(path)

    def test_hard_pred_is_argmax(self):
        ps = PredictionSet(entries={"a": np.array([0.2, 0.5, 0.3])}, seed=0)
        assert ps.hard_pred("a") is Label.MCI
