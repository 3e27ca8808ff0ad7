import numpy as np
import pytest

from fairaudit.records import (
    AgeGroup,
    Education,
    Gender,
    Label,
    Language,
    PredictionSet,
    SubjectRecord,
    bin_age,
)


def make_record(sid, label="control", gender="female", age=70, education="high_school",
                language="english"):
    return SubjectRecord(
        subject_id=sid,
        gender=Gender(gender),
        age_group=bin_age(age),
        language=Language(language),
        label=Label(label),
        age_years=age,
        education=Education(education) if education else None,
    )


def onehot_prediction(label: Label, soft: float = 0.9) -> np.ndarray:
    idx = [Label.CONTROL, Label.MCI, Label.AD].index(label)
    rest = (1.0 - soft) / 2.0
    probs = np.full(3, rest)
    probs[idx] = soft
    return probs


def prediction_set(records, predicted_labels, seed=0):
    """Hard predictions wrapped as high-confidence probability vectors."""
    entries = {r.subject_id: onehot_prediction(p) for r, p in zip(records, predicted_labels)}
    return PredictionSet(entries=entries, seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
