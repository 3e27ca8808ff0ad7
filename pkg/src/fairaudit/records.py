"""Subject attribute ingestion: parsing, demographic binning, imputation, splitting.

Attribute files are CSV (UTF-8, header row) or JSONL with fields
subject_id, gender, age, education (may be blank), language, label.
Prediction files are JSONL, one object per subject:
{"subject_id": ..., "probs": [p_control, p_mci, p_ad], "seed": ...}.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DataError,
    DuplicateIdError,
    ImputationError,
    MappingError,
    SchemaError,
)

log = logging.getLogger(__name__)


class Gender(Enum):
    FEMALE = "female"
    MALE = "male"


class AgeGroup(Enum):
    A46_65 = "a46_65"
    A66_80 = "a66_80"
    A80_PLUS = "a80_plus"


class Education(Enum):
    ELEMENTARY = "elementary"
    HIGH_SCHOOL = "high_school"
    UNDERGRADUATE = "undergraduate"
    GRADUATE = "graduate"


class Language(Enum):
    ENGLISH = "english"
    SPANISH = "spanish"
    MANDARIN = "mandarin"


class Label(Enum):
    CONTROL = "control"
    MCI = "mci"
    AD = "ad"


CLASSES: tuple[Label, ...] = (Label.CONTROL, Label.MCI, Label.AD)

PROTECTED_ATTRIBUTES: tuple[str, ...] = ("gender", "age_group", "education", "language")

# Ordinal codes used for imputation and ordering of education levels.
EDUCATION_CODES: dict[Education, int] = {
    Education.ELEMENTARY: 0,
    Education.HIGH_SCHOOL: 1,
    Education.UNDERGRADUATE: 2,
    Education.GRADUATE: 3,
}
_CODE_TO_EDUCATION = {v: k for k, v in EDUCATION_CODES.items()}

# Category strings accepted by map_education, matched case-insensitively.
# Year counts are handled separately (<=8 / 9-12 / 13-16 / >=17, ISCED-11
# aligned cutoffs; override via EducationMapping if a cohort needs others).
EDUCATION_SYNONYMS: dict[str, Education] = {
    "elementary": Education.ELEMENTARY,
    "elementary school": Education.ELEMENTARY,
    "primary": Education.ELEMENTARY,
    "primary school": Education.ELEMENTARY,
    "grade school": Education.ELEMENTARY,
    "high school": Education.HIGH_SCHOOL,
    "highschool": Education.HIGH_SCHOOL,
    "high-school": Education.HIGH_SCHOOL,
    "secondary": Education.HIGH_SCHOOL,
    "secondary school": Education.HIGH_SCHOOL,
    "ged": Education.HIGH_SCHOOL,
    "hs": Education.HIGH_SCHOOL,
    "undergraduate": Education.UNDERGRADUATE,
    "undergrad": Education.UNDERGRADUATE,
    "college": Education.UNDERGRADUATE,
    "some college": Education.UNDERGRADUATE,
    "university": Education.UNDERGRADUATE,
    "associate": Education.UNDERGRADUATE,
    "associates": Education.UNDERGRADUATE,
    "bachelor": Education.UNDERGRADUATE,
    "bachelors": Education.UNDERGRADUATE,
    "bachelor's": Education.UNDERGRADUATE,
    "graduate": Education.GRADUATE,
    "grad school": Education.GRADUATE,
    "postgraduate": Education.GRADUATE,
    "advanced": Education.GRADUATE,
    "advanced/graduate": Education.GRADUATE,
    "master": Education.GRADUATE,
    "masters": Education.GRADUATE,
    "master's": Education.GRADUATE,
    "phd": Education.GRADUATE,
    "ph.d.": Education.GRADUATE,
    "doctorate": Education.GRADUATE,
    "doctoral": Education.GRADUATE,
    "md": Education.GRADUATE,
}

_GENDER_ALIASES = {"female": Gender.FEMALE, "f": Gender.FEMALE,
                   "male": Gender.MALE, "m": Gender.MALE}
_LANGUAGE_ALIASES = {"english": Language.ENGLISH, "en": Language.ENGLISH,
                     "spanish": Language.SPANISH, "es": Language.SPANISH,
                     "mandarin": Language.MANDARIN, "zh": Language.MANDARIN}
_LABEL_ALIASES = {"control": Label.CONTROL, "mci": Label.MCI, "ad": Label.AD}


@dataclass(frozen=True)
class SubjectRecord:
    """One participant with protected attributes and diagnostic label."""

    subject_id: str
    gender: Gender
    age_group: AgeGroup
    language: Language
    label: Label
    age_years: Optional[int] = None
    education: Optional[Education] = None
    education_imputed: bool = False

    def attribute_value(self, attribute: str) -> str:
        """String value of a protected attribute (for grouping keys)."""
        if attribute not in PROTECTED_ATTRIBUTES:
            raise DataError(
                f"{attribute!r} is not a protected attribute "
                f"(expected one of {PROTECTED_ATTRIBUTES})"
            )
        value = getattr(self, attribute)
        if value is None:
            raise DataError(
                f"subject {self.subject_id!r} has no value for {attribute!r} "
                "(impute before auditing)"
            )
        return value.value


def bin_age(age_years: int) -> AgeGroup:
    """Map integer age to its demographic bin: 46-65, 66-80, >=81.

    Ages below 46 fall back to the youngest bin with a logged warning,
    since the cohort definition starts at 46.
    """
    if age_years < 0:
        raise SchemaError(f"age must be non-negative, got {age_years}")
    if age_years < 46:
        log.warning("age %d is below the 46-65 bin; assigning youngest bin", age_years)
        return AgeGroup.A46_65
    if age_years <= 65:
        return AgeGroup.A46_65
    if age_years <= 80:
        return AgeGroup.A66_80
    return AgeGroup.A80_PLUS


def map_education(raw: str) -> Education:
    """Map a year count or category string onto one of the four levels."""
    token = raw.strip()
    if not token:
        raise MappingError("empty education value")
    try:
        years = int(float(token))
    except ValueError:
        years = None
    if years is not None:
        if years < 0:
            raise MappingError(f"negative education years: {token!r}")
        if years <= 8:
            return Education.ELEMENTARY
        if years <= 12:
            return Education.HIGH_SCHOOL
        if years <= 16:
            return Education.UNDERGRADUATE
        return Education.GRADUATE
    level = EDUCATION_SYNONYMS.get(token.lower())
    if level is None:
        raise MappingError(f"unmapped education value: {token!r}")
    return level


def _parse_enum(raw: str, aliases: dict, what: str):
    value = aliases.get(raw.strip().lower())
    if value is None:
        raise MappingError(f"invalid {what}: {raw!r}")
    return value


def _record_from_row(row: dict, rownum: int) -> SubjectRecord:
    sid = str(row.get("subject_id", "")).strip()
    if not sid:
        raise SchemaError(f"row {rownum}: empty subject_id")
    gender = _parse_enum(str(row["gender"]), _GENDER_ALIASES, "gender")
    language = _parse_enum(str(row["language"]), _LANGUAGE_ALIASES, "language")
    label = _parse_enum(str(row["label"]), _LABEL_ALIASES, "label")
    age_raw = str(row["age"]).strip()
    if not age_raw:
        raise SchemaError(f"row {rownum}: missing age")
    try:
        age_years = int(float(age_raw))
    except ValueError:
        raise SchemaError(f"row {rownum}: unparseable age {age_raw!r}")
    edu_raw = row.get("education")
    edu_token = "" if edu_raw is None else str(edu_raw).strip()
    education = map_education(edu_token) if edu_token else None
    return SubjectRecord(
        subject_id=sid,
        gender=gender,
        age_group=bin_age(age_years),
        language=language,
        label=label,
        age_years=age_years,
        education=education,
    )


REQUIRED_COLUMNS = ("subject_id", "gender", "age", "education", "language", "label")


def load_attributes(path: str | Path, fmt: Optional[str] = None) -> list[SubjectRecord]:
    """Load and validate subject records from a CSV or JSONL file.

    fmt is "csv" or "jsonl"; inferred from the suffix when omitted.
    All malformed rows are collected and reported together with their
    row numbers (header is row 1 for CSV).
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"attribute file not found: {path}")
    if fmt is None:
        fmt = "jsonl" if path.suffix.lower() in (".jsonl", ".ndjson") else "csv"
    if fmt == "csv":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in REQUIRED_COLUMNS if c not in header]
            if missing:
                raise SchemaError(f"{path}: missing required columns {missing}")
            rows = [(i + 2, row) for i, row in enumerate(reader)]
    elif fmt == "jsonl":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SchemaError(f"{path} line {i + 1}: invalid JSON ({exc})")
                missing = [c for c in REQUIRED_COLUMNS if c not in obj]
                if missing:
                    raise SchemaError(f"{path} line {i + 1}: missing keys {missing}")
                rows.append((i + 1, obj))
    else:
        raise SchemaError(f"unknown attribute format {fmt!r}")

    records: list[SubjectRecord] = []
    seen: set[str] = set()
    problems: list[str] = []
    for rownum, row in rows:
        try:
            rec = _record_from_row(row, rownum)
        except (SchemaError, MappingError) as exc:
            problems.append(f"row {rownum}: {exc}")
            continue
        if rec.subject_id in seen:
            raise DuplicateIdError(f"{path}: duplicate subject_id {rec.subject_id!r} at row {rownum}")
        seen.add(rec.subject_id)
        records.append(rec)
    if problems:
        raise SchemaError(f"{path}: {len(problems)} bad row(s): " + "; ".join(problems))
    return records


# ---------------------------------------------------------------------------
# Imputation

def _design_matrix(records: Sequence[SubjectRecord]) -> np.ndarray:
    """Predictors for imputation: intercept, age, gender and language one-hots."""
    rows = []
    for r in records:
        if r.age_years is None:
            raise ImputationError(f"subject {r.subject_id!r} has no age; predictors must be observed")
        rows.append([
            1.0,
            float(r.age_years),
            1.0 if r.gender is Gender.MALE else 0.0,
            1.0 if r.language is Language.SPANISH else 0.0,
            1.0 if r.language is Language.MANDARIN else 0.0,
        ])
    return np.asarray(rows, dtype=float)


def impute_missing(
    records: Sequence[SubjectRecord],
    target: str = "education",
    max_iters: int = 10,
    tol: float = 1e-3,
) -> list[SubjectRecord]:
    """Fill missing education levels by iterated least squares on age,
    gender and language, mode-initialized, rounding to the nearest level.

    Observed values are never altered; imputed records get
    education_imputed=True.
    """
    if target != "education":
        raise ImputationError(f"unsupported imputation target {target!r}")
    observed_idx = [i for i, r in enumerate(records) if r.education is not None]
    missing_idx = [i for i, r in enumerate(records) if r.education is None]
    if not missing_idx:
        return list(records)
    if not observed_idx:
        raise ImputationError("cannot impute education: no observed values")

    codes = np.full(len(records), np.nan)
    for i in observed_idx:
        codes[i] = EDUCATION_CODES[records[i].education]
    mode_code = np.bincount(codes[observed_idx].astype(int)).argmax()
    current = np.full(len(missing_idx), float(mode_code))

    x_all = _design_matrix(records)
    x_obs = x_all[observed_idx]
    y_obs = codes[observed_idx]
    x_mis = x_all[missing_idx]

    for _ in range(max_iters):
        beta, *_ = np.linalg.lstsq(x_obs, y_obs, rcond=None)
        predicted = x_mis @ beta
        change = float(np.max(np.abs(predicted - current)))
        current = predicted
        if change < tol:
            break

    out = list(records)
    for pos, i in enumerate(missing_idx):
        code = int(np.clip(round(float(current[pos])), 0, 3))
        out[i] = replace(records[i], education=_CODE_TO_EDUCATION[code], education_imputed=True)
    return out


# ---------------------------------------------------------------------------
# Stratified splitting

def stratified_split(
    records: Sequence[SubjectRecord],
    fraction: float,
    strata: Sequence[str],
    seed: int,
) -> tuple[list[SubjectRecord], list[SubjectRecord]]:
    """Split records into (part_a, part_b) with |part_b| ~ fraction*N per stratum.

    Allocation per stratum is round-half-up of fraction*n; strata where
    floor(fraction*n) < 1 go wholly to part_a with a warning. Deterministic
    for a given seed (records are keyed by subject_id before shuffling).
    """
    if not 0.0 < fraction < 1.0:
        raise DataError(f"fraction must be in (0, 1), got {fraction}")
    groups: dict[tuple, list[SubjectRecord]] = {}
    for r in records:
        key = tuple(_stratum_value(r, f) for f in strata)
        groups.setdefault(key, []).append(r)

    rng = np.random.default_rng(seed)
    part_a: list[SubjectRecord] = []
    part_b: list[SubjectRecord] = []
    for key in sorted(groups):
        members = sorted(groups[key], key=lambda r: r.subject_id)
        n = len(members)
        if math.floor(fraction * n) < 1:
            log.warning("stratum %s too small for fraction %.3f (n=%d); kept in part_a", key, fraction, n)
            part_a.extend(members)
            continue
        n_b = int(math.floor(fraction * n + 0.5))
        order = rng.permutation(n)
        chosen = set(order[:n_b].tolist())
        for i, rec in enumerate(members):
            (part_b if i in chosen else part_a).append(rec)
    return part_a, part_b


def _stratum_value(record: SubjectRecord, fieldname: str) -> str:
    value = getattr(record, fieldname, None)
    if value is None:
        raise DataError(f"subject {record.subject_id!r} missing stratum field {fieldname!r}")
    return value.value if isinstance(value, Enum) else str(value)


# ---------------------------------------------------------------------------
# Predictions

PROB_SUM_TOL = 1e-9


@dataclass
class PredictionSet:
    """Per-subject class probability vectors for one training run (seed)."""

    entries: dict[str, np.ndarray]
    seed: int

    def hard_pred(self, subject_id: str) -> Label:
        probs = self.entries[subject_id]
        return CLASSES[int(np.argmax(probs))]

    def subjects(self) -> list[str]:
        return list(self.entries)


def _validate_probs(sid: str, probs: Sequence[float], where: str) -> np.ndarray:
    arr = np.asarray(probs, dtype=float)
    if arr.shape != (len(CLASSES),):
        raise SchemaError(f"{where}: subject {sid!r} has {arr.size} probabilities, expected {len(CLASSES)}")
    if np.any(arr < 0):
        raise SchemaError(f"{where}: subject {sid!r} has negative probability")
    if abs(float(arr.sum()) - 1.0) > PROB_SUM_TOL:
        raise SchemaError(f"{where}: subject {sid!r} probabilities sum to {arr.sum():.12f}, not 1")
    return arr


def load_predictions(path: str | Path) -> list[PredictionSet]:
    """Load prediction JSONL, grouping rows into one PredictionSet per seed."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"prediction file not found: {path}")
    by_seed: dict[int, dict[str, np.ndarray]] = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            where = f"{path} line {i + 1}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{where}: invalid JSON ({exc})")
            for key in ("subject_id", "probs", "seed"):
                if key not in obj:
                    raise SchemaError(f"{where}: missing key {key!r}")
            sid = str(obj["subject_id"])
            seed = int(obj["seed"])
            entries = by_seed.setdefault(seed, {})
            if sid in entries:
                raise DuplicateIdError(f"{where}: duplicate subject {sid!r} for seed {seed}")
            entries[sid] = _validate_probs(sid, obj["probs"], where)
    return [PredictionSet(entries=by_seed[s], seed=s) for s in sorted(by_seed)]


def write_predictions(path: str | Path, prediction_sets: Iterable[PredictionSet]) -> None:
    """Write PredictionSets as the standard prediction JSONL."""
    with open(path, "w", encoding="utf-8") as fh:
        for ps in prediction_sets:
            for sid in ps.entries:
                probs = [float(p) for p in ps.entries[sid]]
                fh.write(json.dumps({"subject_id": sid, "probs": probs, "seed": ps.seed}) + "\n")


def check_predictions_match(preds: PredictionSet, records: Sequence[SubjectRecord]) -> None:
    """Every predicted subject must exist in the attribute table."""
    known = {r.subject_id for r in records}
    unknown = [sid for sid in preds.entries if sid not in known]
    if unknown:
        raise DataError(f"{len(unknown)} predicted subject(s) missing from attributes, e.g. {unknown[:5]}")
