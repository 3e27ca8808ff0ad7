"""Post-processing: per-subgroup isotonic calibration plus per-(subgroup, class)
threshold optimization, then margin-based multiclass decisions.

For every class c (one-vs-rest) the threshold search minimizes

    sum_a |TPR_a - mean_a TPR| + |FPR_a - mean_a FPR|

over per-subgroup thresholds on a regular grid, starting from 0.5
everywhere, by coordinate descent. Group averages are recomputed at every
objective evaluation. Ties in the objective are broken by higher mean
balanced accuracy, then by thresholds closest to 0.5, so the "preserve
utility" goal enters only through tie-breaking.

The final decision score for class c of a subject in subgroup a is the
margin calibrated_prob_c - t_{a,c}; the predicted class is the argmax
margin (ties to the higher calibrated probability, then to the fixed
class order control < mci < ad). With all thresholds equal this reduces
to plain argmax of the calibrated probabilities.

Calibration and thresholds are fit on the validation split only; test
scores are transformed with the frozen models, never refit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .records import CLASSES, Label, PredictionSet, SubjectRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IsotonicModel:
    """Piecewise-constant non-decreasing map with clamped extrapolation."""

    breakpoints: np.ndarray  # ascending unique scores
    values: np.ndarray       # non-decreasing fitted values in [0, 1]

    def predict(self, scores: np.ndarray) -> np.ndarray:
        scores = np.asarray(scores, dtype=float)
        idx = np.searchsorted(self.breakpoints, scores, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        return self.values[idx]

    def to_dict(self) -> dict:
        return {"breakpoints": [float(x) for x in self.breakpoints],
                "values": [float(v) for v in self.values]}

    @staticmethod
    def from_dict(obj: dict) -> "IsotonicModel":
        return IsotonicModel(np.asarray(obj["breakpoints"], dtype=float),
                             np.asarray(obj["values"], dtype=float))


def _pool_adjacent_violators(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted least-squares isotonic fit by pool-adjacent-violators."""
    blocks: list[list[float]] = []  # [weight, weighted mean, count]
    for v, w in zip(values, weights):
        blocks.append([w, v, 1])
        while len(blocks) >= 2 and blocks[-2][1] > blocks[-1][1]:
            w2, m2, c2 = blocks.pop()
            w1, m1, c1 = blocks.pop()
            wt = w1 + w2
            blocks.append([wt, (w1 * m1 + w2 * m2) / wt, c1 + c2])
    out = np.empty(len(values))
    pos = 0
    for w, m, c in blocks:
        out[pos:pos + c] = m
        pos += c
    return out


def isotonic_fit(scores: Sequence[float], binary_labels: Sequence[int]) -> IsotonicModel:
    """Fit isotonic regression of binary labels on scores.

    Equal scores are pooled before the PAV pass. Single-class label sets
    produce a degenerate constant model with a warning.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(binary_labels, dtype=float)
    if scores.size < 2:
        raise DataError("isotonic fit needs at least 2 samples")
    if scores.shape != labels.shape:
        raise DataError("score/label length mismatch")
    uniq = np.unique(labels)
    if uniq.size == 1:
        log.warning("isotonic fit saw a single label class; returning constant model")
        return IsotonicModel(breakpoints=np.array([0.0]), values=np.array([float(uniq[0])]))

    order = np.argsort(scores, kind="mergesort")
    s_sorted = scores[order]
    y_sorted = labels[order]
    # pool exact score ties into single weighted points
    bp: list[float] = []
    ys: list[float] = []
    ws: list[float] = []
    i = 0
    while i < len(s_sorted):
        j = i
        while j + 1 < len(s_sorted) and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        bp.append(float(s_sorted[i]))
        ys.append(float(y_sorted[i:j + 1].mean()))
        ws.append(float(j - i + 1))
        i = j + 1
    fitted = _pool_adjacent_violators(np.asarray(ys), np.asarray(ws))
    return IsotonicModel(breakpoints=np.asarray(bp), values=fitted)


# ---------------------------------------------------------------------------
# Threshold optimization

@dataclass
class ThresholdSlice:
    """Optimized per-subgroup thresholds for one class."""

    cls: Label
    thresholds: dict[str, float]
    pinned: list[str]            # subgroups excluded from the deviation sums
    objective: float
    initial_objective: float     # objective at the uniform-0.5 table
    grid_step: float


@dataclass
class ThresholdTable:
    """Thresholds for every (subgroup, class) cell of one attribute."""

    attribute: str
    slices: dict[Label, ThresholdSlice]
    grid_step: float

    def threshold(self, subgroup: str, cls: Label) -> float:
        return self.slices[cls].thresholds.get(subgroup, 0.5)

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "grid_step": self.grid_step,
            "classes": {
                cls.value: {
                    "thresholds": dict(sorted(sl.thresholds.items())),
                    "pinned": sorted(sl.pinned),
                    "objective": sl.objective,
                    "initial_objective": sl.initial_objective,
                }
                for cls, sl in self.slices.items()
            },
        }


def _build_grid(grid_step: float) -> np.ndarray:
    if not 0.0 < grid_step <= 0.5:
        raise DataError(f"grid_step must be in (0, 0.5], got {grid_step}")
    n = int(round(1.0 / grid_step))
    points = set(np.round(np.linspace(0.0, 1.0, n + 1), 12).tolist())
    points.add(0.5)
    return np.array(sorted(points))


def _rates_on_grid(scores: np.ndarray, labels: np.ndarray, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """TPR/FPR at every grid threshold with the 'predict positive iff
    score >= t' rule."""
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    tpr = (len(pos) - np.searchsorted(pos, grid, side="left")) / len(pos)
    fpr = (len(neg) - np.searchsorted(neg, grid, side="left")) / len(neg)
    return tpr, fpr


def optimize_thresholds(
    calibrated_scores: dict[str, np.ndarray],
    labels: dict[str, np.ndarray],
    cls: Label,
    grid_step: float = 0.01,
) -> ThresholdSlice:
    """Coordinate descent over per-subgroup thresholds for one class.

    Subgroups lacking positives or negatives are pinned to 0.5 and left
    out of the deviation sums (with a warning). The accepted-move rule is
    a strict lexicographic improvement in (objective, -balanced accuracy,
    distance from 0.5, threshold tuple), which guarantees termination and
    that the final objective never exceeds the all-0.5 initialization.
    """
    if set(calibrated_scores) != set(labels):
        raise DataError("score/label subgroup sets differ")
    grid = _build_grid(grid_step)
    half_idx = int(np.argmin(np.abs(grid - 0.5)))

    active: list[str] = []
    pinned: list[str] = []
    tpr_grid: dict[str, np.ndarray] = {}
    fpr_grid: dict[str, np.ndarray] = {}
    for sub in sorted(calibrated_scores):
        y = np.asarray(labels[sub], dtype=int)
        s = np.asarray(calibrated_scores[sub], dtype=float)
        if y.size == 0 or y.min() == y.max():
            log.warning("class %s subgroup %r lacks positives or negatives; pinned to 0.5", cls.value, sub)
            pinned.append(sub)
            continue
        active.append(sub)
        tpr_grid[sub], fpr_grid[sub] = _rates_on_grid(s, y, grid)
    if len(active) < 2:
        raise DataError(f"class {cls.value}: need >=2 subgroups with both labels, got {len(active)}")

    idx = {sub: half_idx for sub in active}

    def state_key(indices: dict[str, int]) -> tuple:
        tprs = np.array([tpr_grid[a][indices[a]] for a in active])
        fprs = np.array([fpr_grid[a][indices[a]] for a in active])
        obj = float(np.abs(tprs - tprs.mean()).sum() + np.abs(fprs - fprs.mean()).sum())
        balacc = float(((tprs + 1.0 - fprs) / 2.0).mean())
        dist = float(sum(abs(grid[indices[a]] - 0.5) for a in active))
        ts = tuple(float(grid[indices[a]]) for a in active)
        return (obj, -balacc, dist, ts)

    current = state_key(idx)
    initial_objective = current[0]
    for _ in range(1000):
        moved = False
        for sub in active:
            best_k = idx[sub]
            best_key = current
            for k in range(len(grid)):
                if k == idx[sub]:
                    continue
                trial = dict(idx)
                trial[sub] = k
                key = state_key(trial)
                if key < best_key:
                    best_key = key
                    best_k = k
            if best_k != idx[sub]:
                idx[sub] = best_k
                current = best_key
                moved = True
        if not moved:
            break

    thresholds = {sub: float(grid[idx[sub]]) for sub in active}
    thresholds.update({sub: 0.5 for sub in pinned})
    return ThresholdSlice(
        cls=cls,
        thresholds=thresholds,
        pinned=pinned,
        objective=current[0],
        initial_objective=initial_objective,
        grid_step=grid_step,
    )


def decide_multiclass(
    calibrated_probs: dict[Label, float],
    thresholds: ThresholdTable,
    subgroup: str,
) -> Label:
    """Pick the class with the largest margin calibrated_prob - threshold."""
    best: Optional[Label] = None
    best_margin = best_prob = -np.inf
    for cls in CLASSES:
        p = calibrated_probs[cls]
        margin = p - thresholds.threshold(subgroup, cls)
        if margin > best_margin or (margin == best_margin and p > best_prob):
            best, best_margin, best_prob = cls, margin, p
    assert best is not None
    return best


# ---------------------------------------------------------------------------
# Fit / apply pipeline

@dataclass
class CeoModel:
    """Frozen calibrators and thresholds fit on a validation split.

    identity_fallback is set when the fitted adjustment made the
    validation TPR deviations worse than the raw argmax decisions; the
    apply step then passes predictions through unchanged (do no harm on
    the fit split).
    """

    attribute: str
    calibrators: dict[tuple[str, Label], IsotonicModel]
    thresholds: ThresholdTable
    subgroups: list[str]
    identity_fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "subgroups": sorted(self.subgroups),
            "identity_fallback": self.identity_fallback,
            "calibrators": {
                f"{sub}|{cls.value}": model.to_dict()
                for (sub, cls), model in sorted(
                    self.calibrators.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
                )
            },
            "thresholds": self.thresholds.to_dict(),
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def fit_ceo(
    val_preds: PredictionSet,
    records: Sequence[SubjectRecord],
    attribute: str,
    grid_step: float = 0.01,
    safeguard: bool = True,
) -> CeoModel:
    """Fit per-(subgroup, class) isotonic calibrators and thresholds.

    With safeguard on, the fitted model is evaluated on the validation
    split it was fit on; if the adjusted multiclass decisions show larger
    per-class TPR deviations than the raw argmax decisions, the model is
    marked identity_fallback and applies no adjustment.
    """
    by_id = {r.subject_id: r for r in records}
    missing = [sid for sid in val_preds.entries if sid not in by_id]
    if missing:
        raise DataError(f"{len(missing)} validation prediction(s) without records")

    members: dict[str, list[str]] = {}
    for sid in val_preds.entries:
        members.setdefault(by_id[sid].attribute_value(attribute), []).append(sid)
    subgroups = sorted(members)
    if len(subgroups) < 2:
        raise DataError("CEO needs at least 2 subgroups in the validation split")

    calibrators: dict[tuple[str, Label], IsotonicModel] = {}
    slices: dict[Label, ThresholdSlice] = {}
    for k, cls in enumerate(CLASSES):
        cal_scores: dict[str, np.ndarray] = {}
        cal_labels: dict[str, np.ndarray] = {}
        for sub in subgroups:
            sids = members[sub]
            raw = np.array([val_preds.entries[sid][k] for sid in sids])
            y = np.array([1 if by_id[sid].label is cls else 0 for sid in sids])
            model = isotonic_fit(raw, y) if len(sids) >= 2 else IsotonicModel(
                breakpoints=np.array([0.0]), values=np.array([float(y.mean()) if len(y) else 0.0]))
            calibrators[(sub, cls)] = model
            cal_scores[sub] = model.predict(raw)
            cal_labels[sub] = y
        slices[cls] = optimize_thresholds(cal_scores, cal_labels, cls, grid_step)
    table = ThresholdTable(attribute=attribute, slices=slices, grid_step=grid_step)
    model = CeoModel(attribute=attribute, calibrators=calibrators, thresholds=table,
                     subgroups=subgroups)
    if safeguard:
        from .metrics import subgroup_rates, tpr_deviation_sum, tpr_spread_sum
        adjusted = apply_ceo(model, val_preds, records)
        pre = subgroup_rates(val_preds, records, attribute)
        post = subgroup_rates(adjusted, records, attribute)
        if (tpr_deviation_sum(post) > tpr_deviation_sum(pre)
                or tpr_spread_sum(post) > tpr_spread_sum(pre)):
            log.warning("CEO adjustment worsened validation TPR deviations; "
                        "falling back to identity")
            model.identity_fallback = True
    return model


@dataclass
class AdjustedPredictionSet:
    """CEO-adjusted decisions; duck-type compatible with PredictionSet for audits."""

    entries: dict[str, np.ndarray]   # calibrated per-class scores (not a simplex)
    hard: dict[str, Label]
    seed: int

    def hard_pred(self, subject_id: str) -> Label:
        return self.hard[subject_id]

    def subjects(self) -> list[str]:
        return list(self.entries)

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for sid in self.entries:
                fh.write(json.dumps({
                    "subject_id": sid,
                    "calibrated": [float(p) for p in self.entries[sid]],
                    "pred": self.hard[sid].value,
                    "seed": self.seed,
                }) + "\n")


def apply_ceo(
    model: CeoModel,
    preds: PredictionSet,
    records: Sequence[SubjectRecord],
) -> AdjustedPredictionSet:
    """Transform scores with the frozen calibrators and decide by margin.

    Subgroups unseen during fitting fall back to identity calibration and
    0.5 thresholds, with a warning.
    """
    by_id = {r.subject_id: r for r in records}
    entries: dict[str, np.ndarray] = {}
    hard: dict[str, Label] = {}
    if model.identity_fallback:
        for sid, probs in preds.entries.items():
            entries[sid] = np.asarray(probs, dtype=float).copy()
            hard[sid] = CLASSES[int(np.argmax(probs))]
        return AdjustedPredictionSet(entries=entries, hard=hard, seed=preds.seed)
    warned: set[str] = set()
    for sid, probs in preds.entries.items():
        rec = by_id.get(sid)
        if rec is None:
            raise DataError(f"prediction for unknown subject {sid!r}")
        sub = rec.attribute_value(model.attribute)
        calibrated = {}
        for k, cls in enumerate(CLASSES):
            cal = model.calibrators.get((sub, cls))
            if cal is None:
                if sub not in warned:
                    log.warning("subgroup %r unseen at fit time; identity calibration, 0.5 thresholds", sub)
                    warned.add(sub)
                calibrated[cls] = float(probs[k])
            else:
                calibrated[cls] = float(cal.predict(np.array([probs[k]]))[0])
        entries[sid] = np.array([calibrated[c] for c in CLASSES])
        hard[sid] = decide_multiclass(calibrated, model.thresholds, sub)
    return AdjustedPredictionSet(entries=entries, hard=hard, seed=preds.seed)
