"""Per-sample training weights: static frequency-based and dynamic TPR-driven.

Frequency weights follow the classic reweighing construction: each
(subgroup, label) cell gets expected count under independence divided by
observed count, w(a, y) = N_a * N_y / (N * N_ay). The weighted empirical
joint of (a, y) then factorizes into the original marginals and the mean
weight is exactly 1.

Dynamic weights are 1 / max(running TPR, epsilon) per (subgroup, class)
cell, refreshed every update_period batches and held stable in between.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import DataError
from .records import Label, SubjectRecord

log = logging.getLogger(__name__)


@dataclass
class WeightVector:
    """Positive per-sample weights under one weighting scheme."""

    weights: dict[str, float]
    scheme: str  # "frequency" or "dynamic_tpr"
    attribute: str

    def __post_init__(self) -> None:
        bad = {sid: w for sid, w in self.weights.items() if not (w > 0.0 and w < float("inf"))}
        if bad:
            raise DataError(f"non-positive or non-finite weights for {list(bad)[:5]}")

    def values(self) -> list[float]:
        return list(self.weights.values())

    def mean(self) -> float:
        return sum(self.weights.values()) / len(self.weights)

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for sid, w in self.weights.items():
                fh.write(json.dumps({"subject_id": sid, "weight": w}) + "\n")


def frequency_weights(records: Sequence[SubjectRecord], attribute: str) -> WeightVector:
    """Expected-over-observed frequency weights per (subgroup, label) cell."""
    if not records:
        raise DataError("no records to weight")
    n = len(records)
    n_a: Counter = Counter()
    n_y: Counter = Counter()
    n_ay: Counter = Counter()
    keys = []
    for r in records:
        a = r.attribute_value(attribute)
        y = r.label
        keys.append((r.subject_id, a, y))
        n_a[a] += 1
        n_y[y] += 1
        n_ay[(a, y)] += 1
    weights = {sid: (n_a[a] * n_y[y]) / (n * n_ay[(a, y)]) for sid, a, y in keys}
    wv = WeightVector(weights=weights, scheme="frequency", attribute=attribute)
    if len(n_ay) == len(n_a) * len(n_y):
        assert abs(wv.mean() - 1.0) <= 1e-9
    else:
        # with empty (subgroup, label) combinations the mean weight drops
        # below 1; the per-cell formula is unchanged
        log.warning("%d of %d (subgroup, label) combinations are empty; "
                    "mean weight %.6f < 1", len(n_a) * len(n_y) - len(n_ay),
                    len(n_a) * len(n_y), wv.mean())
    return wv


@dataclass
class TprTracker:
    """Running per-cell correct/total counts with periodic weight refresh."""

    attribute: str
    epsilon: float = 0.05
    update_period: int = 1
    correct: dict[tuple[str, Label], int] = field(default_factory=dict)
    total: dict[tuple[str, Label], int] = field(default_factory=dict)
    batches_seen: int = 0
    _cached_weights: Optional[dict[tuple[str, Label], float]] = field(default=None, repr=False)
    _last_refresh: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise DataError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.update_period < 1:
            raise DataError("update_period must be >= 1")

    def tpr(self, subgroup: str, cls: Label) -> Optional[float]:
        tot = self.total.get((subgroup, cls), 0)
        if tot == 0:
            return None
        return self.correct.get((subgroup, cls), 0) / tot

    def cell_weights(self) -> dict[tuple[str, Label], float]:
        """1/max(TPR, epsilon) per observed cell; recomputed only when
        update_period batches have passed since the last refresh."""
        due = (
            self._cached_weights is None
            or self.batches_seen - self._last_refresh >= self.update_period
        )
        if due:
            fresh = {}
            for key, tot in self.total.items():
                tpr = self.correct.get(key, 0) / tot
                fresh[key] = 1.0 / max(tpr, self.epsilon)
            self._cached_weights = fresh
            self._last_refresh = self.batches_seen
        return dict(self._cached_weights)

    def cell_weight(self, subgroup: str, cls: Label) -> float:
        return self.cell_weights().get((subgroup, cls), 1.0)


def tracker_update(
    tracker: TprTracker,
    batch: Iterable[tuple[str, Label, bool]],
) -> TprTracker:
    """Fold a batch of (subgroup, class, correct) observations into the tracker."""
    for subgroup, cls, is_correct in batch:
        key = (subgroup, cls)
        tracker.total[key] = tracker.total.get(key, 0) + 1
        if is_correct:
            tracker.correct[key] = tracker.correct.get(key, 0) + 1
    tracker.batches_seen += 1
    return tracker


def dynamic_weights(tracker: TprTracker, records: Sequence[SubjectRecord]) -> WeightVector:
    """Per-sample weights from the tracker's current cell weights.

    Cells never observed by the tracker weigh 1 (neutral).
    """
    if not tracker.total:
        raise DataError("tracker has no observed cells")
    cw = tracker.cell_weights()
    weights = {}
    for r in records:
        key = (r.attribute_value(tracker.attribute), r.label)
        weights[r.subject_id] = cw.get(key, 1.0)
    return WeightVector(weights=weights, scheme="dynamic_tpr", attribute=tracker.attribute)


def weighted_loss(
    per_sample_losses: Sequence[float],
    weights: WeightVector,
    subject_ids: Optional[Sequence[str]] = None,
) -> float:
    """Combine per-sample losses under the scheme's literal form.

    frequency: sum_i w_i * l_i;  dynamic_tpr: (1/N) * sum_i w_i * l_i.
    Losses align with subject_ids when given, else with the weight
    vector's insertion order.
    """
    if subject_ids is None:
        subject_ids = list(weights.weights)
    if len(per_sample_losses) != len(subject_ids):
        raise DataError(
            f"got {len(per_sample_losses)} losses for {len(subject_ids)} subjects"
        )
    total = 0.0
    for loss, sid in zip(per_sample_losses, subject_ids):
        try:
            w = weights.weights[sid]
        except KeyError:
            raise DataError(f"no weight for subject {sid!r}")
        total += w * loss
    if weights.scheme == "dynamic_tpr":
        return total / len(subject_ids)
    return total


def load_weights_jsonl(path: str | Path, scheme: str, attribute: str) -> WeightVector:
    """Read a {subject_id, weight} JSONL produced by WeightVector.write_jsonl."""
    weights = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            weights[str(obj["subject_id"])] = float(obj["weight"])
    return WeightVector(weights=weights, scheme=scheme, attribute=attribute)
