"""Performance and fairness metrics for multiclass classifiers.

Fairness follows the one-vs-rest convention: for every class c and
subgroup a of a protected attribute,

    TPR(c, a) = P(pred = c | true = c, subgroup = a)
    FPR(c, a) = P(pred = c | true != c, subgroup = a)

Cells with an empty denominator are flagged undefined and excluded from
macro averages instead of being zero-filled; zero-filling would fabricate
disparities for subgroups that simply lack a class (the single-label
Mandarin subgroup is the motivating real case).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import DataError
from .records import CLASSES, Label, PredictionSet, PROTECTED_ATTRIBUTES, SubjectRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RateCell:
    """One-vs-rest confusion counts for a (class, subgroup) cell."""

    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def tpr(self) -> Optional[float]:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) > 0 else None

    @property
    def fpr(self) -> Optional[float]:
        return self.fp / (self.fp + self.tn) if (self.fp + self.tn) > 0 else None

    @property
    def subgroup_size(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


@dataclass
class RateTable:
    """TPR/FPR cells for every (class, subgroup) of one protected attribute."""

    attribute: str
    cells: dict[tuple[Label, str], RateCell]

    def subgroups(self) -> list[str]:
        return sorted({a for (_, a) in self.cells})

    def cell(self, cls: Label, subgroup: str) -> RateCell:
        return self.cells[(cls, subgroup)]

    def to_dict(self) -> dict:
        out: dict = {"attribute": self.attribute, "cells": {}}
        for (cls, sub), cell in sorted(self.cells.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
            out["cells"][f"{cls.value}|{sub}"] = {
                "tp": cell.tp, "fn": cell.fn, "fp": cell.fp, "tn": cell.tn,
                "tpr": cell.tpr, "fpr": cell.fpr,
            }
        return out


@dataclass
class MacroRates:
    """Macro-averaged rates for one subgroup, over defined cells only."""

    macro_tpr: Optional[float]
    macro_fpr: Optional[float]
    skipped_tpr_cells: int
    skipped_fpr_cells: int


@dataclass
class GapReport:
    """Equal-opportunity and equalized-odds gap summary for one attribute."""

    attribute: str
    per_class_tpr_gap: dict[Label, Optional[float]]
    per_class_fpr_gap: dict[Label, Optional[float]]
    macro_tpr: dict[str, float]
    macro_fpr: dict[str, float]
    eoo_gap: float
    eo_gap: float

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "per_class_tpr_gap": {c.value: g for c, g in self.per_class_tpr_gap.items()},
            "per_class_fpr_gap": {c.value: g for c, g in self.per_class_fpr_gap.items()},
            "macro_tpr": dict(sorted(self.macro_tpr.items())),
            "macro_fpr": dict(sorted(self.macro_fpr.items())),
            "eoo_gap": self.eoo_gap,
            "eo_gap": self.eo_gap,
        }


def subgroup_rates(
    preds: PredictionSet,
    records: Sequence[SubjectRecord],
    attribute: str,
) -> RateTable:
    """One-vs-rest confusion counts per (class, subgroup)."""
    if attribute not in PROTECTED_ATTRIBUTES:
        raise DataError(f"{attribute!r} is not a protected attribute (expected one of {PROTECTED_ATTRIBUTES})")
    by_id = {r.subject_id: r for r in records}
    missing = [sid for sid in preds.entries if sid not in by_id]
    if missing:
        raise DataError(f"{len(missing)} prediction(s) without a matching record, e.g. {missing[:5]}")

    counts: dict[tuple[Label, str], list[int]] = {}
    for sid in preds.entries:
        rec = by_id[sid]
        sub = rec.attribute_value(attribute)
        pred = preds.hard_pred(sid)
        for cls in CLASSES:
            tp, fn, fp, tn = counts.setdefault((cls, sub), [0, 0, 0, 0])
            if rec.label is cls:
                if pred is cls:
                    tp += 1
                else:
                    fn += 1
            else:
                if pred is cls:
                    fp += 1
                else:
                    tn += 1
            counts[(cls, sub)] = [tp, fn, fp, tn]

    cells = {key: RateCell(*vals) for key, vals in counts.items()}
    return RateTable(attribute=attribute, cells=cells)


def macro_average(table: RateTable) -> dict[str, MacroRates]:
    """Unweighted per-subgroup mean of TPR and FPR over defined classes.

    Subgroups whose cells are all undefined for a metric get None there;
    a subgroup undefined for both metrics is omitted with a warning.
    """
    if not table.cells:
        raise DataError("empty rate table")
    out: dict[str, MacroRates] = {}
    for sub in table.subgroups():
        tprs = [table.cells[(c, sub)].tpr for c in CLASSES if (c, sub) in table.cells]
        fprs = [table.cells[(c, sub)].fpr for c in CLASSES if (c, sub) in table.cells]
        def_tpr = [v for v in tprs if v is not None]
        def_fpr = [v for v in fprs if v is not None]
        if not def_tpr and not def_fpr:
            log.warning("subgroup %r has no defined cells; omitted from macro averages", sub)
            continue
        out[sub] = MacroRates(
            macro_tpr=sum(def_tpr) / len(def_tpr) if def_tpr else None,
            macro_fpr=sum(def_fpr) / len(def_fpr) if def_fpr else None,
            skipped_tpr_cells=len(tprs) - len(def_tpr),
            skipped_fpr_cells=len(fprs) - len(def_fpr),
        )
    return out


def gap_report(table: RateTable) -> GapReport:
    """Max-minus-min disparity summary over subgroups.

    eoo_gap is the spread of macro TPR; eo_gap adds the spread of macro FPR.
    """
    macros = macro_average(table)
    tpr_by_sub = {s: m.macro_tpr for s, m in macros.items() if m.macro_tpr is not None}
    fpr_by_sub = {s: m.macro_fpr for s, m in macros.items() if m.macro_fpr is not None}
    if len(tpr_by_sub) < 2:
        raise DataError("gap report needs at least 2 subgroups with defined macro TPR")

    per_class_tpr_gap: dict[Label, Optional[float]] = {}
    per_class_fpr_gap: dict[Label, Optional[float]] = {}
    for cls in CLASSES:
        tprs = [c.tpr for (k, s), c in table.cells.items() if k is cls and c.tpr is not None]
        fprs = [c.fpr for (k, s), c in table.cells.items() if k is cls and c.fpr is not None]
        per_class_tpr_gap[cls] = (max(tprs) - min(tprs)) if len(tprs) >= 2 else None
        per_class_fpr_gap[cls] = (max(fprs) - min(fprs)) if len(fprs) >= 2 else None

    eoo_gap = max(tpr_by_sub.values()) - min(tpr_by_sub.values())
    fpr_spread = (max(fpr_by_sub.values()) - min(fpr_by_sub.values())) if len(fpr_by_sub) >= 2 else 0.0
    return GapReport(
        attribute=table.attribute,
        per_class_tpr_gap=per_class_tpr_gap,
        per_class_fpr_gap=per_class_fpr_gap,
        macro_tpr={s: v for s, v in sorted(tpr_by_sub.items())},
        macro_fpr={s: v for s, v in sorted(fpr_by_sub.items())},
        eoo_gap=eoo_gap,
        eo_gap=eoo_gap + fpr_spread,
    )


def tpr_deviation_sum(table: RateTable) -> float:
    """Sum over classes of sum over subgroups of |TPR - class mean TPR|,
    defined cells only (the TPR half of the equalized-odds objective)."""
    total = 0.0
    for cls in CLASSES:
        tprs = [cell.tpr for (c, _), cell in table.cells.items()
                if c is cls and cell.tpr is not None]
        if len(tprs) >= 2:
            mean = sum(tprs) / len(tprs)
            total += sum(abs(t - mean) for t in tprs)
    return total


def tpr_spread_sum(table: RateTable) -> float:
    """Sum over classes of (max - min) TPR across subgroups, defined cells only."""
    total = 0.0
    for cls in CLASSES:
        tprs = [cell.tpr for (c, _), cell in table.cells.items()
                if c is cls and cell.tpr is not None]
        if len(tprs) >= 2:
            total += max(tprs) - min(tprs)
    return total


# ---------------------------------------------------------------------------
# Performance metrics

def f1_macro(pred_labels: Sequence[Label], true_labels: Sequence[Label]) -> float:
    """Macro F1 over classes with support (classes absent from truth are skipped)."""
    if len(pred_labels) != len(true_labels):
        raise DataError("prediction/label length mismatch")
    f1s = []
    for cls in CLASSES:
        tp = sum(1 for p, t in zip(pred_labels, true_labels) if p is cls and t is cls)
        fp = sum(1 for p, t in zip(pred_labels, true_labels) if p is cls and t is not cls)
        fn = sum(1 for p, t in zip(pred_labels, true_labels) if p is not cls and t is cls)
        if tp + fn == 0:
            continue
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    if not f1s:
        raise DataError("no class has support")
    return sum(f1s) / len(f1s)


def _binary_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Mann-Whitney AUC with midrank tie handling."""
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC undefined: needs at least one positive and one negative")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=float)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(ranks[positives].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_ovr(probs: np.ndarray, labels: Sequence[Label]) -> dict[Label, float]:
    """One-vs-rest ROC AUC per class from the class probability columns."""
    probs = np.asarray(probs, dtype=float)
    out = {}
    for k, cls in enumerate(CLASSES):
        positives = np.array([t is cls for t in labels])
        out[cls] = _binary_auc(probs[:, k], positives)
    return out


def _binary_auprc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Step-interpolated area under the precision-recall curve.

    Sweeps thresholds over distinct scores (descending) and accumulates
    (recall step) * precision, the usual average-precision integral.
    """
    n_pos = int(positives.sum())
    if n_pos == 0 or n_pos == len(positives):
        raise DataError("AUPRC undefined: needs at least one positive and one negative")
    order = np.argsort(-scores, kind="mergesort")
    sorted_pos = positives[order]
    sorted_scores = scores[order]
    area = 0.0
    tp = 0
    total = 0
    prev_recall = 0.0
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        tp += int(sorted_pos[i:j + 1].sum())
        total += j - i + 1
        recall = tp / n_pos
        precision = tp / total
        area += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return area


def auprc_ovr(probs: np.ndarray, labels: Sequence[Label]) -> dict[Label, float]:
    """One-vs-rest AUPRC per class."""
    probs = np.asarray(probs, dtype=float)
    out = {}
    for k, cls in enumerate(CLASSES):
        positives = np.array([t is cls for t in labels])
        out[cls] = _binary_auprc(probs[:, k], positives)
    return out


LOG_LOSS_CLAMP = 1e-15


def log_loss_multiclass(probs: np.ndarray, labels: Sequence[Label]) -> float:
    """Mean negative log-likelihood with probabilities clamped to [1e-15, 1-1e-15]."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape[0] != len(labels):
        raise DataError("probability/label length mismatch")
    idx = np.array([CLASSES.index(t) for t in labels])
    p_true = np.clip(probs[np.arange(len(labels)), idx], LOG_LOSS_CLAMP, 1.0 - LOG_LOSS_CLAMP)
    return float(-np.mean(np.log(p_true)))


def wer(ref_tokens: Sequence[str], hyp_tokens: Sequence[str]) -> float:
    """Word error rate: minimal (sub + del + ins) / len(ref). May exceed 1."""
    if len(ref_tokens) == 0:
        raise DataError("WER undefined for empty reference")
    n, m = len(ref_tokens), len(hyp_tokens)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ref_tokens[i - 1] != hyp_tokens[j - 1])
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[m] / n


@dataclass(frozen=True)
class SeedAggregate:
    mean: float
    ci95_half_width: float
    n: int
    method: str


def seed_aggregate(values: Sequence[float], method: str = "t") -> SeedAggregate:
    """Mean and 95% confidence half-width over per-seed metric values.

    Default is the t interval with n-1 degrees of freedom; method="normal"
    uses the 1.96-sigma normal interval instead.
    """
    vals = np.asarray(values, dtype=float)
    if vals.size < 2:
        raise DataError("seed aggregation needs at least 2 values")
    mean = float(vals.mean())
    sem = float(vals.std(ddof=1) / np.sqrt(vals.size))
    if method == "t":
        crit = float(stats.t.ppf(0.975, vals.size - 1))
    elif method == "normal":
        crit = float(stats.norm.ppf(0.975))
    else:
        raise DataError(f"unknown CI method {method!r}")
    return SeedAggregate(mean=mean, ci95_half_width=crit * sem, n=vals.size, method=method)
