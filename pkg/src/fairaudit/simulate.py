"""End-to-end bias simulation: generate a scenario, train the baseline and
mitigated variants over several seeds, and audit every variant.

Seeds control training randomness only (initialization and batch order);
the scenario's dataset is fixed by its own config seed, mirroring the
repeated-seed protocol used to put confidence intervals on metrics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .ceo import apply_ceo, fit_ceo
from .errors import DataError
from .metrics import (
    gap_report,
    seed_aggregate,
    subgroup_rates,
    tpr_deviation_sum,
    tpr_spread_sum,
)
from .records import SubjectRecord
from .reweight import frequency_weights
from .toynet import AdversaryConfig, ScenarioConfig, modality_weight_report, synth_scenario, train

log = logging.getLogger(__name__)


@dataclass
class TrainSettings:
    """Hyperparameters shared by every variant inside one simulation."""

    epochs: int = 12
    batch_size: int = 4
    learning_rate: float = 0.05
    hidden: int = 8
    checkpoint: str = "best_val_f1"


def _all_records(data) -> list[SubjectRecord]:
    return data.train.records + data.val.records + data.test.records


def _biased_macro_tpr_gap(report, biased: Optional[str]) -> Optional[float]:
    """Mean macro TPR of the unbiased subgroups minus the biased subgroup's."""
    if biased is None or biased not in report.macro_tpr:
        return None
    others = [v for s, v in report.macro_tpr.items() if s != biased]
    if not others:
        return None
    return float(np.mean(others) - report.macro_tpr[biased])


def run_scenario(
    config: ScenarioConfig,
    seeds: Sequence[int],
    settings: Optional[TrainSettings] = None,
    adversary_lambda: Optional[float] = None,
    grid_step: float = 0.01,
) -> dict:
    """Train baseline, frequency-reweighted, CEO-adjusted (and optionally
    adversarial) variants for every seed and return the comparative audit."""
    if not seeds:
        raise DataError("need at least one seed")
    settings = settings or TrainSettings()
    data = synth_scenario(config)
    attribute = config.attribute
    records = _all_records(data)
    kind = config.model_kind
    biased = config.bias[0].subgroup if config.bias else None
    fw = frequency_weights(data.train.records, attribute)

    per_seed = []
    for seed in seeds:
        common = dict(epochs=settings.epochs, batch_size=settings.batch_size,
                      learning_rate=settings.learning_rate, hidden=settings.hidden,
                      checkpoint=settings.checkpoint)
        baseline = train(kind, data, weights=None, seed=seed, **common)
        base_val_table = subgroup_rates(baseline.val_predictions, records, attribute)
        base_test_table = subgroup_rates(baseline.test_predictions, records, attribute)
        base_test_gap = gap_report(base_test_table)

        reweighted = train(kind, data, weights=fw, seed=seed, **common)
        rew_test_gap = gap_report(subgroup_rates(reweighted.test_predictions, records, attribute))

        ceo_model = fit_ceo(baseline.val_predictions, records, attribute, grid_step=grid_step)
        adj_val = apply_ceo(ceo_model, baseline.val_predictions, records)
        adj_test = apply_ceo(ceo_model, baseline.test_predictions, records)
        ceo_val_table = subgroup_rates(adj_val, records, attribute)
        ceo_test_gap = gap_report(subgroup_rates(adj_test, records, attribute))

        entry = {
            "seed": seed,
            "baseline": {
                "train_accuracy": baseline.train_accuracy,
                "test_gap": base_test_gap.to_dict(),
                "val_tpr_deviation_sum": tpr_deviation_sum(base_val_table),
                "val_tpr_spread_sum": tpr_spread_sum(base_val_table),
                "biased_macro_tpr_gap": _biased_macro_tpr_gap(base_test_gap, biased),
            },
            "reweighted": {
                "train_accuracy": reweighted.train_accuracy,
                "test_gap": rew_test_gap.to_dict(),
                "biased_macro_tpr_gap": _biased_macro_tpr_gap(rew_test_gap, biased),
            },
            "ceo": {
                "test_gap": ceo_test_gap.to_dict(),
                "val_tpr_deviation_sum_pre": tpr_deviation_sum(base_val_table),
                "val_tpr_deviation_sum_post": tpr_deviation_sum(ceo_val_table),
                "val_tpr_spread_sum_pre": tpr_spread_sum(base_val_table),
                "val_tpr_spread_sum_post": tpr_spread_sum(ceo_val_table),
                "threshold_objectives": {
                    cls.value: {"objective": sl.objective, "initial": sl.initial_objective}
                    for cls, sl in ceo_model.thresholds.slices.items()
                },
            },
            "modality_report": modality_weight_report(kind, baseline.params, data),
        }
        if adversary_lambda is not None:
            adv = train(kind, data, weights=None, seed=seed,
                        adversary=AdversaryConfig(lam=adversary_lambda, attribute=attribute),
                        **common)
            entry["adversarial"] = {
                "lambda": adversary_lambda,
                "train_accuracy": adv.train_accuracy,
                "test_gap": gap_report(subgroup_rates(adv.test_predictions, records, attribute)).to_dict(),
            }
        per_seed.append(entry)

    def collect(pathfn) -> list[float]:
        return [pathfn(e) for e in per_seed]

    aggregate: dict = {}
    if len(seeds) >= 2:
        for label, path in (
            ("baseline_eoo_gap", lambda e: e["baseline"]["test_gap"]["eoo_gap"]),
            ("reweighted_eoo_gap", lambda e: e["reweighted"]["test_gap"]["eoo_gap"]),
            ("ceo_eoo_gap", lambda e: e["ceo"]["test_gap"]["eoo_gap"]),
            ("ceo_val_tpr_deviation_post", lambda e: e["ceo"]["val_tpr_deviation_sum_post"]),
        ):
            agg = seed_aggregate(collect(path))
            aggregate[label] = {"mean": agg.mean, "ci95_half_width": agg.ci95_half_width}
    aggregate["reweighting_reduced_eoo_gap_in"] = sum(
        1 for e in per_seed
        if e["reweighted"]["test_gap"]["eoo_gap"] < e["baseline"]["test_gap"]["eoo_gap"])
    aggregate["ceo_reduced_val_tpr_deviation_in"] = sum(
        1 for e in per_seed
        if e["ceo"]["val_tpr_deviation_sum_post"] < e["ceo"]["val_tpr_deviation_sum_pre"])

    return {
        "scenario": config.to_dict(),
        "attribute": attribute,
        "model_kind": kind,
        "seeds": list(seeds),
        "biased_subgroup": biased,
        "settings": {"epochs": settings.epochs, "batch_size": settings.batch_size,
                     "learning_rate": settings.learning_rate, "hidden": settings.hidden,
                     "checkpoint": settings.checkpoint},
        "per_seed": per_seed,
        "aggregate": aggregate,
    }
