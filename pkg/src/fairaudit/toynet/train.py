"""Deterministic minibatch gradient-descent training for the toy fusion heads.

One integer seed controls weight initialization and batch order, nothing
else, so repeated runs are bit-identical. Batch losses are means of
weighted per-sample cross-entropies (the weighting scheme's literal
sum/mean form lives in reweight.weighted_loss; the trainer normalizes by
batch size for every scheme so learning rates stay comparable between the
baseline and the mitigations).
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from ..errors import DataError, NumericalError
from ..metrics import f1_macro
from ..records import CLASSES, PredictionSet
from ..reweight import TprTracker, WeightVector, tracker_update
from .models import (
    AdversaryConfig,
    AdversaryParams,
    AgfParams,
    LwfParams,
    _adversary_forward,
    agf_backward,
    agf_forward,
    init_adversary,
    init_agf,
    init_lwf,
    lwf_backward,
    lwf_forward,
    training_loss_from_logits,
)
from .scenario import ScenarioData, ScenarioSplit

log = logging.getLogger(__name__)

DEFAULT_EPOCHS = {"agf": 15, "lwf": 5}
DEFAULT_BATCH_SIZE = 4


@dataclass
class DynamicWeighting:
    """Dynamic TPR reweighting: per-cell weights 1/max(TPR, epsilon),
    refreshed once per epoch unless update_period says otherwise."""

    attribute: str
    epsilon: float = 0.05
    update_period: Optional[int] = None  # None: once per epoch


@dataclass
class TrainResult:
    kind: str
    params: Union[AgfParams, LwfParams]
    adversary: Optional[AdversaryParams]
    history: list[dict]
    val_predictions: PredictionSet
    test_predictions: PredictionSet
    train_accuracy: float
    seed: int


def _forward(kind: str, params, split: ScenarioSplit, idx: Optional[np.ndarray] = None):
    if kind == "agf":
        x_lin = split.x_lin if idx is None else split.x_lin[idx]
        x_ac = split.x_ac if idx is None else split.x_ac[idx]
        return agf_forward(params, x_lin, x_ac)
    enc = split.enc_layers if idx is None else split.enc_layers[idx]
    dec = split.dec_layers if idx is None else split.dec_layers[idx]
    return lwf_forward(params, enc, dec)


def _shared_rep(kind: str, cache) -> np.ndarray:
    return cache.shared if kind == "agf" else cache.fused


def _predictions(kind: str, params, split: ScenarioSplit, seed: int) -> PredictionSet:
    if split.n == 0:
        return PredictionSet(entries={}, seed=seed)
    cache = _forward(kind, params, split)
    entries = {sid: cache.probs[i].copy() for i, sid in enumerate(split.subject_ids)}
    return PredictionSet(entries=entries, seed=seed)


def train(
    kind: str,
    data: ScenarioData,
    weights: Union[WeightVector, DynamicWeighting, None] = None,
    adversary: Optional[AdversaryConfig] = None,
    epochs: Optional[int] = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
    learning_rate: float = 0.1,
    seed: int = 0,
    hidden: int = 32,
    linguistic_lr: Optional[float] = None,
    checkpoint: str = "final",
) -> TrainResult:
    """Train one fusion head on the scenario's train split.

    weights: a static WeightVector (frequency scheme), a DynamicWeighting
    config (running-TPR scheme), or None for the unweighted baseline.
    linguistic_lr optionally gives the linguistic projection its own
    learning rate, mirroring the per-component learning-rate split used
    at full scale; it only applies to the adaptive-gating head.
    checkpoint="best_val_f1" keeps the epoch with the highest validation
    macro F1 (earliest on ties) instead of the final parameters.
    """
    if checkpoint not in ("final", "best_val_f1"):
        raise DataError(f"unknown checkpoint rule {checkpoint!r}")
    if checkpoint == "best_val_f1" and data.val.n == 0:
        raise DataError("best_val_f1 checkpointing needs a nonempty validation split")
    if kind not in ("agf", "lwf"):
        raise DataError(f"unknown model kind {kind!r}")
    if data.config.model_kind != kind:
        raise DataError(f"scenario was generated for {data.config.model_kind!r}, not {kind!r}")
    split = data.train
    if split.n == 0:
        raise DataError("empty training split")
    epochs = DEFAULT_EPOCHS[kind] if epochs is None else epochs

    rng = np.random.default_rng(seed)
    if kind == "agf":
        params = init_agf(split.x_lin.shape[1], split.x_ac.shape[1], hidden=hidden, rng=rng)
        rep_dim = hidden
    else:
        params = init_lwf(split.enc_layers.shape[3], hidden=hidden, rng=rng)
        rep_dim = split.enc_layers.shape[3]

    adv_params: Optional[AdversaryParams] = None
    lam = 0.0
    if adversary is not None:
        adv_params = init_adversary(rep_dim, len(data.subgroup_values), rng)
        lam = adversary.lam

    static_weights: Optional[np.ndarray] = None
    if isinstance(weights, WeightVector):
        try:
            static_weights = np.array([weights.weights[sid] for sid in split.subject_ids])
        except KeyError as exc:
            raise DataError(f"weight vector missing subject {exc}")

    n_batches = max(1, int(np.ceil(split.n / batch_size)))
    tracker: Optional[TprTracker] = None
    if isinstance(weights, DynamicWeighting):
        if weights.attribute != data.config.attribute:
            raise DataError("dynamic weighting attribute differs from the scenario attribute")
        tracker = TprTracker(attribute=weights.attribute, epsilon=weights.epsilon,
                             update_period=weights.update_period or n_batches)

    subgroup_names = data.subgroup_values
    history: list[dict] = []
    best_f1 = -1.0
    best_params = None
    best_adv = None
    for epoch in range(epochs):
        order = rng.permutation(split.n)
        epoch_losses = []
        for start in range(0, split.n, batch_size):
            idx = order[start:start + batch_size]
            cache = _forward(kind, params, split, idx)
            targets = split.labels[idx]
            codes = split.subgroup_codes[idx]

            if static_weights is not None:
                w = static_weights[idx]
            elif tracker is not None:
                w = np.array([
                    tracker.cell_weight(subgroup_names[codes[i]], CLASSES[targets[i]])
                    for i in range(len(idx))
                ])
            else:
                w = None

            adv_logits = None
            if adv_params is not None:
                adv_logits, _ = _adversary_forward(_shared_rep(kind, cache), adv_params)
            loss = training_loss_from_logits(cache.score_logits, targets, w,
                                             adv_logits, codes, lam)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"training diverged: loss={loss} at epoch {epoch} sample offset {start} "
                    f"(kind={kind}, lr={learning_rate}, seed={seed})")
            epoch_losses.append(loss)

            backward = agf_backward if kind == "agf" else lwf_backward
            enc_grads, adv_grads = backward(params, cache, targets, w,
                                            adv_params, codes, lam)
            for name, arr in params.items():
                lr = learning_rate
                if kind == "agf" and linguistic_lr is not None and name in ("w_lin", "b_lin"):
                    lr = linguistic_lr
                arr -= lr * enc_grads[name]
            if adv_params is not None:
                for name, arr in adv_params.items():
                    arr -= learning_rate * adv_grads[name]

            if tracker is not None:
                hard = np.argmax(cache.probs, axis=1)
                tracker_update(tracker, [
                    (subgroup_names[codes[i]], CLASSES[targets[i]], bool(hard[i] == targets[i]))
                    for i in range(len(idx))
                ])

        full = _forward(kind, params, split)
        acc = float(np.mean(np.argmax(full.probs, axis=1) == split.labels))
        entry = {"epoch": epoch, "loss": float(np.mean(epoch_losses)), "train_accuracy": acc}
        if checkpoint == "best_val_f1":
            val_cache = _forward(kind, params, data.val)
            val_pred = [CLASSES[i] for i in np.argmax(val_cache.probs, axis=1)]
            val_true = [CLASSES[i] for i in data.val.labels]
            val_f1 = f1_macro(val_pred, val_true)
            entry["val_f1"] = val_f1
            if val_f1 > best_f1:
                best_f1 = val_f1
                best_params = copy.deepcopy(params)
                best_adv = copy.deepcopy(adv_params)
        history.append(entry)

    if checkpoint == "best_val_f1" and best_params is not None:
        params = best_params
        adv_params = best_adv
    full = _forward(kind, params, split)
    final_acc = float(np.mean(np.argmax(full.probs, axis=1) == split.labels))
    return TrainResult(
        kind=kind, params=params, adversary=adv_params, history=history,
        val_predictions=_predictions(kind, params, data.val, seed),
        test_predictions=_predictions(kind, params, data.test, seed),
        train_accuracy=final_acc, seed=seed,
    )


ALPHA_HISTOGRAM_BINS = 20


def modality_weight_report(kind: str, params, data: ScenarioData,
                           split_name: str = "test") -> dict:
    """Summarize fusion weights: per-sample gate distribution for the
    adaptive-gating head, the single global mix and layer weights for the
    layer-weighted head."""
    split = getattr(data, split_name)
    if kind == "agf":
        cache = agf_forward(params, split.x_lin, split.x_ac)
        alpha_lin = cache.alpha[:, 0]
        counts, edges = np.histogram(alpha_lin, bins=ALPHA_HISTOGRAM_BINS, range=(0.0, 1.0))
        return {
            "kind": "agf",
            "n": int(split.n),
            "alpha_linguistic_mean": float(alpha_lin.mean()),
            "alpha_linguistic_std": float(alpha_lin.std()),
            "alpha_acoustic_mean": float(1.0 - alpha_lin.mean()),
            "histogram": {"bin_edges": [float(e) for e in edges],
                          "counts": [int(c) for c in counts]},
        }
    if kind == "lwf":
        from .models import softmax
        return {
            "kind": "lwf",
            "n": int(split.n),
            "alpha_encoder": params.alpha,
            "alpha_decoder": 1.0 - params.alpha,
            "layer_weights_encoder": [float(v) for v in softmax(params.u_enc)],
            "layer_weights_decoder": [float(v) for v in softmax(params.u_dec)],
        }
    raise DataError(f"unknown model kind {kind!r}")
