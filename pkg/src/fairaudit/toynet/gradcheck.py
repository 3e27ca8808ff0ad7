"""Central finite-difference validation of every manual gradient.

Encoder-side parameters are checked against the composite objective
class_loss - lambda * adversary_loss (the scalar whose gradient their
update uses under gradient reversal); adversary parameters are checked
against the plain adversary loss. Large arrays are subsampled to a seeded
random set of coordinates so the check stays fast at full hidden width.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import DataError
from .models import (
    AdversaryParams,
    AgfParams,
    LwfParams,
    _adversary_forward,
    _cross_entropy,
    agf_backward,
    agf_forward,
    lwf_backward,
    lwf_forward,
    training_loss_from_logits,
)

MAX_EXHAUSTIVE = 400
SUBSET_COORDS = 200


def _forward_losses(kind: str, params, batch: dict,
                    adversary: Optional[AdversaryParams], lam: float) -> tuple[float, float]:
    """(composite objective, adversary loss) at the current parameters."""
    if kind == "agf":
        cache = agf_forward(params, batch["x_lin"], batch["x_ac"])
        rep = cache.shared
    elif kind == "lwf":
        cache = lwf_forward(params, batch["enc_layers"], batch["dec_layers"])
        rep = cache.fused
    else:
        raise DataError(f"unknown model kind {kind!r}")
    adv_logits = None
    adv_loss = 0.0
    if adversary is not None:
        adv_logits, _ = _adversary_forward(rep, adversary)
        adv_loss = _cross_entropy(adv_logits, np.asarray(batch["subgroup_codes"], dtype=int))
    composite = training_loss_from_logits(
        cache.score_logits, batch["targets"], batch.get("sample_weights"),
        adv_logits, batch.get("subgroup_codes"), lam)
    return composite, adv_loss


def _coords(arr: np.ndarray, rng: np.random.Generator) -> list[tuple]:
    flat_size = arr.size
    if flat_size <= MAX_EXHAUSTIVE:
        flat_idx = np.arange(flat_size)
    else:
        flat_idx = rng.choice(flat_size, size=SUBSET_COORDS, replace=False)
    return [np.unravel_index(int(i), arr.shape) for i in flat_idx]


def finite_diff_check(
    kind: str,
    params,
    batch: dict,
    h: float = 1e-5,
    adversary: Optional[AdversaryParams] = None,
    lam: float = 0.0,
    coord_seed: int = 0,
) -> float:
    """Maximum relative error between analytic and central-difference gradients.

    Relative error per coordinate is |ga - gn| / max(|ga|, |gn|, 1e-8).
    """
    if not 1e-7 <= h <= 1e-3:
        raise DataError(f"step size h={h} outside [1e-7, 1e-3]")
    rng = np.random.default_rng(coord_seed)

    if kind == "agf":
        cache = agf_forward(params, batch["x_lin"], batch["x_ac"])
        enc_grads, adv_grads = agf_backward(
            params, cache, np.asarray(batch["targets"], dtype=int),
            batch.get("sample_weights"), adversary, batch.get("subgroup_codes"), lam)
    elif kind == "lwf":
        cache = lwf_forward(params, batch["enc_layers"], batch["dec_layers"])
        enc_grads, adv_grads = lwf_backward(
            params, cache, np.asarray(batch["targets"], dtype=int),
            batch.get("sample_weights"), adversary, batch.get("subgroup_codes"), lam)
    else:
        raise DataError(f"unknown model kind {kind!r}")

    worst = 0.0

    def check_block(arr: np.ndarray, analytic: np.ndarray, objective: str) -> None:
        nonlocal worst
        for coord in _coords(arr, rng):
            original = arr[coord]
            arr[coord] = original + h
            up = _forward_losses(kind, params, batch, adversary, lam)
            arr[coord] = original - h
            down = _forward_losses(kind, params, batch, adversary, lam)
            arr[coord] = original
            sel = 0 if objective == "composite" else 1
            g_num = (up[sel] - down[sel]) / (2.0 * h)
            g_ana = float(analytic[coord])
            err = abs(g_ana - g_num) / max(abs(g_ana), abs(g_num), 1e-8)
            worst = max(worst, err)

    for name, arr in params.items():
        check_block(arr, enc_grads[name], "composite")
    if adversary is not None:
        for name, arr in adversary.items():
            check_block(arr, adv_grads[name], "adversary")
    return worst
