"""Two fusion heads with fully manual forward/backward passes.

Adaptive gating (AGF): each modality is projected to a tanh hidden vector,
a softmax gate over the concatenated hiddens yields per-sample modality
weights, a shared linear head scores each modality, and the gated score
mix is softmaxed into class probabilities.

Layer-weighted fusion (LWF): softmax-normalized scalars weight 7 encoder
and 7 decoder layer stacks, each weighted sum is mean-pooled over frames,
a sigmoid-gated convex mix fuses the two embeddings, and a tanh hidden
plus linear head produce class probabilities.

The adversary is a single linear head on the shared representation
(AGF: the gate-weighted hidden mix, LWF: the fused embedding). Gradient
routing follows the gradient-reversal construction: adversary parameters
receive the plain adversary gradient, while everything upstream of the
shared representation receives exactly -lambda times the unreversed
adversary gradient on top of its task gradient. Gradients are kept in
plain dicts keyed by parameter name so the finite-difference checker and
the trainer can stay generic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import DataError, NumericalError

N_CLASSES = 3
N_LAYERS = 7


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _logsumexp(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1)
    return m + np.log(np.exp(logits - m[..., None]).sum(axis=-1))


def _cross_entropy(logits: np.ndarray, targets: np.ndarray,
                   sample_weights: Optional[np.ndarray] = None) -> float:
    """Mean (optionally weighted) cross-entropy from logits."""
    n = logits.shape[0]
    nll = _logsumexp(logits) - logits[np.arange(n), targets]
    if sample_weights is not None:
        nll = nll * sample_weights
    return float(nll.mean())


def grl_grad(upstream_grad: np.ndarray, lam: float) -> np.ndarray:
    """Gradient-reversal backward rule: multiply the incoming gradient by -lambda.

    The forward pass of the reversal layer is the identity, so only the
    backward rule exists as code.
    """
    return -lam * np.asarray(upstream_grad)


@dataclass
class AdversaryConfig:
    """Adversarial debiasing settings; lam=0.05 is the tuned default."""

    lam: float = 0.05
    attribute: str = "age_group"

    def __post_init__(self) -> None:
        if not np.isfinite(self.lam) or self.lam < 0:
            raise DataError(f"lambda must be finite and >= 0, got {self.lam}")


@dataclass
class AdversaryParams:
    w_adv: np.ndarray  # (n_groups, rep_dim)
    b_adv: np.ndarray  # (n_groups,)

    def items(self):
        return [("w_adv", self.w_adv), ("b_adv", self.b_adv)]


def init_adversary(rep_dim: int, n_groups: int, rng: np.random.Generator) -> AdversaryParams:
    return AdversaryParams(
        w_adv=rng.normal(0.0, 1.0 / np.sqrt(rep_dim), size=(n_groups, rep_dim)),
        b_adv=np.zeros(n_groups),
    )


def _adversary_forward(rep: np.ndarray, adv: AdversaryParams) -> tuple[np.ndarray, np.ndarray]:
    logits = rep @ adv.w_adv.T + adv.b_adv
    return logits, softmax(logits)


# ---------------------------------------------------------------------------
# Adaptive gating fusion

@dataclass
class AgfParams:
    """Projections, shared output head and gate of the adaptive-gating model."""

    w_lin: np.ndarray   # (hidden, d_linguistic)
    b_lin: np.ndarray   # (hidden,)
    w_ac: np.ndarray    # (hidden, d_acoustic)
    b_ac: np.ndarray    # (hidden,)
    w_out: np.ndarray   # (3, hidden), shared across modalities
    b_out: np.ndarray   # (3,)
    w_gate: np.ndarray  # (2, 2*hidden)
    b_gate: np.ndarray  # (2,)

    def items(self):
        return [(name, getattr(self, name)) for name in
                ("w_lin", "b_lin", "w_ac", "b_ac", "w_out", "b_out", "w_gate", "b_gate")]

    @property
    def hidden(self) -> int:
        return self.w_lin.shape[0]


DEFAULT_HIDDEN = 128


def init_agf(d_linguistic: int, d_acoustic: int, hidden: int = DEFAULT_HIDDEN,
             rng: Optional[np.random.Generator] = None) -> AgfParams:
    rng = rng or np.random.default_rng(0)
    def w(rows, cols):
        return rng.normal(0.0, 1.0 / np.sqrt(cols), size=(rows, cols))
    return AgfParams(
        w_lin=w(hidden, d_linguistic), b_lin=np.zeros(hidden),
        w_ac=w(hidden, d_acoustic), b_ac=np.zeros(hidden),
        w_out=w(N_CLASSES, hidden), b_out=np.zeros(N_CLASSES),
        w_gate=w(2, 2 * hidden), b_gate=np.zeros(2),
    )


@dataclass
class AgfCache:
    x_lin: np.ndarray
    x_ac: np.ndarray
    h_lin: np.ndarray
    h_ac: np.ndarray
    o_lin: np.ndarray
    o_ac: np.ndarray
    alpha: np.ndarray       # (n, 2): columns = (linguistic, acoustic)
    score_logits: np.ndarray
    probs: np.ndarray
    shared: np.ndarray      # gate-weighted hidden mix, adversary input


def agf_forward(params: AgfParams, x_lin: np.ndarray, x_ac: np.ndarray) -> AgfCache:
    x_lin = np.asarray(x_lin, dtype=float)
    x_ac = np.asarray(x_ac, dtype=float)
    if x_lin.ndim != 2 or x_ac.ndim != 2:
        raise DataError("inputs must be 2-D (batch, features)")
    if x_lin.shape[1] != params.w_lin.shape[1] or x_ac.shape[1] != params.w_ac.shape[1]:
        raise DataError(
            f"input dims ({x_lin.shape[1]}, {x_ac.shape[1]}) do not match params "
            f"({params.w_lin.shape[1]}, {params.w_ac.shape[1]})")
    if x_lin.shape[0] != x_ac.shape[0]:
        raise DataError("modality batches differ in length")
    h_lin = np.tanh(x_lin @ params.w_lin.T + params.b_lin)
    h_ac = np.tanh(x_ac @ params.w_ac.T + params.b_ac)
    gate_logits = np.concatenate([h_lin, h_ac], axis=1) @ params.w_gate.T + params.b_gate
    alpha = softmax(gate_logits)
    o_lin = h_lin @ params.w_out.T + params.b_out
    o_ac = h_ac @ params.w_out.T + params.b_out
    scores = alpha[:, 0:1] * o_lin + alpha[:, 1:2] * o_ac
    probs = softmax(scores)
    shared = alpha[:, 0:1] * h_lin + alpha[:, 1:2] * h_ac
    return AgfCache(x_lin=x_lin, x_ac=x_ac, h_lin=h_lin, h_ac=h_ac,
                    o_lin=o_lin, o_ac=o_ac, alpha=alpha,
                    score_logits=scores, probs=probs, shared=shared)


def _agf_zero_grads(params: AgfParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


def _agf_encoder_backward(params: AgfParams, cache: AgfCache,
                          d_scores: Optional[np.ndarray],
                          d_shared: Optional[np.ndarray]) -> dict[str, np.ndarray]:
    """Backprop to all AGF parameters from gradients at the class-score
    logits and/or at the shared representation."""
    n = cache.h_lin.shape[0]
    g = _agf_zero_grads(params)
    dh_lin = np.zeros_like(cache.h_lin)
    dh_ac = np.zeros_like(cache.h_ac)
    d_alpha = np.zeros((n, 2))

    if d_scores is not None:
        do_lin = cache.alpha[:, 0:1] * d_scores
        do_ac = cache.alpha[:, 1:2] * d_scores
        d_alpha[:, 0] += (d_scores * cache.o_lin).sum(axis=1)
        d_alpha[:, 1] += (d_scores * cache.o_ac).sum(axis=1)
        g["w_out"] += do_lin.T @ cache.h_lin + do_ac.T @ cache.h_ac
        g["b_out"] += (do_lin + do_ac).sum(axis=0)
        dh_lin += do_lin @ params.w_out
        dh_ac += do_ac @ params.w_out

    if d_shared is not None:
        dh_lin += cache.alpha[:, 0:1] * d_shared
        dh_ac += cache.alpha[:, 1:2] * d_shared
        d_alpha[:, 0] += (d_shared * cache.h_lin).sum(axis=1)
        d_alpha[:, 1] += (d_shared * cache.h_ac).sum(axis=1)

    # softmax gate backward
    d_gate = cache.alpha * (d_alpha - (d_alpha * cache.alpha).sum(axis=1, keepdims=True))
    hcat = np.concatenate([cache.h_lin, cache.h_ac], axis=1)
    g["w_gate"] += d_gate.T @ hcat
    g["b_gate"] += d_gate.sum(axis=0)
    dhcat = d_gate @ params.w_gate
    hidden = params.hidden
    dh_lin += dhcat[:, :hidden]
    dh_ac += dhcat[:, hidden:]

    da_lin = dh_lin * (1.0 - cache.h_lin ** 2)
    da_ac = dh_ac * (1.0 - cache.h_ac ** 2)
    g["w_lin"] += da_lin.T @ cache.x_lin
    g["b_lin"] += da_lin.sum(axis=0)
    g["w_ac"] += da_ac.T @ cache.x_ac
    g["b_ac"] += da_ac.sum(axis=0)
    return g


def agf_backward(
    params: AgfParams,
    cache: AgfCache,
    targets: np.ndarray,
    sample_weights: Optional[np.ndarray] = None,
    adversary: Optional[AdversaryParams] = None,
    subgroup_codes: Optional[np.ndarray] = None,
    lam: float = 0.0,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Gradients of the training objective.

    Returns (encoder grads, adversary grads). Encoder parameters get
    task gradient + grl_grad(unreversed adversary gradient, lam);
    adversary parameters get the plain adversary gradient.
    """
    n = cache.probs.shape[0]
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    d_scores = (cache.probs - _onehot(targets, N_CLASSES)) * (w / n)[:, None]
    enc = _agf_encoder_backward(params, cache, d_scores, None)

    adv_grads: dict[str, np.ndarray] = {}
    if adversary is not None:
        if subgroup_codes is None:
            raise DataError("adversary requires subgroup codes")
        _, q = _adversary_forward(cache.shared, adversary)
        dq = (q - _onehot(subgroup_codes, adversary.b_adv.shape[0])) / n
        adv_grads["w_adv"] = dq.T @ cache.shared
        adv_grads["b_adv"] = dq.sum(axis=0)
        d_shared = dq @ adversary.w_adv
        unreversed = _agf_encoder_backward(params, cache, None, d_shared)
        for name in enc:
            enc[name] = enc[name] + grl_grad(unreversed[name], lam)
    return enc, adv_grads


def agf_adversary_encoder_grads(
    params: AgfParams,
    cache: AgfCache,
    adversary: AdversaryParams,
    subgroup_codes: np.ndarray,
    lam: float,
    reverse: bool = True,
) -> dict[str, np.ndarray]:
    """Encoder-side gradient of the adversary loss alone, with or without
    the reversal multiplier (for auditing the GRL identity)."""
    n = cache.shared.shape[0]
    _, q = _adversary_forward(cache.shared, adversary)
    dq = (q - _onehot(subgroup_codes, adversary.b_adv.shape[0])) / n
    d_shared = dq @ adversary.w_adv
    unreversed = _agf_encoder_backward(params, cache, None, d_shared)
    if not reverse:
        return unreversed
    return {name: grl_grad(arr, lam) for name, arr in unreversed.items()}


# ---------------------------------------------------------------------------
# Layer-weighted fusion

@dataclass
class LwfParams:
    """Layer weighting logits, fusion gate and classification head."""

    u_enc: np.ndarray   # (7,) encoder layer logits, softmax-normalized in forward
    u_dec: np.ndarray   # (7,)
    fusion_logit: np.ndarray  # scalar array shape (1,), alpha = sigmoid
    w_hid: np.ndarray   # (hidden, dim)
    b_hid: np.ndarray   # (hidden,)
    w_cls: np.ndarray   # (3, hidden)
    b_cls: np.ndarray   # (3,)

    def items(self):
        return [(name, getattr(self, name)) for name in
                ("u_enc", "u_dec", "fusion_logit", "w_hid", "b_hid", "w_cls", "b_cls")]

    @property
    def alpha(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.fusion_logit[0])))


def init_lwf(dim: int, hidden: int = DEFAULT_HIDDEN,
             rng: Optional[np.random.Generator] = None) -> LwfParams:
    rng = rng or np.random.default_rng(0)
    def w(rows, cols):
        return rng.normal(0.0, 1.0 / np.sqrt(cols), size=(rows, cols))
    return LwfParams(
        u_enc=np.zeros(N_LAYERS), u_dec=np.zeros(N_LAYERS),
        fusion_logit=np.zeros(1),
        w_hid=w(hidden, dim), b_hid=np.zeros(hidden),
        w_cls=w(N_CLASSES, hidden), b_cls=np.zeros(N_CLASSES),
    )


@dataclass
class LwfCache:
    pooled_enc: np.ndarray  # (n, 7, dim) frame-mean of each layer
    pooled_dec: np.ndarray
    w_enc: np.ndarray       # (7,)
    w_dec: np.ndarray
    emb_enc: np.ndarray     # (n, dim)
    emb_dec: np.ndarray
    alpha: float
    fused: np.ndarray       # (n, dim), adversary input
    hidden_act: np.ndarray  # (n, hidden)
    score_logits: np.ndarray
    probs: np.ndarray


def lwf_forward(params: LwfParams, enc_layers: np.ndarray, dec_layers: np.ndarray) -> LwfCache:
    enc_layers = np.asarray(enc_layers, dtype=float)
    dec_layers = np.asarray(dec_layers, dtype=float)
    for name, stack in (("encoder", enc_layers), ("decoder", dec_layers)):
        if stack.ndim != 4 or stack.shape[1] != N_LAYERS:
            raise DataError(f"{name} stack must have shape (n, {N_LAYERS}, frames, dim), got {stack.shape}")
    if enc_layers.shape[0] != dec_layers.shape[0] or enc_layers.shape[3] != dec_layers.shape[3]:
        raise DataError("encoder/decoder stacks disagree in batch or embedding dim")
    w_enc = softmax(params.u_enc)
    w_dec = softmax(params.u_dec)
    pooled_enc = enc_layers.mean(axis=2)  # (n, 7, dim)
    pooled_dec = dec_layers.mean(axis=2)
    emb_enc = np.einsum("nld,l->nd", pooled_enc, w_enc)
    emb_dec = np.einsum("nld,l->nd", pooled_dec, w_dec)
    alpha = float(1.0 / (1.0 + np.exp(-params.fusion_logit[0])))
    fused = alpha * emb_enc + (1.0 - alpha) * emb_dec
    hidden_act = np.tanh(fused @ params.w_hid.T + params.b_hid)
    score_logits = hidden_act @ params.w_cls.T + params.b_cls
    probs = softmax(score_logits)
    return LwfCache(pooled_enc=pooled_enc, pooled_dec=pooled_dec, w_enc=w_enc, w_dec=w_dec,
                    emb_enc=emb_enc, emb_dec=emb_dec, alpha=alpha, fused=fused,
                    hidden_act=hidden_act, score_logits=score_logits, probs=probs)


def _lwf_zero_grads(params: LwfParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


def _lwf_encoder_backward(params: LwfParams, cache: LwfCache,
                          d_logits: Optional[np.ndarray],
                          d_fused_extra: Optional[np.ndarray]) -> dict[str, np.ndarray]:
    g = _lwf_zero_grads(params)
    d_fused = np.zeros_like(cache.fused)
    if d_logits is not None:
        g["w_cls"] += d_logits.T @ cache.hidden_act
        g["b_cls"] += d_logits.sum(axis=0)
        d_hidden = d_logits @ params.w_cls
        d_act = d_hidden * (1.0 - cache.hidden_act ** 2)
        g["w_hid"] += d_act.T @ cache.fused
        g["b_hid"] += d_act.sum(axis=0)
        d_fused += d_act @ params.w_hid
    if d_fused_extra is not None:
        d_fused += d_fused_extra

    alpha = cache.alpha
    d_emb_enc = alpha * d_fused
    d_emb_dec = (1.0 - alpha) * d_fused
    d_alpha = float((d_fused * (cache.emb_enc - cache.emb_dec)).sum())
    g["fusion_logit"] += np.array([d_alpha * alpha * (1.0 - alpha)])

    dw_enc = np.einsum("nd,nld->l", d_emb_enc, cache.pooled_enc)
    dw_dec = np.einsum("nd,nld->l", d_emb_dec, cache.pooled_dec)
    g["u_enc"] += cache.w_enc * (dw_enc - float(dw_enc @ cache.w_enc))
    g["u_dec"] += cache.w_dec * (dw_dec - float(dw_dec @ cache.w_dec))
    return g


def lwf_backward(
    params: LwfParams,
    cache: LwfCache,
    targets: np.ndarray,
    sample_weights: Optional[np.ndarray] = None,
    adversary: Optional[AdversaryParams] = None,
    subgroup_codes: Optional[np.ndarray] = None,
    lam: float = 0.0,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Gradients of the training objective; same contract as agf_backward."""
    n = cache.probs.shape[0]
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    d_logits = (cache.probs - _onehot(targets, N_CLASSES)) * (w / n)[:, None]
    enc = _lwf_encoder_backward(params, cache, d_logits, None)

    adv_grads: dict[str, np.ndarray] = {}
    if adversary is not None:
        if subgroup_codes is None:
            raise DataError("adversary requires subgroup codes")
        _, q = _adversary_forward(cache.fused, adversary)
        dq = (q - _onehot(subgroup_codes, adversary.b_adv.shape[0])) / n
        adv_grads["w_adv"] = dq.T @ cache.fused
        adv_grads["b_adv"] = dq.sum(axis=0)
        d_fused = dq @ adversary.w_adv
        unreversed = _lwf_encoder_backward(params, cache, None, d_fused)
        for name in enc:
            enc[name] = enc[name] + grl_grad(unreversed[name], lam)
    return enc, adv_grads


def lwf_adversary_encoder_grads(
    params: LwfParams,
    cache: LwfCache,
    adversary: AdversaryParams,
    subgroup_codes: np.ndarray,
    lam: float,
    reverse: bool = True,
) -> dict[str, np.ndarray]:
    n = cache.fused.shape[0]
    _, q = _adversary_forward(cache.fused, adversary)
    dq = (q - _onehot(subgroup_codes, adversary.b_adv.shape[0])) / n
    d_fused = dq @ adversary.w_adv
    unreversed = _lwf_encoder_backward(params, cache, None, d_fused)
    if not reverse:
        return unreversed
    return {name: grl_grad(arr, lam) for name, arr in unreversed.items()}


# ---------------------------------------------------------------------------
# Objective

def _onehot(indices: np.ndarray, depth: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=int)
    out = np.zeros((indices.shape[0], depth))
    out[np.arange(indices.shape[0]), indices] = 1.0
    return out


def _validate_prob_rows(probs: np.ndarray, what: str) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2:
        raise DataError(f"{what} probabilities must be 2-D")
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise DataError(f"invalid {what} probability rows")
    return probs


def total_loss(
    class_probs: np.ndarray,
    labels: np.ndarray,
    adv_probs: Optional[np.ndarray],
    subgroups: Optional[np.ndarray],
    lam: float,
    sample_weights: Optional[np.ndarray] = None,
) -> float:
    """Weighted class cross-entropy minus lambda times adversary cross-entropy.

    Both terms are means over the batch; probabilities of exactly 1 for
    the true class give a zero contribution.
    """
    p = _validate_prob_rows(class_probs, "class")
    labels = np.asarray(labels, dtype=int)
    n = p.shape[0]
    if labels.shape[0] != n:
        raise DataError("label count does not match probability rows")
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    if w.shape[0] != n:
        raise DataError("sample weight count does not match probability rows")
    with np.errstate(divide="ignore"):
        cls_nll = -np.log(p[np.arange(n), labels])
    loss = float((w * cls_nll).mean())
    if adv_probs is not None and lam != 0.0:
        q = _validate_prob_rows(adv_probs, "adversary")
        subgroups = np.asarray(subgroups, dtype=int)
        if q.shape[0] != n or subgroups.shape[0] != n:
            raise DataError("adversary rows do not match batch")
        with np.errstate(divide="ignore"):
            adv_nll = -np.log(q[np.arange(n), subgroups])
        loss -= lam * float(adv_nll.mean())
    return loss


def training_loss_from_logits(
    score_logits: np.ndarray,
    targets: np.ndarray,
    sample_weights: Optional[np.ndarray],
    adv_logits: Optional[np.ndarray],
    subgroup_codes: Optional[np.ndarray],
    lam: float,
) -> float:
    """Numerically stable objective used by the trainer and the gradient checker."""
    loss = _cross_entropy(score_logits, np.asarray(targets, dtype=int), sample_weights)
    if adv_logits is not None and lam != 0.0:
        loss -= lam * _cross_entropy(adv_logits, np.asarray(subgroup_codes, dtype=int))
    return loss
