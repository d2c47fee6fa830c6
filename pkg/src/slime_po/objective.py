"""SLIME objective (anchoring + stabilizing penalty + dual margin) and the
DPO / SimPO baselines."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .logprob import LogProbBatch, margin
from .numerics import neg_log_sigmoid, sigmoid, softplus


@dataclass(frozen=True)
class SlimeHyperParams:
    lambda_w: float = 0.1
    lambda_l: float = 0.1
    lambda_d: float = 1.0
    delta: float = 1.25
    m_h: float = 1.5
    m_s: float = 1.0
    kappa: float = 2.5
    p: float = 2.5
    enable_chosen: bool = True
    enable_rejected: bool = True
    enable_soft: bool = True
    enable_hard: bool = True
    # False switches Delta and the anchor to raw summed log-probs
    length_normalize: bool = True

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        for name in ("lambda_w", "lambda_l", "lambda_d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    def replace(self, **changes) -> "SlimeHyperParams":
        return SlimeHyperParams(**{**asdict(self), **changes})


@dataclass(frozen=True)
class BaselineHyperParams:
    dpo_beta: float = 0.1
    simpo_beta: float = 2.0
    simpo_gamma: float = 0.2

    def __post_init__(self):
        if self.dpo_beta <= 0 or self.simpo_beta <= 0:
            raise ValueError("dpo_beta and simpo_beta must be > 0")


@dataclass(frozen=True)
class LossBreakdown:
    loss_w: float
    loss_l: float
    loss_dist: float
    total: float
    per_pair_delta: np.ndarray = field(repr=False)
    per_pair_loss_w: np.ndarray = field(repr=False)
    per_pair_loss_l: np.ndarray = field(repr=False)
    per_pair_loss_dist: np.ndarray = field(repr=False)


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def chosen_loss(lbar_w, hp: SlimeHyperParams):
    """Anchor term ``-lambda_w * lbar_w`` (elementwise)."""
    if not hp.enable_chosen:
        return _scalar(np.zeros_like(np.asarray(lbar_w, dtype=np.float64)))
    return _scalar(-hp.lambda_w * np.asarray(lbar_w, dtype=np.float64))


def rejected_token_penalty(token_logprobs, hp: SlimeHyperParams):
    """Unreduced per-token penalty ``lambda_l * softplus(-l_t - delta)**p``."""
    lt = np.asarray(token_logprobs, dtype=np.float64)
    if not hp.enable_rejected:
        return _scalar(np.zeros_like(lt))
    return _scalar(hp.lambda_l * np.power(softplus(-lt - hp.delta), hp.p))


def rejected_penalty(token_logprobs, hp: SlimeHyperParams, mask=None):
    """Stabilizing penalty averaged over the unmasked tokens of each sequence.

    A 1-D input gives a float; a 2-D (batch, time) input gives one value per row.
    """
    lt = np.asarray(token_logprobs, dtype=np.float64)
    mask = np.ones(lt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=-1)
    if np.any(counts == 0):
        raise ValueError("rejected_penalty over an empty token set")
    per_tok = np.asarray(rejected_token_penalty(np.where(mask, lt, 0.0), hp))
    total = np.zeros(lt.shape[:-1])
    for j in range(lt.shape[-1]):
        total = total + np.where(mask[..., j], per_tok[..., j], 0.0)
    return _scalar(total / counts)


def hard_factor(delta, hp: SlimeHyperParams):
    """``ReLU(m_h - Delta)``, or 1 when the hard margin is ablated."""
    d = np.asarray(delta, dtype=np.float64)
    if not hp.enable_hard:
        return _scalar(np.ones_like(d))
    return _scalar(np.maximum(hp.m_h - d, 0.0))


def soft_factor(delta, hp: SlimeHyperParams):
    """``sigmoid(-kappa (Delta - m_s))``, or 1 when the soft margin is ablated."""
    d = np.asarray(delta, dtype=np.float64)
    if not hp.enable_soft:
        return _scalar(np.ones_like(d))
    return _scalar(sigmoid(-hp.kappa * (d - hp.m_s)))


def dual_margin_loss(delta, hp: SlimeHyperParams):
    """``lambda_d * ReLU(m_h - Delta) * sigmoid(-kappa (Delta - m_s))``.

    Disabling one factor replaces it by 1; disabling both removes the term.
    """
    d = np.asarray(delta, dtype=np.float64)
    if not (hp.enable_hard or hp.enable_soft):
        return _scalar(np.zeros_like(d))
    return _scalar(hp.lambda_d * np.asarray(hard_factor(d, hp)) * np.asarray(soft_factor(d, hp)))


def sequence_scores(batch: LogProbBatch, hp: SlimeHyperParams):
    """The per-pair (chosen, rejected) sequence scores that Delta is built from."""
    if hp.length_normalize:
        return batch.seq_mean_chosen, batch.seq_mean_rejected
    return batch.seq_sum_chosen, batch.seq_sum_rejected


def slime_total(batch: LogProbBatch, hp: SlimeHyperParams) -> LossBreakdown:
    lw, ll = sequence_scores(batch, hp)
    delta = np.asarray(margin(lw, ll))
    per_w = np.asarray(chosen_loss(lw, hp))
    per_l = np.atleast_1d(rejected_penalty(batch.rejected, hp, batch.rejected_mask))
    per_d = np.asarray(dual_margin_loss(delta, hp))
    loss_w = float(np.mean(per_w))
    loss_l = float(np.mean(per_l))
    loss_dist = float(np.mean(per_d))
    return LossBreakdown(
        loss_w=loss_w,
        loss_l=loss_l,
        loss_dist=loss_dist,
        total=loss_w + loss_l + loss_dist,
        per_pair_delta=delta,
        per_pair_loss_w=per_w,
        per_pair_loss_l=per_l,
        per_pair_loss_dist=per_d,
    )


def dpo_loss(policy_logratio, ref_logratio, hp: BaselineHyperParams):
    """``-log sigmoid(beta * (policy_logratio - ref_logratio))``."""
    z = hp.dpo_beta * (np.asarray(policy_logratio, dtype=np.float64) - np.asarray(ref_logratio, dtype=np.float64))
    return _scalar(neg_log_sigmoid(z))


def simpo_loss(lbar_w, lbar_l, hp: BaselineHyperParams):
    """``-log sigmoid(beta * (lbar_w - lbar_l) - gamma)`` with gamma as the target margin."""
    z = hp.simpo_beta * (np.asarray(lbar_w, dtype=np.float64) - np.asarray(lbar_l, dtype=np.float64)) - hp.simpo_gamma
    return _scalar(neg_log_sigmoid(z))
