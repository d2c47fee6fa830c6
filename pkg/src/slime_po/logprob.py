"""Token- and sequence-level log-probabilities for preference pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import forward_batch


@dataclass(frozen=True)
class LogProbBatch:
    """Per-token log-probs of chosen/rejected responses, padded to rectangles.

    ``seq_mean_*`` hold the length-normalized means; ``seq_sum_*`` the raw
    sums (used by the DPO baseline and the unnormalized SLIME variant).
    """

    chosen: np.ndarray  # (B, Tw)
    rejected: np.ndarray  # (B, Tl)
    chosen_mask: np.ndarray  # bool
    rejected_mask: np.ndarray  # bool

    def __post_init__(self):
        for name in ("chosen", "rejected"):
            vals = getattr(self, name)[getattr(self, name + "_mask")]
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"non-finite {name} token log-probability")
            if np.any(vals > 0):
                raise ValueError(f"{name} token log-probability above 0")
        if self.chosen.shape[0] == 0:
            raise ValueError("empty batch")

    @classmethod
    def from_lists(cls, chosen, rejected) -> "LogProbBatch":
        cw, mw = _pad(chosen)
        cl, ml = _pad(rejected)
        return cls(cw, cl, mw, ml)

    @property
    def size(self) -> int:
        return self.chosen.shape[0]

    @property
    def chosen_lengths(self):
        return self.chosen_mask.sum(axis=1)

    @property
    def rejected_lengths(self):
        return self.rejected_mask.sum(axis=1)

    @property
    def seq_mean_chosen(self):
        return sequence_mean(self.chosen, self.chosen_mask)

    @property
    def seq_mean_rejected(self):
        return sequence_mean(self.rejected, self.rejected_mask)

    @property
    def seq_sum_chosen(self):
        return _masked_sum(self.chosen, self.chosen_mask)

    @property
    def seq_sum_rejected(self):
        return _masked_sum(self.rejected, self.rejected_mask)

    def chosen_rows(self):
        return [row[m] for row, m in zip(self.chosen, self.chosen_mask)]

    def rejected_rows(self):
        return [row[m] for row, m in zip(self.rejected, self.rejected_mask)]


def _pad(rows):
    rows = [np.asarray(r, dtype=np.float64) for r in rows]
    width = max((r.size for r in rows), default=0)
    vals = np.zeros((len(rows), width))
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        vals[i, : r.size] = r
        mask[i, : r.size] = True
    return vals, mask


def _masked_sum(values, mask):
    # sequential per row so the reduction order is fixed
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros(values.shape[:-1])
    for j in range(values.shape[-1]):
        out = out + np.where(mask[..., j], values[..., j], 0.0)
    return out


def sequence_mean(token_logprobs, mask=None):
    """Mean over unmasked positions of the last axis."""
    values = np.asarray(token_logprobs, dtype=np.float64)
    mask = np.ones(values.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=-1)
    if np.any(counts == 0):
        raise ValueError("sequence_mean of a fully masked sequence")
    out = _masked_sum(values, mask) / counts
    return out if np.ndim(out) else float(out)


def margin(lbar_w, lbar_l):
    return np.subtract(lbar_w, lbar_l) if np.ndim(lbar_w) or np.ndim(lbar_l) else float(lbar_w - lbar_l)


def pair_sequences(pairs):
    """Flatten pairs to ``(prompt, response)`` tuples: all chosen first, then all rejected."""
    chosen = [(p.prompt.tokens, p.chosen.tokens) for p in pairs]
    rejected = [(p.prompt.tokens, p.rejected.tokens) for p in pairs]
    return chosen + rejected


def token_logprobs(policy, pair):
    """``(chosen_logprobs, rejected_logprobs)`` for one pair; prompt tokens are context only."""
    out = forward_batch(policy, pair_sequences([pair]))
    return out[0], out[1]


def batch_logprobs(policy, pairs) -> LogProbBatch:
    pairs = list(pairs)
    out = forward_batch(policy, pair_sequences(pairs))
    n = len(pairs)
    return LogProbBatch.from_lists(out[:n], out[n:])
