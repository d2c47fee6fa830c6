"""scikit-learn style wrapper around the trainer.

``X`` is a sequence of preference pairs: :class:`~slime_po.prefdata.PreferencePair`
objects or dicts with ``prompt``/``chosen``/``rejected`` token lists.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import objective as obj
from .logprob import batch_logprobs
from .prefdata import PreferencePair
from .trainer import TrainConfig, train


def check_pairs(X, vocab_size=None) -> list[PreferencePair]:
    """Coerce ``X`` to a non-empty list of validated pairs."""
    if isinstance(X, (str, bytes)) or not hasattr(X, "__iter__"):
        raise TypeError("X must be a sequence of preference pairs")
    pairs = []
    for i, item in enumerate(X):
        if isinstance(item, PreferencePair):
            pair = item
        elif isinstance(item, dict):
            pair = PreferencePair.from_lists(
                item["prompt"], item["chosen"], item["rejected"], item.get("pair_id", i)
            )
        else:
            raise TypeError(f"X[{i}] is {type(item).__name__}, expected PreferencePair or dict")
        if vocab_size is not None:
            pair.check_vocab(vocab_size)
        pairs.append(pair)
    if not pairs:
        raise ValueError("X contains no preference pairs")
    return pairs


def _max_token(pairs) -> int:
    return max(max(max(s.tokens) for s in (p.prompt, p.chosen, p.rejected)) for p in pairs)


class SlimeAligner(BaseEstimator):
    """Fit a toy policy to preference pairs with SLIME (or a baseline objective).

    ``predict`` returns 1 where the fitted policy ranks the chosen response
    above the rejected one; ``score`` is the fraction of such pairs.
    """

    def __init__(
        self,
        objective="slime",
        lambda_w=0.1,
        lambda_l=0.1,
        lambda_d=1.0,
        delta=1.25,
        m_h=1.5,
        m_s=1.0,
        kappa=2.5,
        p=2.5,
        enable_chosen=True,
        enable_rejected=True,
        enable_soft=True,
        enable_hard=True,
        length_normalize=True,
        dpo_beta=0.1,
        simpo_beta=2.0,
        simpo_gamma=0.2,
        lr_init=5e-3,
        epochs=1,
        batch_size=16,
        eval_every=50,
        weight_decay=0.01,
        heldout_fraction=0.1,
        vocab_size=None,
        context_window=4,
        embed_dim=32,
        seed=0,
    ):
        self.objective = objective
        self.lambda_w = lambda_w
        self.lambda_l = lambda_l
        self.lambda_d = lambda_d
        self.delta = delta
        self.m_h = m_h
        self.m_s = m_s
        self.kappa = kappa
        self.p = p
        self.enable_chosen = enable_chosen
        self.enable_rejected = enable_rejected
        self.enable_soft = enable_soft
        self.enable_hard = enable_hard
        self.length_normalize = length_normalize
        self.dpo_beta = dpo_beta
        self.simpo_beta = simpo_beta
        self.simpo_gamma = simpo_gamma
        self.lr_init = lr_init
        self.epochs = epochs
        self.batch_size = batch_size
        self.eval_every = eval_every
        self.weight_decay = weight_decay
        self.heldout_fraction = heldout_fraction
        self.vocab_size = vocab_size
        self.context_window = context_window
        self.embed_dim = embed_dim
        self.seed = seed

    def _slime_params(self):
        return obj.SlimeHyperParams(
            self.lambda_w, self.lambda_l, self.lambda_d, self.delta, self.m_h, self.m_s, self.kappa, self.p,
            self.enable_chosen, self.enable_rejected, self.enable_soft, self.enable_hard, self.length_normalize,
        )

    def fit(self, X, y=None):
        pairs = check_pairs(X, self.vocab_size)
        vocab = self.vocab_size if self.vocab_size is not None else _max_token(pairs) + 1
        config = TrainConfig(
            objective=self.objective, lr_init=self.lr_init, epochs=self.epochs, batch_size=self.batch_size,
            eval_every=self.eval_every, seed=self.seed, weight_decay=self.weight_decay,
            heldout_fraction=self.heldout_fraction, vocab_size=vocab,
            context_window=self.context_window, embed_dim=self.embed_dim,
        )
        self.hyperparams_ = self._slime_params()
        baseline = obj.BaselineHyperParams(self.dpo_beta, self.simpo_beta, self.simpo_gamma)
        result = train(pairs, config, self.hyperparams_, baseline)
        self.policy_ = result.model
        self.initial_policy_ = result.initial_model
        self.history_ = result.history
        self.vocab_size_ = vocab
        return self

    def transform(self, X):
        """Per-pair sequence scores ``[[chosen, rejected], ...]`` under the fitted policy."""
        check_is_fitted(self, "policy_")
        batch = batch_logprobs(self.policy_, check_pairs(X, self.vocab_size_))
        lw, ll = obj.sequence_scores(batch, self.hyperparams_)
        return np.column_stack([lw, ll])

    def decision_function(self, X):
        """Margin Delta per pair (positive: chosen preferred)."""
        scores = self.transform(X)
        return scores[:, 0] - scores[:, 1]

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)

    def score(self, X, y=None):
        """Preference accuracy; ``y`` defaults to all ones (chosen is preferred)."""
        pred = self.predict(X)
        y = np.ones_like(pred) if y is None else np.asarray(y)
        return float(np.mean(pred == y))
