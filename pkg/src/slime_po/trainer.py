"""Alignment-stage training loop: AdamW with decoupled weight decay, linear
decay to zero, no warmup and no gradient clipping."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction

import numpy as np

from . import objective as obj
from .gradient import OBJECTIVES, loss_and_param_grads
from .logprob import batch_logprobs
from .policy import PolicyModel, init, snapshot
from .seeding import derive_seed

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    """Raised on a non-finite loss; ``diagnostic`` describes the offending batch."""

    def __init__(self, message, diagnostic):
        super().__init__(message)
        self.diagnostic = diagnostic


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "slime"
    lr_init: float = 5e-3
    epochs: int = 1
    batch_size: int = 16
    eval_every: int = 50
    seed: int = 0
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    heldout_fraction: float = 0.1
    vocab_size: int = 64
    context_window: int = 4
    embed_dim: int = 32

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not self.lr_init >= 0:
            raise ValueError("lr_init must be >= 0")
        if self.batch_size < 1 or self.epochs < 1 or self.eval_every < 1:
            raise ValueError("batch_size, epochs and eval_every must be >= 1")
        if not 0.0 < self.heldout_fraction < 1.0:
            raise ValueError("heldout_fraction must lie in (0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})


@dataclass
class MetricsRow:
    step: int
    lr: float
    objective_loss: float
    loss_w: float
    loss_l: float
    loss_dist: float
    total: float
    hard_term: float
    soft_term: float
    mean_delta: float
    preference_accuracy: float
    mean_chosen_loglik: float
    mean_rejected_loglik: float
    min_rejected_token_logprob: float


METRIC_FIELDS = tuple(f.name for f in fields(MetricsRow))


@dataclass
class OptimizerState:
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: PolicyModel) -> "OptimizerState":
        params = model.params()
        return cls(
            0,
            {k: np.zeros_like(v) for k, v in params.items()},
            {k: np.zeros_like(v) for k, v in params.items()},
        )


@dataclass
class TrainResult:
    model: PolicyModel
    history: list[MetricsRow]
    initial_model: PolicyModel


def lr_at(step: int, total_steps: int, lr_init: float) -> float:
    """``lr_init * (1 - step / total_steps)``; the ratio is taken exactly."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return float(Fraction(lr_init) * (1 - Fraction(step, total_steps)))


def adamw_step(model: PolicyModel, grads, state: OptimizerState, lr: float, config: TrainConfig):
    """One AdamW update in place (decay ``p *= 1 - lr*wd``, then the bias-corrected
    Adam step). Returns ``(model, state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
        if g.shape != getattr(model, name).shape:
            raise ValueError(f"gradient block {name!r} has shape {g.shape}, expected {getattr(model, name).shape}")
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, g in grads.items():
        p = getattr(model, name)
        m, v = state.exp_avg[name], state.exp_avg_sq[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if config.weight_decay:
            p *= 1.0 - lr * config.weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)
    return model, state


def heldout_split(n: int, fraction: float, seed: int):
    """Index arrays (train, heldout); heldout gets round-half-up(fraction*n), at least 1."""
    if n < 2:
        raise ValueError("need at least 2 pairs to carve a held-out slice")
    n_hold = min(max(int(math.floor(fraction * n + 0.5)), 1), n - 1)
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def evaluate(model, pairs, config, hp, bhp, ref_batch=None, step=0, lr=0.0) -> MetricsRow:
    batch = batch_logprobs(model, pairs)
    bd = obj.slime_total(batch, hp)
    delta = bd.per_pair_delta
    if config.objective == "slime":
        loss = bd.total
    elif config.objective == "simpo":
        loss = float(np.mean(obj.simpo_loss(batch.seq_mean_chosen, batch.seq_mean_rejected, bhp)))
    else:
        pol = batch.seq_sum_chosen - batch.seq_sum_rejected
        ref = ref_batch.seq_sum_chosen - ref_batch.seq_sum_rejected
        loss = float(np.mean(obj.dpo_loss(pol, ref, bhp)))
    enabled = hp.enable_hard or hp.enable_soft
    return MetricsRow(
        step=step,
        lr=lr,
        objective_loss=loss,
        loss_w=bd.loss_w,
        loss_l=bd.loss_l,
        loss_dist=bd.loss_dist,
        total=bd.total,
        hard_term=float(np.mean(obj.hard_factor(delta, hp))) if hp.enable_hard and enabled else 0.0,
        soft_term=float(np.mean(obj.soft_factor(delta, hp))) if hp.enable_soft and enabled else 0.0,
        mean_delta=float(np.mean(delta)),
        preference_accuracy=float(np.mean(delta > 0)),
        mean_chosen_loglik=float(np.mean(batch.seq_mean_chosen)),
        mean_rejected_loglik=float(np.mean(batch.seq_mean_rejected)),
        min_rejected_token_logprob=float(batch.rejected[batch.rejected_mask].min()),
    )


def train(
    corpus,
    config: TrainConfig = TrainConfig(),
    hp: obj.SlimeHyperParams = obj.SlimeHyperParams(),
    bhp: obj.BaselineHyperParams = obj.BaselineHyperParams(),
    model: PolicyModel | None = None,
    checkpoint_every: int = 0,
    on_checkpoint=None,
) -> TrainResult:
    """Train on ``corpus`` (a list of pairs) and return the model plus metrics.

    A held-out slice (``heldout_fraction``) is carved off with a seed derived
    from ``config.seed``; metrics are computed on it at step 0, every
    ``eval_every`` steps and after the last step.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    if model is None:
        model = init(config.vocab_size, config.context_window, config.embed_dim, derive_seed(config.seed, "init"))
    else:
        model = snapshot(model)
    for pair in corpus:
        pair.check_vocab(model.vocab_size)
    initial = snapshot(model)
    ref = initial if config.objective == "dpo" else None

    train_idx, hold_idx = heldout_split(len(corpus), config.heldout_fraction, derive_seed(config.seed, "heldout"))
    heldout = [corpus[i] for i in hold_idx]
    ref_hold = batch_logprobs(ref, heldout) if ref is not None else None

    steps_per_epoch = math.ceil(len(train_idx) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    state = OptimizerState.for_model(model)
    history = [evaluate(model, heldout, config, hp, bhp, ref_hold, 0, lr_at(0, total_steps, config.lr_init))]
    shuffle_rng = np.random.Generator(np.random.PCG64(derive_seed(config.seed, "shuffle")))

    step = 0
    for epoch in range(config.epochs):
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        for start in range(0, len(order), config.batch_size):
            pairs = [corpus[i] for i in order[start:start + config.batch_size]]
            lr = lr_at(step, total_steps, config.lr_init)
            ev, grads = loss_and_param_grads(pairs, model, config.objective, hp, bhp, ref_model=ref)
            if not math.isfinite(ev.loss):
                raise TrainingAborted(
                    f"non-finite loss at step {step}",
                    {
                        "step": step,
                        "epoch": epoch,
                        "loss": repr(ev.loss),
                        "pair_ids": [p.pair_id for p in pairs],
                        "pairs": [p.to_record() for p in pairs],
                    },
                )
            adamw_step(model, grads, state, lr, config)
            step += 1
            if checkpoint_every and on_checkpoint is not None and step % checkpoint_every == 0:
                on_checkpoint(step, model)
            if step % config.eval_every == 0 or step == total_steps:
                row = evaluate(model, heldout, config, hp, bhp, ref_hold, step, lr_at(step, total_steps, config.lr_init))
                history.append(row)
                log.debug("step %d acc=%.3f delta=%.4f", step, row.preference_accuracy, row.mean_delta)
    return TrainResult(model, history, initial)


def compare_objectives(corpus, config: TrainConfig, hp=obj.SlimeHyperParams(), bhp=obj.BaselineHyperParams(),
                       objectives=("slime", "simpo", "dpo"), model=None) -> dict[str, TrainResult]:
    """Train once per objective, all from the same initial model and seed."""
    if model is None:
        model = init(config.vocab_size, config.context_window, config.embed_dim, derive_seed(config.seed, "init"))
    return {name: train(corpus, config.replace(objective=name), hp, bhp, model=model) for name in objectives}


def write_metrics_csv(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_FIELDS)
        for row in history:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in asdict(row).values()])


def read_metrics_csv(path) -> list[MetricsRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [MetricsRow(**{k: (int(v) if k == "step" else float(v)) for k, v in r.items()}) for r in reader]
