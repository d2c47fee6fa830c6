"""Toy autoregressive policy: windowed mean of embeddings -> linear softmax head.

For response position t the context is the last ``context_window`` tokens of
``prompt + response[:t]``. With ``c_1`` the previous token, ``c_2`` the one
before it and so on (``n <= context_window`` of them available)::

    h = (1/n) * sum_k agg[k] * embed[c_k]
    logits = h @ proj + bias
    logp(y_t) = log_softmax(logits)[y_t]

Gradients are derived by hand; there is no autodiff dependency.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import log_softmax

CHECKPOINT_FORMAT_VERSION = 1
PARAM_NAMES = ("embed", "agg", "proj", "bias")


@dataclass
class PolicyModel:
    vocab_size: int
    context_window: int
    embed_dim: int
    embed: np.ndarray  # (vocab_size, embed_dim)
    agg: np.ndarray  # (context_window,)
    proj: np.ndarray  # (embed_dim, vocab_size)
    bias: np.ndarray  # (vocab_size,)

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params().values()))

    def zeros_like(self) -> "ParameterGradients":
        return ParameterGradients(**{k: np.zeros_like(v) for k, v in self.params().items()})


@dataclass
class ParameterGradients:
    embed: np.ndarray
    agg: np.ndarray
    proj: np.ndarray
    bias: np.ndarray

    def items(self):
        return ((name, getattr(self, name)) for name in PARAM_NAMES)


def init(vocab_size: int, context_window: int = 4, embed_dim: int = 32, seed: int = 0) -> PolicyModel:
    """Scaled-uniform init (scale 1/sqrt(embed_dim)) for embed/proj, unit
    aggregation weights, zero bias."""
    for name, value in (("vocab_size", vocab_size), ("context_window", context_window), ("embed_dim", embed_dim)):
        if int(value) < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")
    rng = np.random.Generator(np.random.PCG64(seed))
    scale = 1.0 / np.sqrt(embed_dim)
    return PolicyModel(
        vocab_size=int(vocab_size),
        context_window=int(context_window),
        embed_dim=int(embed_dim),
        embed=rng.uniform(-scale, scale, size=(vocab_size, embed_dim)),
        agg=np.ones(context_window),
        proj=rng.uniform(-scale, scale, size=(embed_dim, vocab_size)),
        bias=np.zeros(vocab_size),
    )


def zero_model(vocab_size: int, context_window: int = 4, embed_dim: int = 32) -> PolicyModel:
    m = init(vocab_size, context_window, embed_dim, seed=0)
    for p in m.params().values():
        p[...] = 0.0
    return m


def snapshot(model: PolicyModel) -> PolicyModel:
    """Deep copy; later updates to ``model`` never reach the copy."""
    return copy.deepcopy(model)


@dataclass
class _Positions:
    """Flattened response positions of a batch of (prompt, response) sequences."""

    ctx: np.ndarray  # (N, C) context token ids, 0 where padded
    weight: np.ndarray  # (N, C) 1/n where valid, 0 where padded
    target: np.ndarray  # (N,)
    offsets: np.ndarray  # (B+1,) slice bounds per sequence


def _positions(model: PolicyModel, sequences) -> _Positions:
    C = model.context_window
    ctx_rows, w_rows, targets, offsets = [], [], [], [0]
    for prompt, response in sequences:
        full = list(prompt) + list(response)
        for tok in full:
            if not 0 <= tok < model.vocab_size:
                raise ValueError(f"token id {tok} outside vocabulary of size {model.vocab_size}")
        start = len(prompt)
        for t in range(len(response)):
            pos = start + t
            window = full[max(0, pos - C):pos][::-1]
            n = len(window)
            if n == 0:
                raise ValueError("prompt must contain at least one token")
            ctx_rows.append(window + [0] * (C - n))
            w_rows.append([1.0 / n] * n + [0.0] * (C - n))
            targets.append(response[t])
        offsets.append(len(targets))
    return _Positions(
        ctx=np.asarray(ctx_rows, dtype=np.int64).reshape(-1, C),
        weight=np.asarray(w_rows, dtype=np.float64).reshape(-1, C),
        target=np.asarray(targets, dtype=np.int64),
        offsets=np.asarray(offsets, dtype=np.int64),
    )


def _hidden(model, pos):
    coef = pos.weight * model.agg[None, :]
    return np.einsum("nc,ncd->nd", coef, model.embed[pos.ctx])


def forward_batch(model: PolicyModel, sequences) -> list[np.ndarray]:
    """Per-token log-probabilities for each ``(prompt_tokens, response_tokens)``."""
    pos = _positions(model, sequences)
    if pos.target.size == 0:
        return [np.zeros(0) for _ in sequences]
    logp = log_softmax(_hidden(model, pos) @ model.proj + model.bias)
    picked = logp[np.arange(pos.target.size), pos.target]
    return [picked[a:b].copy() for a, b in zip(pos.offsets[:-1], pos.offsets[1:])]


def forward(model: PolicyModel, prompt, response) -> np.ndarray:
    prompt = getattr(prompt, "tokens", prompt)
    response = getattr(response, "tokens", response)
    return forward_batch(model, [(prompt, response)])[0]


def backward_batch(model: PolicyModel, sequences, upstream) -> ParameterGradients:
    """Reverse-mode gradient of ``sum_s sum_t upstream[s][t] * logp[s][t]``.

    ``upstream`` must hold one array per sequence, shaped like the output of
    :func:`forward_batch`.
    """
    pos = _positions(model, sequences)
    lengths = np.diff(pos.offsets)
    if len(upstream) != len(lengths):
        raise ValueError(f"expected {len(lengths)} upstream arrays, got {len(upstream)}")
    for i, (g, n) in enumerate(zip(upstream, lengths)):
        if np.shape(g) != (n,):
            raise ValueError(f"upstream[{i}] has shape {np.shape(g)}, expected ({n},)")
    grads = model.zeros_like()
    if pos.target.size == 0:
        return grads
    g = np.concatenate([np.asarray(u, dtype=np.float64) for u in upstream])

    h = _hidden(model, pos)
    logits = h @ model.proj + model.bias
    probs = np.exp(log_softmax(logits))
    # d logp[y] / d logits = onehot(y) - softmax
    d_logits = -probs * g[:, None]
    d_logits[np.arange(g.size), pos.target] += g

    grads.bias[...] = d_logits.sum(axis=0)
    grads.proj[...] = h.T @ d_logits
    d_h = d_logits @ model.proj.T
    emb = model.embed[pos.ctx]  # (N, C, D)
    grads.agg[...] = np.einsum("nc,ncd,nd->c", pos.weight, emb, d_h)
    coef = pos.weight * model.agg[None, :]
    d_emb = coef[:, :, None] * d_h[:, None, :]
    np.add.at(grads.embed, pos.ctx.ravel(), d_emb.reshape(-1, model.embed_dim))
    return grads


def save_checkpoint(model: PolicyModel, path):
    """Write an ``.npz`` checkpoint (see README for the layout)."""
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(
            fh,
            format_version=np.int64(CHECKPOINT_FORMAT_VERSION),
            dims=np.asarray([model.vocab_size, model.context_window, model.embed_dim], dtype=np.int64),
            **{name: np.ascontiguousarray(p) for name, p in model.params().items()},
        )


def load_checkpoint(path) -> PolicyModel:
    with np.load(Path(path)) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version}")
        V, C, D = (int(x) for x in data["dims"])
        model = PolicyModel(V, C, D, *(data[name].astype(np.float64) for name in PARAM_NAMES))
    expected = {"embed": (V, D), "agg": (C,), "proj": (D, V), "bias": (V,)}
    for name, shape in expected.items():
        if getattr(model, name).shape != shape:
            raise ValueError(f"checkpoint block {name} has shape {getattr(model, name).shape}, expected {shape}")
    return model
