"""Closed-form SLIME gradients, their composition down to token log-probs,
and the finite-difference oracle that checks them."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import objective as obj
from .logprob import batch_logprobs, margin, pair_sequences
from .numerics import sigmoid, softplus
from .policy import PARAM_NAMES, backward_batch

COMPONENTS = ("chosen", "rejected_token", "dual_margin")
REPORT_FIELDS = ("component", "point", "analytic", "numeric", "rel_error")
KINK_EXCLUSION = 1e-3


class GradientCheckError(ValueError):
    pass


@dataclass(frozen=True)
class GradientBundle:
    d_loss_d_lbar_w: float
    d_loss_d_lbar_l: float
    d_loss_d_token_l: np.ndarray
    d_dist_d_delta: float


def grad_chosen(hp: obj.SlimeHyperParams) -> float:
    return -hp.lambda_w if hp.enable_chosen else 0.0


def grad_rejected_token(l_t, hp: obj.SlimeHyperParams, n_tokens: int = 1):
    """d/dl_t of the per-sequence mean penalty:
    ``-p * lambda_l * softplus(u)**(p-1) * sigmoid(u) / n_tokens`` with ``u = -l_t - delta``."""
    lt = np.asarray(l_t, dtype=np.float64)
    if not hp.enable_rejected:
        return obj._scalar(np.zeros_like(lt))
    u = -lt - hp.delta
    g = -hp.p * hp.lambda_l * np.power(softplus(u), hp.p - 1.0) * sigmoid(u)
    return obj._scalar(g / n_tokens)


def grad_dual_margin(delta, hp: obj.SlimeHyperParams):
    """d L_dist / d Delta; exactly 0 on ``Delta >= m_h`` (the kink included)."""
    d = np.asarray(delta, dtype=np.float64)
    if not (hp.enable_hard or hp.enable_soft):
        return obj._scalar(np.zeros_like(d))
    v = np.asarray(obj.soft_factor(d, hp))
    if hp.enable_hard:
        u = np.maximum(hp.m_h - d, 0.0)
        du = -1.0
    else:
        u = np.ones_like(d)
        du = 0.0
    dv = -hp.kappa * v * (1.0 - v) if hp.enable_soft else 0.0
    g = hp.lambda_d * (du * v + u * dv)
    if hp.enable_hard:
        g = np.where(d >= hp.m_h, 0.0, g)
    return obj._scalar(g)


def chain_to_sequences(d_dist_d_delta):
    """Delta = lbar_w - lbar_l, so the sequence gradients are (g, -g)."""
    return d_dist_d_delta, -d_dist_d_delta


def gradient_bundle(lbar_w, lbar_l, rejected_tokens, hp: obj.SlimeHyperParams) -> GradientBundle:
    rejected_tokens = np.asarray(rejected_tokens, dtype=np.float64)
    g_d = float(grad_dual_margin(margin(lbar_w, lbar_l), hp))
    d_w, d_l = chain_to_sequences(g_d)
    return GradientBundle(
        d_loss_d_lbar_w=grad_chosen(hp) + d_w,
        d_loss_d_lbar_l=d_l,
        d_loss_d_token_l=np.atleast_1d(grad_rejected_token(rejected_tokens, hp, rejected_tokens.size)),
        d_dist_d_delta=g_d,
    )


def finite_difference(loss_fn, point: float, h: float = 1e-5) -> float:
    """Central difference ``(f(x+h) - f(x-h)) / 2h``."""
    if not h > 0:
        raise ValueError("step size h must be > 0")
    hi = float(loss_fn(point + h))
    lo = float(loss_fn(point - h))
    if not (np.isfinite(hi) and np.isfinite(lo)):
        raise GradientCheckError(f"non-finite loss near point {point}")
    return (hi - lo) / (2.0 * h)


def relative_error(analytic: float, numeric: float, floor: float = 0.0) -> float:
    scale = max(abs(analytic), abs(numeric), floor)
    if scale == 0.0:
        return 0.0
    return abs(analytic - numeric) / scale


@dataclass
class GradcheckReport:
    rows: list[dict]

    def max_error(self) -> dict[str, float]:
        out = {c: 0.0 for c in COMPONENTS}
        for row in self.rows:
            out[row["component"]] = max(out[row["component"]], row["rel_error"])
        return out

    def worst(self) -> dict:
        return max(self.rows, key=lambda r: r["rel_error"])

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _sample_delta(rng, hp):
    while True:
        d = float(rng.uniform(-5.0, 5.0))
        if abs(d - hp.m_h) >= KINK_EXCLUSION:
            return d


def gradcheck_sweep(hp: obj.SlimeHyperParams, n_points: int = 1000, seed: int = 0, h: float = 1e-5, points=None):
    """Compare every analytic component gradient against central differences.

    ``points`` optionally fixes the sample as ``{component: [x, ...]}``.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    rng = np.random.default_rng(seed)
    if points is None:
        points = {"chosen": [], "rejected_token": [], "dual_margin": []}
        for _ in range(n_points):
            points["chosen"].append(float(rng.uniform(-10.0, 0.0)))
            points["rejected_token"].append(float(rng.uniform(-12.0, 0.0)))
            points["dual_margin"].append(_sample_delta(rng, hp))

    checks = {
        "chosen": (lambda x: grad_chosen(hp), lambda x: obj.chosen_loss(x, hp)),
        "rejected_token": (
            lambda x: grad_rejected_token(x, hp, 1),
            lambda x: obj.rejected_penalty(np.array([x]), hp),
        ),
        "dual_margin": (lambda x: grad_dual_margin(x, hp), lambda x: obj.dual_margin_loss(x, hp)),
    }
    rows = []
    for comp in COMPONENTS:
        analytic_fn, loss_fn = checks[comp]
        for x in points[comp]:
            a = float(analytic_fn(x))
            n = finite_difference(loss_fn, x, h)
            rows.append({"component": comp, "point": x, "analytic": a, "numeric": n, "rel_error": relative_error(a, n)})
    return GradcheckReport(rows)


# ---------------------------------------------------------------------------
# composition down to token log-probabilities and model parameters
# ---------------------------------------------------------------------------

OBJECTIVES = ("slime", "dpo", "simpo")


@dataclass
class ObjectiveEval:
    loss: float
    batch: object
    breakdown: obj.LossBreakdown
    chosen_grads: list
    rejected_grads: list


def _spread(d_seq, lengths, normalize):
    """Per-sequence gradients -> per-token gradients (divide by |y| for means)."""
    return [np.full(int(n), g / n if normalize else g) for g, n in zip(d_seq, lengths)]


def objective_token_grads(pairs, model, objective, hp, bhp, ref_model=None, ref_batch=None) -> ObjectiveEval:
    """Batch-mean loss of ``objective`` and its gradient w.r.t. every response token log-prob."""
    batch = batch_logprobs(model, pairs)
    B = batch.size
    lw_len, ll_len = batch.chosen_lengths, batch.rejected_lengths
    breakdown = obj.slime_total(batch, hp)
    if objective == "slime":
        g_d = np.asarray(grad_dual_margin(breakdown.per_pair_delta, hp))
        d_w, d_l = chain_to_sequences(g_d)
        d_w = d_w + grad_chosen(hp)
        chosen = _spread(d_w / B, lw_len, hp.length_normalize)
        rejected = _spread(d_l / B, ll_len, hp.length_normalize)
        rows = batch.rejected_rows()
        rejected = [r + np.asarray(grad_rejected_token(t, hp, t.size)) / B for r, t in zip(rejected, rows)]
        loss = breakdown.total
    elif objective == "dpo":
        if ref_batch is None:
            if ref_model is None:
                raise ValueError("dpo objective needs a reference model")
            ref_batch = batch_logprobs(ref_model, pairs)
        pol = batch.seq_sum_chosen - batch.seq_sum_rejected
        ref = ref_batch.seq_sum_chosen - ref_batch.seq_sum_rejected
        z = bhp.dpo_beta * (pol - ref)
        loss = float(np.mean(obj.dpo_loss(pol, ref, bhp)))
        d = -bhp.dpo_beta * np.asarray(sigmoid(-z)) / B
        chosen = _spread(d, lw_len, False)
        rejected = _spread(-d, ll_len, False)
    elif objective == "simpo":
        lw, ll = batch.seq_mean_chosen, batch.seq_mean_rejected
        z = bhp.simpo_beta * (lw - ll) - bhp.simpo_gamma
        loss = float(np.mean(obj.simpo_loss(lw, ll, bhp)))
        d = -bhp.simpo_beta * np.asarray(sigmoid(-z)) / B
        chosen = _spread(d, lw_len, True)
        rejected = _spread(-d, ll_len, True)
    else:
        raise ValueError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
    return ObjectiveEval(loss, batch, breakdown, chosen, rejected)


def loss_and_param_grads(pairs, model, objective, hp, bhp, ref_model=None, ref_batch=None):
    ev = objective_token_grads(pairs, model, objective, hp, bhp, ref_model, ref_batch)
    grads = backward_batch(model, pair_sequences(pairs), ev.chosen_grads + ev.rejected_grads)
    return ev, grads


def parameter_probe(pairs, model, objective, hp, bhp, ref_model=None, n_params=20, seed=0, h=1e-5, floor=1e-8):
    """End-to-end check: analytic parameter gradients vs central differences of
    the full loss at ``n_params`` randomly chosen parameter entries."""
    _, grads = loss_and_param_grads(pairs, model, objective, hp, bhp, ref_model)
    ref_batch = batch_logprobs(ref_model, pairs) if objective == "dpo" else None
    rng = np.random.default_rng(seed)
    sizes = np.array([getattr(model, n).size for n in PARAM_NAMES])
    rows = []
    for _ in range(n_params):
        flat = int(rng.integers(0, sizes.sum()))
        block = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        idx = flat - int(sizes[:block].sum())
        name = PARAM_NAMES[block]
        target = getattr(model, name).reshape(-1)
        orig = target[idx]

        def loss_at(x):
            target[idx] = x
            try:
                return objective_token_grads(pairs, model, objective, hp, bhp, ref_batch=ref_batch).loss
            finally:
                target[idx] = orig

        num = finite_difference(loss_at, float(orig), h)
        ana = float(getattr(grads, name).reshape(-1)[idx])
        rows.append({
            "component": f"{objective}:{name}[{idx}]",
            "point": float(orig),
            "analytic": ana,
            "numeric": num,
            "rel_error": relative_error(ana, num, floor),
        })
    return rows
