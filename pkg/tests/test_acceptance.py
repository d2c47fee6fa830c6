"""Exit criteria for the package, one test per criterion at its stated tolerance."""

import filecmp
import time

import mpmath as mp
import numpy as np
import pytest

from slime_po import cli, gradient, policy, trainer
from slime_po.config import load_config, parse_config
from slime_po.objective import BaselineHyperParams, SlimeHyperParams, dual_margin_loss, rejected_penalty
from slime_po.prefdata import PreferencePair, generate_synthetic
from slime_po.seeding import derive_seed

mp.mp.dps = 50
HP = SlimeHyperParams()
BHP = BaselineHyperParams()


def read_rows(path):
    import csv

    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_gradient_fidelity(tmp_path, acceptance):
    t0 = time.perf_counter()
    code = cli.main(["gradcheck", "--out-dir", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    rows = read_rows(tmp_path / "gradcheck.csv")
    worst = {}
    for r in rows:
        worst[r["component"]] = max(worst.get(r["component"], 0.0), float(r["rel_error"]))
    counts = {c: sum(r["component"] == c for r in rows) for c in gradient.COMPONENTS}
    kink_ok = all(abs(float(r["point"]) - HP.m_h) >= 1e-3 for r in rows if r["component"] == "dual_margin")
    ok = (code == 0 and set(worst) == set(gradient.COMPONENTS) and all(v <= 1e-5 for v in worst.values())
          and all(n == 1000 for n in counts.values()) and kink_ok and elapsed < 10.0)
    acceptance("gradient fidelity", ok, f"max rel err {max(worst.values()):.2e} over 3x1000 points, {elapsed:.2f}s")
    assert ok


def test_end_to_end_backprop(acceptance):
    t0 = time.perf_counter()
    pairs = generate_synthetic(16, 64, 12, seed=9)
    model = policy.init(64, 4, 32, seed=9)
    ref = policy.snapshot(model)
    # a few optimizer-like perturbations so policy and reference differ
    model.bias += np.random.default_rng(1).normal(scale=0.2, size=64)
    errs = {}
    for name in gradient.OBJECTIVES:
        rows = gradient.parameter_probe(pairs, model, name, HP, BHP, ref_model=ref, n_params=20, seed=5)
        assert len(rows) == 20
        errs[name] = max(r["rel_error"] for r in rows)
    elapsed = time.perf_counter() - t0
    ok = all(e <= 1e-4 for e in errs.values()) and elapsed < 30.0
    acceptance("end-to-end backprop", ok, ", ".join(f"{k} {v:.2e}" for k, v in errs.items()) + f", {elapsed:.2f}s")
    assert ok


def test_closed_form_spot_values(acceptance):
    sp = lambda z: mp.log(1 + mp.e ** mp.mpf(z))
    sg = lambda z: 1 / (1 + mp.e ** (-mp.mpf(z)))
    v0 = sg(2.5)
    checks = [
        ("dual_margin_loss(0)", dual_margin_loss(0.0, HP), 1.5 * v0, 1.38621),
        ("dual_margin_loss(1)", dual_margin_loss(1.0, HP), 0.5 * sg(0), 0.25),
        ("grad_dual_margin(1)", gradient.grad_dual_margin(1.0, HP), -(0.5 + 2.5 * 0.5 * 0.5 * 0.5), -0.8125),
        ("rejected_penalty(-1.25)", rejected_penalty(np.array([-1.25]), HP), 0.1 * sp(0) ** 2.5, 0.04000),
        ("grad_rejected_token(-1.25)", gradient.grad_rejected_token(-1.25, HP),
         -2.5 * 0.1 * sp(0) ** 1.5 * sg(0), -0.072137),
    ]
    ok = True
    for name, got, oracle, stated in checks:
        ok &= abs(got - float(oracle)) <= 1e-4 and abs(got - stated) <= 1e-4
    ok &= dual_margin_loss(1.0, HP) == 0.25
    acceptance("closed-form spot values", ok, "; ".join(f"{n}={g:.6f}" for n, g, _, _ in checks))
    assert ok


def test_deadzone_exactness(acceptance):
    rng = np.random.default_rng(0)
    deltas = HP.m_h + np.concatenate([[0.0], rng.exponential(2.0, size=99)])
    loss_zero = all(dual_margin_loss(float(d), HP) == 0.0 for d in deltas)
    grad_zero = all(gradient.grad_dual_margin(float(d), HP) == 0.0 for d in deltas)

    pairs = [PreferencePair.from_lists([0, 3], [1, 1, 1], [2, 2], f"s{i}") for i in range(20)]
    model = policy.init(6, 2, 4, seed=0)
    model.bias[:] = [0.0, 6.0, -6.0, 0.0, 0.0, 0.0]
    hp = HP.replace(lambda_w=0.0, lambda_l=0.0)
    satiated = bool(np.all(gradient.objective_token_grads(pairs, model, "slime", hp, BHP).breakdown.per_pair_delta >= hp.m_h))
    cfg = trainer.TrainConfig(batch_size=64, lr_init=1e-2, weight_decay=0.05, vocab_size=6, context_window=2, embed_dim=4)
    res = trainer.train(pairs, cfg, hp, model=model)
    unchanged = all(
        np.array_equal(p, getattr(res.initial_model, name) * (1 - 1e-2 * 0.05)) for name, p in res.model.params().items()
    )
    ok = loss_zero and grad_zero and satiated and unchanged
    acceptance("deadzone exactness", ok, f"100 deltas >= m_h bit-exact zero; satiated step decay-only={unchanged}")
    assert ok


def test_learnability(acceptance):
    t0 = time.perf_counter()
    cfg = parse_config("")
    assert cfg.data.n_pairs == 2000 and cfg.train.epochs == 1
    result = trainer.train(cli.build_corpus(cfg), cfg.train, cfg.slime, cfg.baseline)
    elapsed = time.perf_counter() - t0
    acc = result.history[-1].preference_accuracy
    ok = acc >= 0.9 and elapsed < 300.0
    acceptance("learnability", ok, f"held-out preference accuracy {acc:.4f} after 1 epoch, {elapsed:.1f}s")
    assert ok


def test_unlearning_direction(acceptance):
    # same corpus for every seed; per seed SLIME and SimPO share the initial model
    corpus = cli.build_corpus(parse_config("", ["data_seed=0"]))
    details, ok = [], True
    for seed in (0, 1, 2):
        cfg = trainer.TrainConfig(seed=seed, epochs=3)
        res = trainer.compare_objectives(corpus, cfg, HP, BHP, objectives=("slime", "simpo"))
        s, m = res["slime"].history[-1], res["simpo"].history[-1]
        better_chosen = s.mean_chosen_loglik > m.mean_chosen_loglik
        better_floor = s.min_rejected_token_logprob > m.min_rejected_token_logprob
        ok &= better_chosen and better_floor
        details.append(
            f"seed {seed}: chosen {s.mean_chosen_loglik:.3f}>{m.mean_chosen_loglik:.3f}, "
            f"floor {s.min_rejected_token_logprob:.3f}>{m.min_rejected_token_logprob:.3f}"
        )
    acceptance("unlearning direction", ok, "; ".join(details))
    assert ok


def test_ablation_harness_shape(tmp_path, acceptance):
    assert cli.main(["ablate", "--out-dir", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "ablation.csv")
    names = [r["variant"] for r in rows]
    expected = ["full", "no_chosen", "no_rejected", "no_soft_margin", "no_hard_margin",
                "p_1.0", "p_1.5", "p_2.0", "p_2.5", "p_3.0"]
    disabled = {"no_chosen": "loss_w", "no_rejected": "loss_l", "no_soft_margin": "soft_term", "no_hard_margin": "hard_term"}
    zero_ok = all(
        all(getattr(r, col) == 0.0 for r in trainer.read_metrics_csv(tmp_path / f"metrics_{v}.csv"))
        for v, col in disabled.items()
    )
    live_ok = all(
        any(getattr(r, col) != 0.0 for r in trainer.read_metrics_csv(tmp_path / "metrics_full.csv"))
        for col in disabled.values()
    )
    firsts = {v: trainer.read_metrics_csv(tmp_path / f"metrics_{v}.csv")[0] for v in names}
    shared = len({(r.mean_delta, r.mean_chosen_loglik, r.min_rejected_token_logprob) for r in firsts.values()}) == 1
    ok = names == expected and zero_ok and live_ok and shared
    acceptance("ablation harness shape", ok, f"{len(names)} variants, disabled components zero={zero_ok}, shared step 0={shared}")
    assert ok


@pytest.mark.parametrize("command", ["train", "gradcheck", "ablate", "compare", "gen-data"])
def test_determinism(tmp_path, acceptance, command):
    first, second = tmp_path / "a", tmp_path / "b"
    if command == "gen-data":
        assert cli.main(["gen-data", "-o", str(first / "d.jsonl")]) == 0
        assert cli.main(["gen-data", "-o", str(second / "d.jsonl")]) == 0
        ok = filecmp.cmp(first / "d.jsonl", second / "d.jsonl", shallow=False)
        acceptance(f"determinism [{command}]", ok, "JSONL bit-identical")
        assert ok
        return
    assert cli.main([command, "--out-dir", str(first)]) == 0
    # rerun from the resolved config snapshot of the first run
    assert cli.main([command, "--config", str(first / "resolved_config.ini"), "--out-dir", str(second)]) == 0
    assert load_config(first / "resolved_config.ini") == load_config(second / "resolved_config.ini")
    csvs = sorted(p.name for p in first.glob("*.csv"))
    ok = bool(csvs) and all(filecmp.cmp(first / n, second / n, shallow=False) for n in csvs)
    acceptance(f"determinism [{command}]", ok, f"{len(csvs)} CSV file(s) bit-identical")
    assert ok
