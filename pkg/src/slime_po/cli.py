"""Command-line entry point: ``slime-po {train,gradcheck,ablate,compare,gen-data}``.

Exit codes: 0 success, 1 validation or check failure, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import gradient, policy, prefdata, trainer
from .config import ConfigError, RunConfig, dump_config, load_config
from .seeding import derive_seed

log = logging.getLogger("slime_po")

OUTPUT_ROOT_ENV = "SLIME_OUTPUT_ROOT"

# Loss-component ablations, then the stabilizing-exponent sweep
ABLATION_VARIANTS = (
    ("full", {}),
    ("no_chosen", {"enable_chosen": False}),
    ("no_rejected", {"enable_rejected": False}),
    ("no_soft_margin", {"enable_soft": False}),
    ("no_hard_margin", {"enable_hard": False}),
    ("p_1.0", {"p": 1.0}),
    ("p_1.5", {"p": 1.5}),
    ("p_2.0", {"p": 2.0}),
    ("p_2.5", {"p": 2.5}),
    ("p_3.0", {"p": 3.0}),
)

SUMMARY_METRICS = (
    "final_accuracy",
    "final_mean_delta",
    "initial_chosen_loglik",
    "final_chosen_loglik",
    "chosen_loglik_drift",
    "final_rejected_loglik",
    "rejected_token_floor",
    "final_loss_w",
    "final_loss_l",
    "final_loss_dist",
    "final_hard_term",
    "final_soft_term",
)


class CheckFailed(Exception):
    pass


def build_corpus(cfg: RunConfig):
    """Load or generate the corpus and return its preference-stage part."""
    d = cfg.data
    if d.source == "synthetic":
        corpus = prefdata.generate_synthetic(
            d.n_pairs, cfg.train.vocab_size, d.max_len, cfg.data_seed,
            d.chosen_style_permille, d.rejected_style_permille,
        )
    else:
        corpus = prefdata.load_jsonl(d.source, cfg.train.vocab_size)
    split = prefdata.split_corpus(len(corpus), d.sft_fraction, cfg.split_seed)
    # the SFT part is reserved; alignment runs on the preference part only
    return [corpus[i] for i in split.pref_indices]


def summarize(result: trainer.TrainResult) -> dict:
    first, last = result.history[0], result.history[-1]
    return {
        "final_accuracy": last.preference_accuracy,
        "final_mean_delta": last.mean_delta,
        "initial_chosen_loglik": first.mean_chosen_loglik,
        "final_chosen_loglik": last.mean_chosen_loglik,
        "chosen_loglik_drift": last.mean_chosen_loglik - first.mean_chosen_loglik,
        "final_rejected_loglik": last.mean_rejected_loglik,
        "rejected_token_floor": last.min_rejected_token_logprob,
        "final_loss_w": last.loss_w,
        "final_loss_l": last.loss_l,
        "final_loss_dist": last.loss_dist,
        "final_hard_term": last.hard_term,
        "final_soft_term": last.soft_term,
    }


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def resolve_out_dir(args, command: str) -> Path:
    if args.out_dir:
        out = Path(args.out_dir)
    else:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        out = root / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
        n = 1
        while out.exists():
            out = root / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}-{n}"
            n += 1
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_from_args(args) -> RunConfig:
    overrides = list(args.set or [])
    for flag, key in (("objective", "objective"), ("synthetic", "n_pairs"), ("data", "source"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    if getattr(args, "synthetic", None) is not None:
        overrides.append("source=synthetic")
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = resolve_out_dir(args, "train")
    (out / "resolved_config.ini").write_text(dump_config(cfg), encoding="utf-8")
    corpus = build_corpus(cfg)
    ckpt_dir = out / "checkpoints"

    def save_ckpt(step, model):
        ckpt_dir.mkdir(exist_ok=True)
        policy.save_checkpoint(model, ckpt_dir / f"step_{step:06d}.npz")

    try:
        result = trainer.train(
            corpus, cfg.train, cfg.slime, cfg.baseline,
            checkpoint_every=args.checkpoint_every, on_checkpoint=save_ckpt,
        )
    except trainer.TrainingAborted as exc:
        (out / "diagnostic.json").write_text(json.dumps(exc.diagnostic, indent=2), encoding="utf-8")
        print(f"training aborted: {exc}; diagnostic written to {out / 'diagnostic.json'}", file=sys.stderr)
        return 2
    trainer.write_metrics_csv(result.history, out / "metrics.csv")
    policy.save_checkpoint(result.model, out / "checkpoint.npz")
    last = result.history[-1]
    print(f"{cfg.train.objective}: step {last.step} accuracy {last.preference_accuracy:.4f} "
          f"mean_delta {last.mean_delta:.4f} -> {out}")
    return 0


def run_gradcheck(cfg: RunConfig):
    """Component sweep plus end-to-end parameter probes for every objective."""
    gc = cfg.gradcheck
    report = gradient.gradcheck_sweep(cfg.slime, gc.n_points, cfg.train.seed)
    pairs = prefdata.generate_synthetic(gc.probe_pairs, cfg.train.vocab_size, cfg.data.max_len, cfg.data_seed)
    model = policy.init(cfg.train.vocab_size, cfg.train.context_window, cfg.train.embed_dim,
                        derive_seed(cfg.train.seed, "init"))
    ref = policy.snapshot(model)
    probe_rows = []
    for name in gradient.OBJECTIVES:
        probe_rows += gradient.parameter_probe(
            pairs, model, name, cfg.slime, cfg.baseline, ref_model=ref,
            n_params=gc.probe_params, seed=derive_seed(cfg.train.seed, "probe"),
        )
    return report, probe_rows


def cmd_gradcheck(args) -> int:
    cfg = _config_from_args(args)
    out = resolve_out_dir(args, "gradcheck")
    (out / "resolved_config.ini").write_text(dump_config(cfg), encoding="utf-8")
    report, probe_rows = run_gradcheck(cfg)
    report.write_csv(out / "gradcheck.csv")
    gradient.GradcheckReport(probe_rows).write_csv(out / "gradcheck_probe.csv")
    ok = True
    for comp, err in report.max_error().items():
        passed = err <= cfg.gradcheck.component_tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {comp}: max rel error {err:.3e}")
    for name in gradient.OBJECTIVES:
        rows = [r for r in probe_rows if r["component"].startswith(name + ":")]
        err = max(r["rel_error"] for r in rows)
        passed = err <= cfg.gradcheck.end_to_end_tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} end-to-end {name}: max rel error {err:.3e}")
    if not ok:
        worst = max(report.rows + probe_rows, key=lambda r: r["rel_error"])
        print(f"worst offender: {worst}", file=sys.stderr)
        return 1
    return 0


def run_ablation(cfg: RunConfig, corpus):
    model = policy.init(cfg.train.vocab_size, cfg.train.context_window, cfg.train.embed_dim,
                        derive_seed(cfg.train.seed, "init"))
    results = {}
    for name, change in ABLATION_VARIANTS:
        hp = replace(cfg.slime, **change)
        results[name] = trainer.train(corpus, cfg.train.replace(objective="slime"), hp, cfg.baseline, model=model)
    return results


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    out = resolve_out_dir(args, "ablate")
    (out / "resolved_config.ini").write_text(dump_config(cfg), encoding="utf-8")
    results = run_ablation(cfg, build_corpus(cfg))
    rows = []
    for name, res in results.items():
        trainer.write_metrics_csv(res.history, out / f"metrics_{name}.csv")
        s = summarize(res)
        rows.append([name] + [s[m] for m in SUMMARY_METRICS])
    _write_rows(out / "ablation.csv", ("variant",) + SUMMARY_METRICS, rows)
    for row in rows:
        print(f"{row[0]:15s} accuracy {row[1]:.4f} chosen_drift {row[5]:+.4f} rejected_floor {row[7]:.4f}")
    return 0


def cmd_compare(args) -> int:
    cfg = _config_from_args(args)
    out = resolve_out_dir(args, "compare")
    (out / "resolved_config.ini").write_text(dump_config(cfg), encoding="utf-8")
    results = trainer.compare_objectives(build_corpus(cfg), cfg.train, cfg.slime, cfg.baseline)
    names = list(results)
    for name, res in results.items():
        trainer.write_metrics_csv(res.history, out / f"metrics_{name}.csv")
    summaries = {name: summarize(res) for name, res in results.items()}
    _write_rows(out / "summary.csv", ["metric"] + names, [[m] + [summaries[n][m] for n in names] for m in SUMMARY_METRICS])
    for m in ("final_accuracy", "chosen_loglik_drift", "rejected_token_floor"):
        print(f"{m:22s} " + " ".join(f"{n}={summaries[n][m]:+.4f}" for n in names))
    return 0


def cmd_gen_data(args) -> int:
    cfg = _config_from_args(args)
    d = cfg.data
    pairs = prefdata.generate_synthetic(
        d.n_pairs, cfg.train.vocab_size, d.max_len, cfg.data_seed,
        d.chosen_style_permille, d.rejected_style_permille,
    )
    target = Path(args.output)
    target.parent.mkdir(parents=True, exist_ok=True)
    prefdata.save_jsonl(pairs, target)
    print(f"wrote {len(pairs)} pairs to {target}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slime-po", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_dir=True):
        p.add_argument("--config", help="INI-style run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--synthetic", type=int, metavar="N", help="use a synthetic corpus of N pairs")
        p.add_argument("--data", help="JSONL corpus path")
        if out_dir:
            p.add_argument("--out-dir", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<command>-<timestamp>)")

    p = sub.add_parser("train", help="train one objective")
    common(p)
    p.add_argument("--objective", choices=gradient.OBJECTIVES)
    p.add_argument("--checkpoint-every", type=int, default=0, metavar="STEPS")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="component ablations and the exponent sweep")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare", help="SLIME vs SimPO vs DPO from one initial model")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gen-data", help="write a synthetic corpus as JSONL")
    common(p, out_dir=False)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, prefdata.DataValidationError, prefdata.DataParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, FloatingPointError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
