"""Command-line experiment orchestration.

Subcommands: gradcheck, synth-data, train, eval, ablate, embed-analyze.
Exit codes: 0 success, 2 usage or config error, 3 numerical failure.
All artifacts (CSV logs and tables, JSON reports and manifests, JSONL
datasets, npz checkpoints) are byte-reproducible given the same config.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from .config import (
    ExperimentConfig,
    __version__,
    canonical_dict,
    config_hash,
    experiment_config_from_dict,
    load_experiment_config,
)
from .data import (
    ArithTask,
    ConfigError,
    Split,
    TaskKind,
    default_vocab,
    gen_task,
    write_jsonl,
)
from .evaluation import evaluate_samples
from .losses import GRADCHECK_TOL, PENALTY_VARIANTS, Variant, gradient_check
from .metrics import (
    cosine_distance_matrix,
    ideal_distance_matrix,
    matrix_csv,
    place_table_csv,
    report_to_json,
    write_text,
)
from .model import digit_embeddings, init_model
from .numbers import DecimalMode
from .train import NumericalError, load_checkpoint, save_checkpoint, train_loop, write_log_csv


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def cmd_gradcheck(args) -> int:
    if args.trials <= 0:
        raise ConfigError(f"--trials must be positive, got {args.trials}")
    if args.eps <= 0:
        raise ConfigError(f"--eps must be positive, got {args.eps}")
    report = {}
    all_passed = True
    for variant in PENALTY_VARIANTS:
        res = gradient_check(variant, trials=args.trials, eps=args.eps, seed=args.seed)
        report[variant.value] = {
            "max_rel_err": res.max_rel_err,
            "trials": res.trials,
            "eps": res.eps,
            "worst_trial": res.worst_trial,
            "worst_coord": res.worst_coord,
            "passed": res.passed,
        }
        all_passed &= res.passed
        print(f"{variant.value:>14}: max rel err {res.max_rel_err:.3e} "
              f"({'ok' if res.passed else f'FAIL at trial {res.worst_trial} coord {res.worst_coord}'})")
    out = Path(args.out) / "gradcheck.json"
    _write_json(out, {"tolerance": GRADCHECK_TOL, "variants": report})
    print(f"wrote {out}")
    return 0 if all_passed else 3


def cmd_synth_data(args) -> int:
    task = ArithTask(
        kind=TaskKind(args.kind),
        operand_digits=args.operand_digits,
        frac_digits=args.frac_digits,
        count=args.count,
        seed=args.seed,
        split=Split(args.split),
    )
    vocab = default_vocab()
    samples = gen_task(task, vocab)
    out = Path(args.out)
    write_jsonl(out, samples, vocab, task.seed)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def _train_one_seed(cfg: ExperimentConfig, seed: int, outdir: Path):
    vocab = default_vocab()
    model_cfg = replace(cfg.model, init_seed=seed)
    train_cfg = replace(cfg.train, seed=seed)
    samples = gen_task(cfg.task, vocab)
    state = init_model(model_cfg)
    state, logs = train_loop(state, model_cfg, train_cfg, cfg.penalty, vocab, samples)
    seed_dir = outdir / f"seed_{seed}"
    ckpt = seed_dir / "checkpoint.npz"
    log_path = seed_dir / "train_log.csv"
    save_checkpoint(ckpt, state, model_cfg, vocab)
    write_log_csv(log_path, logs)
    return ckpt, log_path


def cmd_train(args) -> int:
    cfg = load_experiment_config(args.config)
    outdir = Path(args.out) if args.out else Path(cfg.output_dir)
    t0 = time.monotonic()
    runs = []
    for seed in cfg.seeds:
        try:
            ckpt, log_path = _train_one_seed(cfg, seed, outdir)
        except NumericalError as e:
            _write_json(outdir / f"seed_{seed}" / "failure.json",
                        {"error": str(e), "diagnostic": e.diagnostic})
            manifest = {
                "config_hash": config_hash(cfg),
                "config": canonical_dict(cfg),
                "tool_version": __version__,
                "runs": runs,
                "wall_clock_s": time.monotonic() - t0,
                "status": f"numerical failure at seed {seed}",
            }
            _write_json(outdir / "manifest.json", manifest)
            print(f"error: {e}", file=sys.stderr)
            return 3
        runs.append({"seed": seed, "checkpoint": str(ckpt), "log": str(log_path), "status": "complete"})
        print(f"seed {seed}: checkpoint {ckpt}")
    manifest = {
        "config_hash": config_hash(cfg),
        "config": canonical_dict(cfg),
        "tool_version": __version__,
        "runs": runs,
        "wall_clock_s": time.monotonic() - t0,
        "status": "complete",
    }
    _write_json(outdir / "manifest.json", manifest)
    return 0


def cmd_eval(args) -> int:
    state, model_cfg, vocab = load_checkpoint(args.checkpoint)
    task = ArithTask(
        kind=TaskKind(args.kind),
        operand_digits=args.operand_digits,
        frac_digits=args.frac_digits,
        count=args.count,
        seed=args.seed,
        split=Split.EVAL,
    )
    samples = gen_task(task, vocab)
    result = evaluate_samples(state, model_cfg, vocab, samples, max_new=args.max_new)
    outdir = Path(args.out)
    write_text(outdir / "report.json", report_to_json(result.report))
    write_text(outdir / "per_place.csv", place_table_csv(result.report.place_metrics))
    r = result.report
    print(f"task_accuracy={r.task_accuracy:.4f} global_log_mae={r.global_log_mae} "
          f"parsed {r.n_parsed}/{r.n_items}")
    return 0


def cmd_embed_analyze(args) -> int:
    state, model_cfg, vocab = load_checkpoint(args.checkpoint)
    emb = digit_embeddings(state, model_cfg, vocab)
    cosine = cosine_distance_matrix(emb)
    ideal, ideal_norm = ideal_distance_matrix()
    outdir = Path(args.out)
    write_text(outdir / "cosine_distance.csv", matrix_csv(cosine))
    write_text(outdir / "ideal_distance.csv", matrix_csv(ideal))
    write_text(outdir / "ideal_distance_normalized.csv", matrix_csv(ideal_norm))
    print(f"wrote distance matrices to {outdir}")
    return 0


def _parse_decimal_axis(value) -> tuple[DecimalMode, float]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return DecimalMode.EXP_DECAY, float(value)
    mode = {
        "no_penalty": DecimalMode.NO_PENALTY,
        "constant": DecimalMode.CONSTANT,
        "as_integers": DecimalMode.AS_INTEGERS,
    }.get(str(value))
    if mode is None:
        raise ConfigError(f"grid.decimal entry {value!r} is not a mode name or a beta value")
    return mode, 1.02


def cmd_ablate(args) -> int:
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    with path.open("rb") as fh:
        raw = tomllib.load(fh)
    grid = raw.get("grid", {})
    variants = [Variant(v) for v in grid.get("variants", [])]
    seeds = [int(s) for s in grid.get("seeds", [])]
    if not variants or not seeds:
        raise ConfigError("grid.variants and grid.seeds must both be non-empty")
    alphas = grid.get("alpha", [None])
    ks = grid.get("k", [None])
    decimals = grid.get("decimal", [None])

    base_cfg = experiment_config_from_dict({k: v for k, v in raw.items() if k != "grid"})
    outdir = Path(args.out) if args.out else Path(base_cfg.output_dir)
    vocab = default_vocab()
    train_samples = gen_task(base_cfg.task, vocab)
    eval_samples = gen_task(base_cfg.eval_task(), vocab)

    rows = []
    any_completed = False
    for variant, alpha, k, dec in itertools.product(variants, alphas, ks, decimals):
        pw = base_cfg.penalty.place_weights
        if k is not None:
            pw = replace(pw, k=float(k))
        dec_label = "" if dec is None else str(dec)
        if dec is not None:
            mode, beta = _parse_decimal_axis(dec)
            pw = replace(pw, decimal_mode=mode, beta=beta)
        spec = replace(
            base_cfg.penalty,
            variant=variant,
            alpha=base_cfg.penalty.alpha if alpha is None else float(alpha),
            place_weights=pw,
        )
        accs, maes, failures = [], [], 0
        for seed in seeds:
            model_cfg = replace(base_cfg.model, init_seed=seed)
            train_cfg = replace(base_cfg.train, seed=seed)
            try:
                state = init_model(model_cfg)
                state, _ = train_loop(state, model_cfg, train_cfg, spec, vocab, train_samples)
                result = evaluate_samples(state, model_cfg, vocab, eval_samples)
            except NumericalError:
                failures += 1
                continue
            accs.append(result.report.task_accuracy)
            if result.report.global_log_mae is not None:
                maes.append(result.report.global_log_mae)
        completed = len(accs)
        any_completed |= completed > 0
        rows.append({
            "variant": variant.value,
            "alpha": "" if alpha is None else repr(float(alpha)),
            "k": "" if k is None else repr(float(k)),
            "decimal": dec_label,
            "seeds_ok": completed,
            "seeds_failed": failures,
            "mean_task_accuracy": repr(sum(accs) / completed) if completed else "",
            "mean_global_log_mae": repr(sum(maes) / len(maes)) if maes else "",
        })
        print(f"{variant.value} alpha={alpha} k={k} decimal={dec_label}: "
              f"{completed}/{len(seeds)} seeds ok")

    outdir.mkdir(parents=True, exist_ok=True)
    summary = outdir / "summary.csv"
    with summary.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {summary}")
    return 0 if any_completed else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="digitlab",
        description="Digit-level loss laboratory: gradient checks, toy training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="validate analytic penalty gradients against finite differences")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="directory for gradcheck.json")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth-data", help="generate a synthetic arithmetic dataset (JSONL)")
    p.add_argument("--kind", choices=[k.value for k in TaskKind], default="add")
    p.add_argument("--operand-digits", type=int, default=2)
    p.add_argument("--frac-digits", type=int, default=0)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=[s.value for s in Split], default="train")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train one model per seed from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override the config's output_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy-decode an eval split and write the metrics report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", choices=[k.value for k in TaskKind], default="add")
    p.add_argument("--operand-digits", type=int, default=2)
    p.add_argument("--frac-digits", type=int, default=0)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0, help="data seed of the eval split")
    p.add_argument("--max-new", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run a variant/parameter/seed grid and summarize it")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("embed-analyze", help="emit digit-embedding distance matrices")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
