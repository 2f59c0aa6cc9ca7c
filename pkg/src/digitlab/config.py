"""Experiment configuration: TOML parsing, validation, and canonical hashing.

A config file has one table per sub-config ([model], [train], [penalty],
[task]) plus top-level seeds, eval_count, and output_dir. The config hash is
the SHA-256 of the fully-resolved canonical JSON form, so it is stable under
key reordering in the file.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import ArithTask, ConfigError, Split, TaskKind, default_vocab
from .losses import PenaltySpec, Rho, Variant
from .model import Arch, ModelConfig
from .numbers import DecimalMode, PlaceWeightParams
from .train import TrainConfig

__version__ = "0.1.0"


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    train: TrainConfig
    penalty: PenaltySpec
    task: ArithTask  # train-split template; eval uses the same kind/widths
    eval_count: int = 200
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.eval_count <= 0:
            raise ConfigError(f"eval_count must be positive, got {self.eval_count}")

    def eval_task(self) -> ArithTask:
        return ArithTask(
            kind=self.task.kind,
            operand_digits=self.task.operand_digits,
            frac_digits=self.task.frac_digits,
            count=self.eval_count,
            seed=self.task.seed,
            split=Split.EVAL,
        )


def _enum(cls, value: str, where: str):
    try:
        return cls(value)
    except ValueError:
        options = ", ".join(m.value for m in cls)
        raise ConfigError(f"{where}: unknown value {value!r} (expected one of: {options})") from None


def parse_place_weights(table: dict) -> PlaceWeightParams:
    try:
        return PlaceWeightParams(
            k=float(table.get("k", 2.0)),
            beta=float(table.get("beta", 1.02)),
            decimal_mode=_enum(
                DecimalMode, table.get("decimal_mode", "exp_decay"), "penalty.place_weights.decimal_mode"
            ),
        )
    except ValueError as e:
        raise ConfigError(f"penalty.place_weights: {e}") from None


def parse_penalty(table: dict) -> PenaltySpec:
    try:
        return PenaltySpec(
            variant=_enum(Variant, table.get("variant", "del"), "penalty.variant"),
            alpha=float(table.get("alpha", 0.1)),
            rho=_enum(Rho, table.get("rho", "squared_diff"), "penalty.rho"),
            tau=float(table.get("tau", 1.0)),
            gamma=float(table.get("gamma", 2.0)),
            place_weights=parse_place_weights(table.get("place_weights", {})),
            apply_place_weights=table.get("apply_place_weights"),
        )
    except ValueError as e:
        raise ConfigError(f"penalty: {e}") from None


def parse_model(table: dict, vocab_size: int) -> ModelConfig:
    try:
        return ModelConfig(
            vocab_size=int(table.get("vocab_size", vocab_size)),
            d_model=int(table.get("d_model", 64)),
            n_layers=int(table.get("n_layers", 2)),
            n_heads=int(table.get("n_heads", 2)),
            context_len=int(table.get("context_len", 48)),
            arch=_enum(Arch, table.get("arch", "transformer"), "model.arch"),
            init_seed=int(table.get("init_seed", 0)),
        )
    except ValueError as e:
        raise ConfigError(f"model: {e}") from None


def parse_train(table: dict) -> TrainConfig:
    betas = table.get("betas", (0.9, 0.999))
    try:
        return TrainConfig(
            lr=float(table.get("lr", 1e-3)),
            betas=(float(betas[0]), float(betas[1])),
            weight_decay=float(table.get("weight_decay", 0.01)),
            warmup_frac=float(table.get("warmup_frac", 0.03)),
            steps=int(table.get("steps", 5000)),
            batch_size=int(table.get("batch_size", 64)),
            grad_clip=float(table.get("grad_clip", 1.0)),
            seed=int(table.get("seed", 0)),
            log_interval=int(table.get("log_interval", 50)),
        )
    except (ValueError, IndexError) as e:
        raise ConfigError(f"train: {e}") from None


def parse_task(table: dict, split: Split = Split.TRAIN) -> ArithTask:
    try:
        return ArithTask(
            kind=_enum(TaskKind, table.get("kind", "add"), "task.kind"),
            operand_digits=int(table.get("operand_digits", 2)),
            frac_digits=int(table.get("frac_digits", 0)),
            count=int(table.get("count", 2000)),
            seed=int(table.get("seed", 0)),
            split=split,
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"task: {e}") from None


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return experiment_config_from_dict(raw)


def experiment_config_from_dict(raw: dict) -> ExperimentConfig:
    vocab_size = default_vocab().size
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list):
        raise ConfigError("seeds must be a list of integers")
    return ExperimentConfig(
        model=parse_model(raw.get("model", {}), vocab_size),
        train=parse_train(raw.get("train", {})),
        penalty=parse_penalty(raw.get("penalty", {})),
        task=parse_task(raw.get("task", {})),
        eval_count=int(raw.get("eval_count", 200)),
        seeds=tuple(int(s) for s in seeds),
        output_dir=str(raw.get("output_dir", "runs")),
    )


def canonical_dict(config: ExperimentConfig) -> dict:
    """Fully-resolved plain-value form used for hashing and manifests."""
    return {
        "model": {
            "vocab_size": config.model.vocab_size,
            "d_model": config.model.d_model,
            "n_layers": config.model.n_layers,
            "n_heads": config.model.n_heads,
            "context_len": config.model.context_len,
            "arch": config.model.arch.value,
            "init_seed": config.model.init_seed,
        },
        "train": {
            "lr": config.train.lr,
            "betas": list(config.train.betas),
            "weight_decay": config.train.weight_decay,
            "warmup_frac": config.train.warmup_frac,
            "steps": config.train.steps,
            "batch_size": config.train.batch_size,
            "grad_clip": config.train.grad_clip,
            "seed": config.train.seed,
            "log_interval": config.train.log_interval,
        },
        "penalty": {
            "variant": config.penalty.variant.value,
            "alpha": config.penalty.alpha,
            "rho": config.penalty.rho.value,
            "tau": config.penalty.tau,
            "gamma": config.penalty.gamma,
            "place_weights": {
                "k": config.penalty.place_weights.k,
                "beta": config.penalty.place_weights.beta,
                "decimal_mode": config.penalty.place_weights.decimal_mode.value,
            },
            "apply_place_weights": config.penalty.apply_place_weights,
        },
        "task": {
            "kind": config.task.kind.value,
            "operand_digits": config.task.operand_digits,
            "frac_digits": config.task.frac_digits,
            "count": config.task.count,
            "seed": config.task.seed,
        },
        "eval_count": config.eval_count,
        "seeds": list(config.seeds),
        "output_dir": config.output_dir,
    }


def config_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(canonical_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
