"""Training loop: AdamW with decoupled weight decay, warmup + cosine decay,
gradient clipping, deterministic batch sampling, and CSV logging.

Every source of randomness is an explicit seed; two runs with identical
configs produce byte-identical logs. Training runs in single precision;
the non-finite-loss abort carries a diagnostic snapshot of the batch.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Sample, pad_id
from .losses import LossOutput, PenaltySpec, combined_loss
from .model import Arch, ModelConfig, ModelState, forward_with_cache, model_backward, param_shapes
from .numbers import Vocab, find_number_spans

ADAM_EPS = 1e-8
COSINE_FLOOR = 0.1  # cosine decays to this fraction of the peak lr
CHECKPOINT_VERSION = 1


class NumericalError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, diagnostic: dict | None = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    warmup_frac: float = 0.03
    steps: int = 5000
    batch_size: int = 32
    grad_clip: float = 1.0
    seed: int = 0
    log_interval: int = 50

    def __post_init__(self) -> None:
        if not 0 <= self.warmup_frac < 1:
            raise ValueError(f"warmup_frac must be in [0, 1), got {self.warmup_frac}")
        if self.steps <= 0:
            raise ValueError(f"steps must be positive, got {self.steps}")
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")


def lr_at_step(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to the peak, then cosine decay to 10% of it."""
    warmup = int(round(cfg.warmup_frac * cfg.steps))
    if step < warmup:
        return cfg.lr * step / warmup
    span = max(cfg.steps - warmup, 1)
    progress = (step - warmup) / span
    return cfg.lr * (COSINE_FLOOR + (1 - COSINE_FLOOR) * 0.5 * (1 + math.cos(math.pi * progress)))


class AdamW:
    """Decoupled-weight-decay Adam; decay applies to matrices only.

    Parameters are repacked as views into one flat buffer so the moment
    updates run as a handful of long vector operations instead of per-tensor
    loops; the view repack preserves every value and shape.
    """

    def __init__(self, state: ModelState, cfg: TrainConfig):
        self.cfg = cfg
        self._names = list(state.params)
        flat = np.concatenate([state.params[k].ravel() for k in self._names])
        views: dict[str, np.ndarray] = {}
        decay = np.zeros(flat.size, dtype=flat.dtype)
        offset = 0
        for k in self._names:
            p = state.params[k]
            views[k] = flat[offset : offset + p.size].reshape(p.shape)
            if p.ndim >= 2:
                decay[offset : offset + p.size] = 1.0
            offset += p.size
        state.params = views
        self._flat = flat
        self._decay_mask = decay
        self.m = np.zeros_like(flat)
        self.v = np.zeros_like(flat)

    def flatten_grads(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate(
            [grads[k].ravel().astype(self._flat.dtype, copy=False) for k in self._names]
        )

    def update(self, state: ModelState, flat_grads: np.ndarray, lr: float) -> None:
        b1, b2 = self.cfg.betas
        state.step += 1
        t = state.step
        m, v, g = self.m, self.v, flat_grads
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        step = (m / (1.0 - b1**t)) / (np.sqrt(v / (1.0 - b2**t)) + ADAM_EPS)
        if self.cfg.weight_decay:
            step = step + self.cfg.weight_decay * (self._decay_mask * self._flat)
        self._flat -= np.asarray(lr, dtype=self._flat.dtype) * step


def clip_flat_gradients(flat_grads: np.ndarray, max_norm: float) -> float:
    """Scale the gradient vector in place to an L2 norm cap; returns the norm."""
    norm = float(np.linalg.norm(flat_grads.astype(np.float64)))
    if not math.isfinite(norm):
        raise NumericalError("non-finite gradient norm")
    if max_norm > 0 and norm > max_norm:
        flat_grads *= np.asarray(max_norm / norm, dtype=flat_grads.dtype)
    return norm


@dataclass
class LogRow:
    step: int
    lr: float
    ce: float
    penalty: float
    digit_entropy: float
    nondigit_entropy: float


LOG_FIELDS = ("step", "lr", "ce", "penalty", "digit_entropy", "nondigit_entropy")


def write_log_csv(path: str | Path, logs: Sequence[LogRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for row in logs:
            writer.writerow(
                [
                    row.step,
                    repr(row.lr),
                    repr(row.ce),
                    repr(row.penalty),
                    repr(row.digit_entropy),
                    repr(row.nondigit_entropy),
                ]
            )


def _entropy_snapshot(
    logits: np.ndarray, targets: np.ndarray, mask: np.ndarray, digit_table: np.ndarray
) -> tuple[float, float]:
    """Mean full-vocabulary entropy (nats) at supervised positions, split by
    whether the target token is a digit."""
    sel = mask.reshape(-1)
    z = logits.reshape(-1, logits.shape[-1])[sel].astype(np.float64)
    t = targets.reshape(-1)[sel]
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    sez = ez.sum(axis=1)
    lse = m[:, 0] + np.log(sez)
    ent = lse - (ez / sez[:, None] * z).sum(axis=1)
    is_digit = digit_table[t] >= 0
    dig = ent[is_digit]
    non = ent[~is_digit]
    return (
        float(dig.mean()) if dig.size else float("nan"),
        float(non.mean()) if non.size else float("nan"),
    )


def _pack_samples(samples: Sequence[Sample], vocab: Vocab):
    n = len(samples)
    lengths = np.array([len(s.tokens) for s in samples])
    width = int(lengths.max())
    tok = np.full((n, width), pad_id(vocab), dtype=np.int64)
    msk = np.zeros((n, width), dtype=bool)
    for i, s in enumerate(samples):
        tok[i, : lengths[i]] = s.tokens
        msk[i, : lengths[i]] = s.mask
    spans = [find_number_spans(vocab, s.tokens[1:]) for s in samples]
    return tok, msk, lengths, spans


def train_loop(
    state: ModelState,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    spec: PenaltySpec,
    vocab: Vocab,
    samples: Sequence[Sample],
) -> tuple[ModelState, list[LogRow]]:
    """Run train_cfg.steps optimizer steps over the sample pool.

    Batches are drawn with replacement from a generator seeded by
    train_cfg.seed; rows are trimmed to the longest sequence in the batch.
    """
    if not samples:
        raise ValueError("dataset is empty")
    tok, msk, lengths, spans = _pack_samples(samples, vocab)
    if tok.shape[1] > model_cfg.context_len:
        raise ValueError(
            f"longest sample ({tok.shape[1]} tokens) exceeds context_len {model_cfg.context_len}"
        )
    from .losses import _digit_value_by_id  # shared token-class lookup

    digit_table = _digit_value_by_id(vocab)
    rng = np.random.default_rng(train_cfg.seed)
    opt = AdamW(state, train_cfg)
    logs: list[LogRow] = []

    for step in range(train_cfg.steps):
        idx = rng.integers(0, len(samples), size=train_cfg.batch_size)
        width = int(lengths[idx].max())
        inp = tok[idx, : width - 1]
        tgt = tok[idx, 1:width]
        bmask = msk[idx, 1:width]
        bspans = [spans[i] for i in idx]

        logits, _, cache = forward_with_cache(state, model_cfg, inp)
        loss = combined_loss(logits, tgt, bmask, vocab, bspans, spec)
        if not math.isfinite(loss.value):
            raise NumericalError(
                f"non-finite loss at step {step}",
                diagnostic={
                    "step": step,
                    "ce": loss.ce_value,
                    "penalty": loss.penalty_value,
                    "batch_indices": idx.tolist(),
                },
            )
        grads = model_backward(state, model_cfg, cache, loss.grad)
        flat_grads = opt.flatten_grads(grads)
        clip_flat_gradients(flat_grads, train_cfg.grad_clip)
        lr = lr_at_step(step, train_cfg)
        opt.update(state, flat_grads, lr)

        if step % train_cfg.log_interval == 0 or step == train_cfg.steps - 1:
            de, nde = _entropy_snapshot(logits, tgt, bmask, digit_table)
            logs.append(LogRow(step, lr, loss.ce_value, loss.penalty_value, de, nde))

    return state, logs


def save_checkpoint(path: str | Path, state: ModelState, config: ModelConfig, vocab: Vocab) -> None:
    """Versioned named-tensor container: config header plus parameter blobs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "model": {
            "vocab_size": config.vocab_size,
            "d_model": config.d_model,
            "n_layers": config.n_layers,
            "n_heads": config.n_heads,
            "context_len": config.context_len,
            "arch": config.arch.value,
            "init_seed": config.init_seed,
        },
        "vocab_tokens": list(vocab.tokens),
    }
    arrays = {f"param:{k}": v for k, v in state.params.items()}
    np.savez(path, meta=np.asarray(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path: str | Path) -> tuple[ModelState, ModelConfig, Vocab]:
    path = Path(path)
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        m = meta["model"]
        config = ModelConfig(
            vocab_size=m["vocab_size"],
            d_model=m["d_model"],
            n_layers=m["n_layers"],
            n_heads=m["n_heads"],
            context_len=m["context_len"],
            arch=Arch(m["arch"]),
            init_seed=m["init_seed"],
        )
        params = {k[len("param:") :]: npz[k] for k in npz.files if k.startswith("param:")}
    expected = param_shapes(config)
    if set(params) != set(expected):
        raise ValueError("checkpoint parameters do not match the config's layout")
    state = ModelState(params, step=meta["step"])
    return state, config, Vocab.from_tokens(meta["vocab_tokens"])
