"""Shared fixtures and independent reference implementations used as oracles."""

from __future__ import annotations

import re

import numpy as np
import pytest

from digitlab import ModelConfig, Vocab, ce_loss, classify_token, default_vocab, init_model, model_forward
from digitlab.model import Arch, forward_with_cache, model_backward
from digitlab.numbers import TokenKind


@pytest.fixture(scope="session")
def vocab() -> Vocab:
    return default_vocab()


def micro_config(arch: Arch = Arch.TRANSFORMER) -> ModelConfig:
    return ModelConfig(
        vocab_size=12, d_model=8, n_layers=1, n_heads=2, context_len=16,
        arch=arch, init_seed=0,
    )


def param_fd_check(config: ModelConfig, seed: int = 0, eps: float = 1e-5) -> float:
    """Max over parameter tensors of ||analytic - fd||_inf / max(||fd||_inf, 1e-8)
    for the mean CE loss of a random batch, all in float64."""
    rng = np.random.default_rng(seed)
    state = init_model(config, dtype=np.float64)
    ids = rng.integers(0, config.vocab_size, size=(2, 6))
    targets = rng.integers(0, config.vocab_size, size=(2, 6))
    mask = np.ones((2, 6), dtype=bool)

    def loss_value() -> float:
        logits, _ = model_forward(state, config, ids)
        return ce_loss(logits, targets, mask).value

    logits, _, cache = forward_with_cache(state, config, ids)
    out = ce_loss(logits, targets, mask)
    grads = model_backward(state, config, cache, out.grad)

    worst = 0.0
    for name, p in state.params.items():
        fd = np.empty_like(p)
        flat = p.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_value()
            flat[i] = orig - eps
            fm = loss_value()
            flat[i] = orig
            fd_flat[i] = (fp - fm) / (2 * eps)
        rel = float(np.abs(grads[name] - fd).max() / max(np.abs(fd).max(), 1e-8))
        worst = max(worst, rel)
    return worst


def reference_spans(vocab: Vocab, tokens) -> list[tuple[int, int, int, int]]:
    """Regex-based reference scanner for the grammar ``digits ('.' digits)?``.

    Renders the token sequence to one character per token and lets the regex
    engine find maximal matches; returns (start, end, int_len, frac_len)
    tuples. Deliberately independent of the production scanner.
    """
    chars = []
    for t in tokens:
        tc = classify_token(vocab, t)
        if tc.kind is TokenKind.DIGIT:
            chars.append(str(tc.digit))
        elif tc.kind is TokenKind.DECIMAL_POINT:
            chars.append(".")
        else:
            chars.append("x")
    text = "".join(chars)
    out = []
    for m in re.finditer(r"[0-9]+(?:\.[0-9]+)?", text):
        body = m.group()
        if "." in body:
            int_len = body.index(".")
            frac_len = len(body) - int_len - 1
        else:
            int_len, frac_len = len(body), 0
        out.append((m.start(), m.end() - 1, int_len, frac_len))
    return out


def random_token_ids(rng: np.random.Generator, vocab: Vocab, length: int) -> list[int]:
    """Token streams biased toward digits and dots so spans are common."""
    digit_ids = list(vocab.digit_ids)
    other_ids = [
        i for i in range(vocab.size) if i not in vocab.digit_ids and i != vocab.decimal_point_id
    ]
    ids = []
    for _ in range(length):
        r = rng.random()
        if r < 0.55:
            ids.append(digit_ids[rng.integers(0, 10)])
        elif r < 0.75:
            ids.append(vocab.decimal_point_id)
        else:
            ids.append(other_ids[rng.integers(0, len(other_ids))])
    return ids
