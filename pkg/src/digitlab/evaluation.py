"""Greedy-decoding evaluation: generate answers for a sample set, parse the
predicted numbers, and assemble the full metrics report.

Prompts of equal length are decoded together; the full-vocabulary logit row
of every generated position is recorded for the entropy decomposition. A
prediction's value is the first number span in its generated answer, negated
when a '-' token directly precedes it.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Sequence

import numpy as np

from .data import Sample, eos_id
from .metrics import (
    EntropyReport,
    MetricsReport,
    PlaceMetrics,
    entropy_decomposition,
    global_log_mae,
    per_place_metrics,
    task_accuracy,
)
from .model import ModelConfig, ModelState, model_forward
from .numbers import Vocab, decode_number, find_number_spans


@dataclass
class EvalResult:
    report: MetricsReport
    pairs: list[tuple[Decimal | None, Decimal]]
    generated: list[list[int]]  # answer region per sample, EOS excluded


def decode_answer_value(vocab: Vocab, answer_tokens: Sequence[int]) -> Decimal | None:
    """Value of the first number span in the tokens, or None if there is none."""
    spans = find_number_spans(vocab, answer_tokens)
    if not spans:
        return None
    span = spans[0]
    value = decode_number(vocab, span, answer_tokens)
    if span.start > 0 and "-" in vocab.tokens:
        if answer_tokens[span.start - 1] == vocab.token_id("-"):
            value = -value
    return value


def generate_answers(
    state: ModelState,
    config: ModelConfig,
    vocab: Vocab,
    prompts: Sequence[Sequence[int]],
    max_new: int,
) -> tuple[list[list[int]], np.ndarray, np.ndarray]:
    """Greedy-decode every prompt; returns the answer regions (EOS excluded)
    plus the recorded logit rows and emitted ids of every generated position."""
    eos = eos_id(vocab)
    answers: list[list[int] | None] = [None] * len(prompts)
    all_rows: list[np.ndarray] = []
    all_emitted: list[int] = []

    by_len: dict[int, list[int]] = {}
    for i, p in enumerate(prompts):
        if len(p) > config.context_len:
            raise ValueError("prompt does not fit the model context")
        by_len.setdefault(len(p), []).append(i)

    for plen, indices in sorted(by_len.items()):
        cur = np.asarray([list(prompts[i]) for i in indices])
        done = np.zeros(len(indices), dtype=bool)
        for _ in range(max_new):
            if done.all() or cur.shape[1] >= config.context_len:
                break
            logits, _ = model_forward(state, config, cur)
            last = logits[:, -1, :]
            nxt = last.argmax(axis=1)
            active = ~done
            all_rows.extend(last[active])
            all_emitted.extend(int(t) for t in nxt[active])
            cur = np.concatenate([cur, nxt[:, None]], axis=1)
            done |= nxt == eos
        for row, i in enumerate(indices):
            gen = cur[row, plen:].tolist()
            answers[i] = gen[: gen.index(eos)] if eos in gen else gen

    rows = np.asarray(all_rows) if all_rows else np.zeros((0, config.vocab_size))
    return [a if a is not None else [] for a in answers], rows, np.asarray(all_emitted)


def evaluate_samples(
    state: ModelState,
    config: ModelConfig,
    vocab: Vocab,
    samples: Sequence[Sample],
    max_new: int | None = None,
) -> EvalResult:
    """Decode every sample's prompt and score the predictions."""
    if not samples:
        raise ValueError("no samples to evaluate")
    if max_new is None:
        max_new = max(len(s.answer_tokens) for s in samples) + 2
    prompts = [s.prompt_tokens for s in samples]
    answers, rows, emitted = generate_answers(state, config, vocab, prompts, max_new)

    pairs: list[tuple[Decimal | None, Decimal]] = []
    for sample, ans in zip(samples, answers):
        pairs.append((decode_answer_value(vocab, ans), sample.answer_value))

    parsed = [(p, g) for p, g in pairs if p is not None]
    if parsed:
        place = per_place_metrics(parsed)
        log_mae = global_log_mae(parsed)
    else:
        place = PlaceMetrics({}, {}, {})
        log_mae = None
    entropy = (
        entropy_decomposition(rows, emitted, vocab)
        if len(emitted)
        else EntropyReport(None, None, 0, 0)
    )
    report = MetricsReport(
        task_accuracy=task_accuracy(pairs),
        global_log_mae=log_mae,
        place_metrics=place,
        entropy=entropy,
        n_items=len(pairs),
        n_parsed=len(parsed),
    )
    return EvalResult(report=report, pairs=pairs, generated=answers)
