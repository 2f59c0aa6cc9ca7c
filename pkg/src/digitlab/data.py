"""Deterministic synthetic arithmetic data at controllable digit widths.

Each sample is a character-tokenized prompt like "47+35=" with the exact
result as the answer, followed by the end-of-sequence token. Supervision
masks cover the answer (and EOS) only. Train/eval splits are disjoint by
construction: every operand tuple hashes into a fixed bucket, and the eval
split owns bucket 0.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numbers import Vocab, decode_number, find_number_spans

EVAL_BUCKETS = 5  # operand hashes with h % EVAL_BUCKETS == 0 belong to eval

DEFAULT_TOKENS = (
    "<pad>",
    "<eos>",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    ".",
    "+", "-", "*", "=",
    " ", "x", "!",
)


def default_vocab() -> Vocab:
    """The 20-token toy vocabulary used by the bundled tasks."""
    return Vocab.from_tokens(DEFAULT_TOKENS)


def pad_id(vocab: Vocab) -> int:
    return vocab.token_id("<pad>")


def eos_id(vocab: Vocab) -> int:
    return vocab.token_id("<eos>")


class TaskKind(Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    FLOAT_ADD = "float_add"
    COPY = "copy"


class Split(Enum):
    TRAIN = "train"
    EVAL = "eval"


class ConfigError(ValueError):
    """Invalid task or experiment configuration."""


@dataclass(frozen=True)
class ArithTask:
    """One synthetic task: kind, digit widths, sample count, seed, split."""

    kind: TaskKind
    operand_digits: int = 2
    frac_digits: int = 0
    count: int = 1000
    seed: int = 0
    split: Split = Split.TRAIN

    def __post_init__(self) -> None:
        if not 1 <= self.operand_digits <= 4:
            raise ConfigError(f"operand_digits must be in [1, 4], got {self.operand_digits}")
        if not 0 <= self.frac_digits <= 3:
            raise ConfigError(f"frac_digits must be in [0, 3], got {self.frac_digits}")
        if self.frac_digits > 0 and self.kind not in (TaskKind.FLOAT_ADD, TaskKind.COPY):
            raise ConfigError(f"frac_digits only applies to float_add/copy, not {self.kind.value}")
        if self.count <= 0:
            raise ConfigError(f"count must be positive, got {self.count}")


@dataclass(frozen=True)
class Sample:
    """One prompt/answer pair; ``answer_tokens`` includes the terminal EOS."""

    prompt_tokens: tuple[int, ...]
    answer_tokens: tuple[int, ...]
    answer_value: Decimal
    mask: tuple[bool, ...]

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.prompt_tokens + self.answer_tokens


_OP_CHAR = {
    TaskKind.ADD: "+",
    TaskKind.SUB: "-",
    TaskKind.MUL: "*",
    TaskKind.FLOAT_ADD: "+",
}


def _operand_bucket(kind: TaskKind, operands: tuple[str, ...]) -> int:
    # Commutative kinds hash the unordered pair so "a+b" and "b+a" share a split.
    if kind in (TaskKind.ADD, TaskKind.MUL, TaskKind.FLOAT_ADD):
        operands = tuple(sorted(operands))
    key = f"{kind.value}:{':'.join(operands)}".encode()
    h = int.from_bytes(hashlib.sha256(key).digest()[:8], "big")
    return h % EVAL_BUCKETS


def _draw_int(rng: np.random.Generator, digits: int) -> int:
    if digits == 1:
        return int(rng.integers(0, 10))
    return int(rng.integers(10 ** (digits - 1), 10**digits))


def _draw_operand(rng: np.random.Generator, task: ArithTask) -> str:
    whole = _draw_int(rng, task.operand_digits)
    if task.frac_digits == 0:
        return str(whole)
    frac = "".join(str(rng.integers(0, 10)) for _ in range(task.frac_digits))
    return f"{whole}.{frac}"


def _render_answer(kind: TaskKind, operands: tuple[str, ...], frac_digits: int) -> tuple[str, Decimal]:
    if kind is TaskKind.COPY:
        return operands[0], Decimal(operands[0])
    a, b = Decimal(operands[0]), Decimal(operands[1])
    if kind is TaskKind.ADD:
        value = a + b
    elif kind is TaskKind.SUB:
        value = a - b
    elif kind is TaskKind.MUL:
        value = a * b
    else:
        value = (a + b).quantize(Decimal(1).scaleb(-frac_digits)) if frac_digits else a + b
    if frac_digits:
        text = f"{value:f}"
    else:
        text = str(int(value))
    return text, value


def _build_sample(vocab: Vocab, kind: TaskKind, operands: tuple[str, ...], frac_digits: int) -> Sample:
    if kind is TaskKind.COPY:
        prompt = f"{operands[0]}="
    else:
        prompt = f"{operands[0]}{_OP_CHAR[kind]}{operands[1]}="
    answer_text, value = _render_answer(kind, operands, frac_digits)
    prompt_ids = tuple(vocab.encode(prompt))
    answer_ids = tuple(vocab.encode(answer_text)) + (eos_id(vocab),)
    mask = (False,) * len(prompt_ids) + (True,) * len(answer_ids)
    return Sample(prompt_ids, answer_ids, value, mask)


def gen_task(task: ArithTask, vocab: Vocab) -> list[Sample]:
    """Generate the task's samples, deterministic in (task, seed).

    Operand tuples are drawn until ``count`` distinct ones land in the
    requested split's hash buckets; train and eval never share a tuple.
    """
    required = set("0123456789=") | ({"."} if task.frac_digits else set())
    if task.kind is not TaskKind.COPY:
        required.add(_OP_CHAR[task.kind])
    if task.kind is TaskKind.SUB:
        required.add("-")
    for ch in sorted(required):
        if ch not in vocab.tokens:
            raise ConfigError(f"vocabulary is missing the {ch!r} token")
    if "<eos>" not in vocab.tokens:
        raise ConfigError("vocabulary is missing the '<eos>' token")

    rng = np.random.default_rng(task.seed)
    n_operands = 1 if task.kind is TaskKind.COPY else 2
    want_eval = task.split is Split.EVAL
    samples: list[Sample] = []
    seen: set[tuple[str, ...]] = set()
    attempts = 0
    max_attempts = max(100_000, 1000 * task.count)
    while len(samples) < task.count:
        attempts += 1
        if attempts > max_attempts:
            raise ConfigError(
                f"could not draw {task.count} distinct {task.split.value} operand tuples "
                f"at {task.operand_digits} digits; reduce count"
            )
        operands = tuple(_draw_operand(rng, task) for _ in range(n_operands))
        if operands in seen:
            continue
        in_eval = _operand_bucket(task.kind, operands) == 0
        if in_eval != want_eval:
            continue
        seen.add(operands)
        samples.append(_build_sample(vocab, task.kind, operands, task.frac_digits))
    return samples


def _operand_key(vocab: Vocab, sample: Sample) -> tuple[str, ...]:
    prompt = vocab.decode(sample.prompt_tokens)
    body = prompt[:-1]  # strip '='
    for op in ("+", "*"):
        if op in body:
            a, b = body.split(op, 1)
            return tuple(sorted((a, b)))
    if "-" in body[1:]:  # skip a leading sign
        idx = body.index("-", 1)
        return (body[:idx], body[idx + 1 :])
    return (body,)


def split_disjointness_check(
    train: Sequence[Sample], eval: Sequence[Sample], vocab: Vocab | None = None
) -> bool:
    """True iff no operand tuple appears in both splits."""
    if not train or not eval:
        return True
    vocab = vocab or default_vocab()
    train_keys = {_operand_key(vocab, s) for s in train}
    return all(_operand_key(vocab, s) not in train_keys for s in eval)


def verify_samples(samples: Iterable[Sample], vocab: Vocab) -> None:
    """Check that every answer re-parses to its recorded value.

    The first number span of the answer tokens must decode to the answer
    magnitude (the sign lives in a separate '-' token for negative answers).
    """
    for i, s in enumerate(samples):
        spans = find_number_spans(vocab, s.answer_tokens)
        if not spans:
            raise AssertionError(f"sample {i}: no number span in answer")
        got = decode_number(vocab, spans[0], s.answer_tokens)
        if got != abs(s.answer_value):
            raise AssertionError(f"sample {i}: answer decodes to {got}, expected {s.answer_value}")
        if len(s.mask) != len(s.tokens):
            raise AssertionError(f"sample {i}: mask length mismatch")


def write_jsonl(path: str | Path, samples: Sequence[Sample], vocab: Vocab, seed: int) -> None:
    """One JSON object per line: prompt string, answer string, seed, index."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for i, s in enumerate(samples):
            answer = vocab.decode(s.answer_tokens[:-1])  # strip EOS
            rec = {
                "prompt": vocab.decode(s.prompt_tokens),
                "answer": answer,
                "seed": seed,
                "index": i,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path: str | Path, vocab: Vocab) -> list[Sample]:
    samples = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            prompt_ids = tuple(vocab.encode(rec["prompt"]))
            answer_ids = tuple(vocab.encode(rec["answer"])) + (eos_id(vocab),)
            mask = (False,) * len(prompt_ids) + (True,) * len(answer_ids)
            samples.append(Sample(prompt_ids, answer_ids, Decimal(rec["answer"]), mask))
    return samples
