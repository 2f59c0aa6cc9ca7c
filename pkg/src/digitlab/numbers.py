"""Token classification, number-span detection, and digital place weighting.

A number in a token stream is a maximal run matching ``digits ('.' digits)?``
over a character-level vocabulary: one or more digit tokens, optionally
followed by a single decimal point that has at least one digit after it.
Each digit token carries a signed decimal place index (..., 2, 1, 0 for the
integer part, then -1, -2, ... for the fraction), which drives the per-digit
weights used by the floating-point training objectives.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from typing import Sequence

DIGIT_CHARS = "0123456789"

# Tokens that glue several digits (or digits and a dot) into one surface form
# would break the per-digit place indexing, so they are rejected outright.
_FUSED_NUMERIC = re.compile(r"^[0-9.]{2,}$")


@dataclass(frozen=True)
class Vocab:
    """Token inventory with the digit subset and decimal-point token identified.

    ``digit_ids[d]`` is the token id of digit ``d``; ``decimal_point_id`` is
    the token id of ".". Every other token is "other" for span purposes.
    """

    tokens: tuple[str, ...]
    digit_ids: tuple[int, ...]
    decimal_point_id: int

    def __post_init__(self) -> None:
        size = len(self.tokens)
        if len(self.digit_ids) != 10:
            raise ValueError(f"digit_ids must have 10 entries, got {len(self.digit_ids)}")
        if len(set(self.digit_ids)) != 10:
            raise ValueError("digit_ids must be distinct token ids")
        if self.decimal_point_id in self.digit_ids:
            raise ValueError("decimal point token cannot also be a digit token")
        for tid in (*self.digit_ids, self.decimal_point_id):
            if not 0 <= tid < size:
                raise ValueError(f"token id {tid} out of range for vocab of size {size}")
        for tok in self.tokens:
            if _FUSED_NUMERIC.match(tok):
                raise ValueError(
                    f"token {tok!r} fuses multiple digit characters; "
                    "digits must be single-character tokens"
                )

    @property
    def size(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocab":
        """Build a vocab by locating the "0".."9" and "." tokens."""
        toks = tuple(tokens)
        by_string: dict[str, int] = {}
        for i, tok in enumerate(toks):
            if tok in by_string and (tok in DIGIT_CHARS or tok == "."):
                raise ValueError(f"duplicate token {tok!r} in vocabulary")
            by_string.setdefault(tok, i)
        missing = [c for c in DIGIT_CHARS + "." if c not in by_string]
        if missing:
            raise ValueError(f"vocabulary is missing tokens: {missing}")
        return cls(
            tokens=toks,
            digit_ids=tuple(by_string[c] for c in DIGIT_CHARS),
            decimal_point_id=by_string["."],
        )

    def token_id(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    def encode(self, text: str) -> list[int]:
        """Map a string to token ids, one id per character."""
        return [self.token_id(ch) for ch in text]

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.tokens[i] for i in ids)


class TokenKind(Enum):
    DIGIT = "digit"
    DECIMAL_POINT = "decimal_point"
    OTHER = "other"


@dataclass(frozen=True)
class TokenClass:
    """Semantic class of one token: a digit with its value, ".", or other."""

    kind: TokenKind
    digit: int | None = None

    def __post_init__(self) -> None:
        if self.kind is TokenKind.DIGIT:
            if self.digit is None or not 0 <= self.digit <= 9:
                raise ValueError(f"digit value must be in [0, 9], got {self.digit}")
        elif self.digit is not None:
            raise ValueError("digit value only valid for DIGIT tokens")


def classify_token(vocab: Vocab, token_id: int) -> TokenClass:
    """Classify one token id as Digit(d), DecimalPoint, or Other."""
    if not 0 <= token_id < vocab.size:
        raise ValueError(f"token id {token_id} out of range for vocab of size {vocab.size}")
    if token_id == vocab.decimal_point_id:
        return TokenClass(TokenKind.DECIMAL_POINT)
    try:
        d = vocab.digit_ids.index(token_id)
    except ValueError:
        return TokenClass(TokenKind.OTHER)
    return TokenClass(TokenKind.DIGIT, d)


def digit_value(vocab: Vocab, token_id: int) -> int | None:
    """Digit value of a token id, or None if it is not a digit token."""
    try:
        return vocab.digit_ids.index(token_id)
    except ValueError:
        return None


@dataclass(frozen=True)
class NumberSpan:
    """One maximal floating-point number run inside a token sequence.

    ``start``..``end`` are inclusive token indices. ``places`` holds the
    signed place index of each digit token, left to right, skipping the dot:
    integer digits get ``int_len-1`` down to ``0``, decimal digits ``-1``
    down to ``-frac_len``.
    """

    start: int
    end: int
    int_len: int
    frac_len: int
    dot_index: int | None
    places: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.int_len < 1 or self.frac_len < 0:
            raise ValueError("span needs at least one integer digit")
        if (self.dot_index is not None) != (self.frac_len > 0):
            raise ValueError("dot_index must be present iff frac_len > 0")
        expected = tuple(range(self.int_len - 1, -1, -1)) + tuple(
            range(-1, -self.frac_len - 1, -1)
        )
        if self.places != expected:
            raise ValueError(f"places {self.places} do not match lengths")

    def digit_positions(self) -> tuple[int, ...]:
        """Token indices of the digit tokens, left to right."""
        int_part = range(self.start, self.start + self.int_len)
        if self.frac_len == 0:
            return tuple(int_part)
        assert self.dot_index is not None
        return tuple(int_part) + tuple(range(self.dot_index + 1, self.end + 1))

    def place_by_position(self) -> dict[int, int]:
        return dict(zip(self.digit_positions(), self.places))


def _make_span(start: int, int_len: int, frac_len: int) -> NumberSpan:
    dot = start + int_len if frac_len > 0 else None
    end = start + int_len - 1 if frac_len == 0 else start + int_len + frac_len
    places = tuple(range(int_len - 1, -1, -1)) + tuple(range(-1, -frac_len - 1, -1))
    return NumberSpan(start, end, int_len, frac_len, dot, places)


def find_number_spans(vocab: Vocab, tokens: Sequence[int]) -> list[NumberSpan]:
    """Find every maximal span matching ``digits ('.' digits)?``.

    A dot is part of a span only when directly surrounded by digits; a second
    dot ends the span before it ("1.2.3" parses as "1.2" then "3").
    """
    digit_set = frozenset(vocab.digit_ids)
    dot = vocab.decimal_point_id
    spans: list[NumberSpan] = []
    n = len(tokens)
    i = 0
    while i < n:
        if tokens[i] not in digit_set:
            if not 0 <= tokens[i] < vocab.size:
                raise ValueError(f"token id {tokens[i]} out of range")
            i += 1
            continue
        j = i
        while j < n and tokens[j] in digit_set:
            j += 1
        int_len = j - i
        frac_len = 0
        if j + 1 < n and tokens[j] == dot and tokens[j + 1] in digit_set:
            k = j + 1
            while k < n and tokens[k] in digit_set:
                k += 1
            frac_len = k - j - 1
            j = k
        spans.append(_make_span(i, int_len, frac_len))
        i = j
    return spans


class DecimalMode(Enum):
    """How decimal places are weighted relative to the integer part."""

    EXP_DECAY = "exp_decay"
    NO_PENALTY = "no_penalty"
    CONSTANT = "constant"
    AS_INTEGERS = "as_integers"


@dataclass(frozen=True)
class PlaceWeightParams:
    """Place-weight shape: linear slope k for integer places, decay base
    beta for decimals (EXP_DECAY mode). Defaults k=2, beta=1.02."""

    k: float = 2.0
    beta: float = 1.02
    decimal_mode: DecimalMode = DecimalMode.EXP_DECAY

    def __post_init__(self) -> None:
        if not self.k > 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.decimal_mode is DecimalMode.EXP_DECAY and not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")


def place_weight(i: int, params: PlaceWeightParams, frac_len: int = 0) -> float:
    """Penalty weight u for a digit at place index i.

    Integer places (i >= 0) always get k*i + 1. Decimal places depend on the
    mode: beta**i (EXP_DECAY), 0 (NO_PENALTY), 1 (CONSTANT), or — in
    AS_INTEGERS mode — the fraction is re-read as a standalone integer whose
    leftmost digit has the highest place, reproducing the discontinuous jump
    at the dot. AS_INTEGERS needs ``frac_len`` of the enclosing span.
    """
    if i >= 0:
        return params.k * i + 1.0
    mode = params.decimal_mode
    if mode is DecimalMode.EXP_DECAY:
        return float(params.beta**i)
    if mode is DecimalMode.NO_PENALTY:
        return 0.0
    if mode is DecimalMode.CONSTANT:
        return 1.0
    if frac_len < -i:
        raise ValueError(
            f"AS_INTEGERS weighting at place {i} needs frac_len >= {-i}, got {frac_len}"
        )
    return params.k * (frac_len + i) + 1.0  # re-indexed place frac_len - |i|


def span_place_weights(span: NumberSpan, params: PlaceWeightParams) -> list[float]:
    """Weight of each digit token in the span, aligned with ``span.places``."""
    return [place_weight(i, params, span.frac_len) for i in span.places]


def decode_number(vocab: Vocab, span: NumberSpan, tokens: Sequence[int]) -> Decimal:
    """Exact decimal value of a span: sum of d_i * 10**i over its digits."""
    if span.end >= len(tokens):
        raise ValueError("span extends past the token sequence")
    chars: list[str] = []
    for pos in range(span.start, span.start + span.int_len):
        d = digit_value(vocab, tokens[pos])
        if d is None:
            raise ValueError(f"span expects a digit at position {pos}")
        chars.append(DIGIT_CHARS[d])
    if span.frac_len > 0:
        assert span.dot_index is not None
        if tokens[span.dot_index] != vocab.decimal_point_id:
            raise ValueError(f"span expects '.' at position {span.dot_index}")
        chars.append(".")
        for pos in range(span.dot_index + 1, span.end + 1):
            d = digit_value(vocab, tokens[pos])
            if d is None:
                raise ValueError(f"span expects a digit at position {pos}")
            chars.append(DIGIT_CHARS[d])
    # Decimal construction from a digit string is exact at any length.
    return Decimal("".join(chars))
