"""Evaluation metrics: per-place accuracy/MAE, global log MAE, digit vs
non-digit entropy decomposition, task accuracy, and embedding distance
matrices.

Numbers are aligned at the decimal point; a place missing from the
prediction reads as digit 0. Predictions that contain no number span count
as task failures and are excluded from the error aggregates (their count is
reported). Entropies are in nats over the full vocabulary.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from decimal import Decimal
from io import StringIO
from pathlib import Path
from typing import Sequence

import numpy as np

from .numbers import Vocab, digit_value


@dataclass
class PlaceMetrics:
    """Digit-level agreement per decimal place present in the ground truth."""

    per_place_mae: dict[int, float]
    per_place_acc: dict[int, float]
    support: dict[int, int]


@dataclass
class EntropyReport:
    """Mean full-vocabulary entropy at generated positions, by token class.

    A mean is None when no position of that class was recorded.
    """

    digit_entropy_mean: float | None
    nondigit_entropy_mean: float | None
    digit_count: int
    nondigit_count: int


@dataclass
class MetricsReport:
    task_accuracy: float
    global_log_mae: float | None
    place_metrics: PlaceMetrics
    entropy: EntropyReport
    n_items: int
    n_parsed: int


def digit_at_place(value: Decimal, place: int) -> int:
    """Digit of |value| at the given power-of-ten place (0 when absent)."""
    sign, digits, exp = value.as_tuple()
    j = len(digits) - 1 + exp - place
    if 0 <= j < len(digits):
        return digits[j]
    return 0


def _gt_places(value: Decimal) -> range:
    """Places asserted by the ground truth: its rendered digits, always
    reaching down to place 0 for pure fractions like 0.5."""
    _, digits, exp = value.as_tuple()
    top = max(len(digits) - 1 + exp, 0)
    return range(top, exp - 1 if exp < 0 else -1, -1)


def per_place_metrics(pairs: Sequence[tuple[Decimal, Decimal]]) -> PlaceMetrics:
    """Compare prediction and ground-truth digits place by place.

    For every place present in a ground truth, the prediction's digit at the
    same place (0 if absent) contributes one accuracy flag and one absolute
    digit difference. Signs are ignored; places with no support are omitted.
    """
    if not pairs:
        raise ValueError("per-place metrics need at least one pair")
    acc: dict[int, int] = {}
    mae: dict[int, int] = {}
    support: dict[int, int] = {}
    for pred, gt in pairs:
        p, g = abs(pred), abs(gt)
        for place in _gt_places(g):
            dp = digit_at_place(p, place)
            dg = digit_at_place(g, place)
            support[place] = support.get(place, 0) + 1
            acc[place] = acc.get(place, 0) + (dp == dg)
            mae[place] = mae.get(place, 0) + abs(dp - dg)
    return PlaceMetrics(
        per_place_mae={i: mae[i] / support[i] for i in support},
        per_place_acc={i: acc[i] / support[i] for i in support},
        support=dict(support),
    )


def global_log_mae(pairs: Sequence[tuple[Decimal, Decimal]]) -> float:
    """Mean of log10(1 + |prediction - truth|) over the pairs."""
    if not pairs:
        raise ValueError("global log MAE needs at least one pair")
    total = 0.0
    for pred, gt in pairs:
        total += float(np.log10(1.0 + abs(float(pred - gt))))
    return total / len(pairs)


def task_accuracy(pairs: Sequence[tuple[Decimal | None, Decimal]]) -> float:
    """Fraction of predictions exactly equal to the truth; None never matches."""
    if not pairs:
        return 0.0
    hits = sum(1 for pred, gt in pairs if pred is not None and pred == gt)
    return hits / len(pairs)


def entropy_decomposition(
    rows: np.ndarray, emitted: Sequence[int], vocab: Vocab
) -> EntropyReport:
    """Split generated positions by emitted-token class and average the
    full-vocabulary Shannon entropy of each position's distribution."""
    rows = np.asarray(rows, dtype=np.float64)
    emitted = np.asarray(emitted)
    if rows.ndim != 2 or rows.shape[0] != emitted.shape[0]:
        raise ValueError("need one logit row per emitted token")
    if rows.shape[0] == 0:
        return EntropyReport(None, None, 0, 0)
    m = rows.max(axis=1, keepdims=True)
    ez = np.exp(rows - m)
    sez = ez.sum(axis=1)
    ent = m[:, 0] + np.log(sez) - (ez / sez[:, None] * rows).sum(axis=1)
    is_digit = np.array([digit_value(vocab, int(t)) is not None for t in emitted])
    dig = ent[is_digit]
    non = ent[~is_digit]
    return EntropyReport(
        digit_entropy_mean=float(dig.mean()) if dig.size else None,
        nondigit_entropy_mean=float(non.mean()) if non.size else None,
        digit_count=int(dig.size),
        nondigit_count=int(non.size),
    )


def cosine_distance_matrix(embeddings: np.ndarray) -> np.ndarray:
    """10x10 matrix of 1 - cos(e_i, e_j); symmetric with a zero diagonal."""
    e = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(e, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm embedding")
    n = e / norms[:, None]
    m = 1.0 - n @ n.T
    m = (m + m.T) / 2.0
    np.fill_diagonal(m, 0.0)
    return m


def ideal_distance_matrix() -> tuple[np.ndarray, np.ndarray]:
    """|i - j| over digits 0..9, plus the same matrix scaled into [0, 1]."""
    idx = np.arange(10.0)
    m = np.abs(idx[:, None] - idx[None, :])
    return m, m / 9.0


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "task_accuracy": report.task_accuracy,
        "global_log_mae": report.global_log_mae,
        "n_items": report.n_items,
        "n_parsed": report.n_parsed,
        "per_place": {
            str(i): {
                "acc": report.place_metrics.per_place_acc[i],
                "mae": report.place_metrics.per_place_mae[i],
                "support": report.place_metrics.support[i],
            }
            for i in sorted(report.place_metrics.support, reverse=True)
        },
        "entropy": {
            "digit_mean": report.entropy.digit_entropy_mean,
            "nondigit_mean": report.entropy.nondigit_entropy_mean,
            "digit_count": report.entropy.digit_count,
            "nondigit_count": report.entropy.nondigit_count,
        },
    }


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n"


def place_table_csv(place: PlaceMetrics) -> str:
    out = StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["place", "acc", "mae", "support"])
    for i in sorted(place.support, reverse=True):
        writer.writerow([i, repr(place.per_place_acc[i]), repr(place.per_place_mae[i]), place.support[i]])
    return out.getvalue()


def matrix_csv(matrix: np.ndarray) -> str:
    out = StringIO()
    writer = csv.writer(out, lineterminator="\n")
    for row in np.asarray(matrix):
        writer.writerow([repr(float(x)) for x in row])
    return out.getvalue()


def write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
