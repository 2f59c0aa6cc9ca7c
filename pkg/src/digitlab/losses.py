"""Digit-subspace training objectives with analytic gradients.

Every penalty acts on the ten logits of the digit tokens. Two probability
views of those logits coexist: the renormalized softmax distribution p_hat
(a 10-way categorical) and the elementwise sigmoid probabilities p_dot (ten
independent Bernoullis). The combined objective is

    loss = cross_entropy + alpha * mean over supervised digit positions of
           u(t) * penalty(digit logits at t, target digit at t)

where u(t) is the digital place weight of the position inside its number
span (1 when place weighting is off). All gradients are checked against a
central finite-difference oracle; entropies are in nats throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .numbers import (
    DecimalMode,
    NumberSpan,
    PlaceWeightParams,
    Vocab,
    span_place_weights,
)

PROB_FLOOR = 1e-12


class Variant(Enum):
    MLE = "mle"
    NTL = "ntl"
    DIST2 = "dist2"
    DIGIT_ENTROPY = "digit_entropy"
    DEL = "del"
    FOCAL = "focal"


class Rho(Enum):
    ABS_DIFF = "abs_diff"
    SQUARED_DIFF = "squared_diff"


PENALTY_VARIANTS = (Variant.NTL, Variant.DIST2, Variant.DIGIT_ENTROPY, Variant.DEL, Variant.FOCAL)


@dataclass(frozen=True)
class PenaltySpec:
    """Loss configuration: which penalty, its weight, and its shape knobs.

    ``apply_place_weights=None`` resolves to the variant default: on for DEL
    (whose combined form is defined with u(t)), off for everything else.
    """

    variant: Variant = Variant.DEL
    alpha: float = 0.1
    rho: Rho = Rho.SQUARED_DIFF
    tau: float = 1.0
    gamma: float = 2.0
    place_weights: PlaceWeightParams = field(default_factory=PlaceWeightParams)
    apply_place_weights: bool | None = None

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")

    @property
    def place_weighting_on(self) -> bool:
        if self.apply_place_weights is None:
            return self.variant is Variant.DEL
        return self.apply_place_weights

    @property
    def effective_alpha(self) -> float:
        return 0.0 if self.variant is Variant.MLE else self.alpha


@dataclass
class LossOutput:
    """Scalar objective plus the gradient w.r.t. every supervised logit.

    ``value == ce_value + penalty_value``; ``penalty_value`` is the
    alpha-weighted penalty term alone.
    """

    value: float
    grad: np.ndarray
    penalty_value: float
    ce_value: float


@lru_cache(maxsize=8)
def _digit_id_array(vocab: Vocab) -> np.ndarray:
    return np.asarray(vocab.digit_ids, dtype=np.intp)


@lru_cache(maxsize=8)
def _digit_value_by_id(vocab: Vocab) -> np.ndarray:
    """Lookup table token id -> digit value, -1 for non-digits."""
    table = np.full(vocab.size, -1, dtype=np.int64)
    for d, tid in enumerate(vocab.digit_ids):
        table[tid] = d
    return table


def _softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _clip_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR))


def digit_softmax(row: np.ndarray, vocab: Vocab, tau: float = 1.0) -> np.ndarray:
    """Softmax of the digit-token logits at temperature tau (10-vector)."""
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (vocab.size,):
        raise ValueError(f"expected logit row of shape ({vocab.size},), got {row.shape}")
    if not np.all(np.isfinite(row)):
        raise ValueError("logit row contains non-finite values")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return _softmax(row[_digit_id_array(vocab)] / tau)


def digit_sigmoid(row: np.ndarray, vocab: Vocab) -> np.ndarray:
    """Elementwise sigmoid of the digit-token logits (10 Bernoullis)."""
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (vocab.size,):
        raise ValueError(f"expected logit row of shape ({vocab.size},), got {row.shape}")
    if not np.all(np.isfinite(row)):
        raise ValueError("logit row contains non-finite values")
    return _sigmoid(row[_digit_id_array(vocab)])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def ce_loss(rows: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> LossOutput:
    """Mean cross-entropy over masked positions, with its logit gradient.

    ``rows`` is (..., V); ``targets`` and ``mask`` share the leading shape.
    """
    rows = np.asarray(rows)
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    if rows.shape[:-1] != targets.shape or targets.shape != mask.shape:
        raise ValueError("rows, targets and mask shapes disagree")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("mask selects no positions; mean CE is undefined")

    flat = rows.reshape(-1, rows.shape[-1])
    tflat = targets.reshape(-1)
    sel = mask.reshape(-1)
    idx = np.nonzero(sel)[0]
    z = flat[idx].astype(np.float64)
    t = tflat[idx]
    if t.min() < 0 or t.max() >= rows.shape[-1]:
        raise ValueError("target token id out of range")

    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    lse = m[:, 0] + np.log(ez.sum(axis=1))
    logp_t = z[np.arange(len(idx)), t] - lse
    value = float(-logp_t.mean())

    grad = np.zeros_like(flat, dtype=rows.dtype)
    soft = ez / ez.sum(axis=1, keepdims=True)
    soft[np.arange(len(idx)), t] -= 1.0
    grad[idx] = (soft / n).astype(rows.dtype)
    return LossOutput(value=value, grad=grad.reshape(rows.shape), penalty_value=0.0, ce_value=value)


def _one_hot(g: int) -> np.ndarray:
    y = np.zeros(10)
    y[g] = 1.0
    return y


def _check_digit(g: int) -> None:
    if not 0 <= g <= 9:
        raise ValueError(f"target digit must be in [0, 9], got {g}")


def ntl_penalty(p_hat: np.ndarray, g: int) -> tuple[float, np.ndarray]:
    """Expected absolute digit distance R = sum_k p_k |k - g|.

    Gradient w.r.t. the digit logits: dR/dz_k = p_k (|k - g| - R).
    """
    _check_digit(g)
    p = np.asarray(p_hat, dtype=np.float64)
    d = np.abs(np.arange(10.0) - g)
    value = float(p @ d)
    return value, p * (d - value)


def dist2_target(g: int, rho: Rho = Rho.SQUARED_DIFF, tau: float = 1.0) -> np.ndarray:
    """Distance-shaped soft target q_k = softmax(-rho(k, g) / tau)."""
    _check_digit(g)
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    k = np.arange(10.0)
    d = (k - g) ** 2 if rho is Rho.SQUARED_DIFF else np.abs(k - g)
    return _softmax(-d / tau)


def dist2_penalty(p_hat: np.ndarray, q: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(q || p_hat) with gradient dR/dz_k = p_k - q_k over digit logits."""
    p = np.asarray(p_hat, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    logq = np.where(q > 0, _clip_log(q), 0.0)
    value = float(np.sum(q * (logq - _clip_log(p))))
    return value, p - q


def digit_entropy_penalty(p_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """Shannon entropy H(p_hat) in nats; grad = -p_k (log p_k + H)."""
    p = np.asarray(p_hat, dtype=np.float64)
    logp = np.where(p > 0, _clip_log(p), 0.0)
    value = float(-np.sum(p * logp))
    return value, -p * (logp + value)


def del_penalty(
    p_hat: np.ndarray, p_dot: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Digit-probability-weighted BCE: R = sum_k p_k B_k with
    B_k = -y_k log pdot_k - (1-y_k) log(1 - pdot_k).

    Gradient aggregates the softmax and sigmoid paths through the shared
    digit logits: dR/dz_k = p_k (B_k - R + pdot_k - y_k).
    """
    p = np.asarray(p_hat, dtype=np.float64)
    pd = np.asarray(p_dot, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    b = -(y * _clip_log(pd) + (1.0 - y) * _clip_log(1.0 - pd))
    value = float(p @ b)
    return value, p * (b - value + pd - y)


def focal_penalty(p_dot: np.ndarray, y: np.ndarray, gamma: float) -> tuple[float, np.ndarray]:
    """Per-digit focal BCE: sum_k A_k**gamma * B_k with
    A_k = y_k (1 - pdot_k) + (1 - y_k) pdot_k (no softmax path).
    """
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    pd = np.asarray(p_dot, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    b = -(y * _clip_log(pd) + (1.0 - y) * _clip_log(1.0 - pd))
    a = y * (1.0 - pd) + (1.0 - y) * pd
    if gamma == 0:
        return float(b.sum()), pd - y
    a_safe = np.clip(a, PROB_FLOOR, None)  # guards 0**(gamma-1) at saturation
    value = float(np.sum(a_safe**gamma * b))
    grad = gamma * a_safe ** (gamma - 1.0) * (1.0 - 2.0 * y) * pd * (1.0 - pd) * b
    grad += a_safe**gamma * (pd - y)
    return value, grad


def soft_target_entropy(g: int, rho: Rho = Rho.SQUARED_DIFF, tau: float = 1.0) -> float:
    """Entropy H(q) in nats of the distance-shaped soft target for digit g."""
    q = dist2_target(g, rho, tau)
    return float(-np.sum(q * np.log(q)))


def finite_diff_grad(
    f: Callable[[np.ndarray], float], z: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function, float64."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    z = np.asarray(z, dtype=np.float64)
    out = np.empty(z.size, dtype=np.float64)
    flat = z.reshape(-1)
    for i in range(flat.size):
        zp = flat.copy()
        zm = flat.copy()
        zp[i] += eps
        zm[i] -= eps
        fp = f(zp.reshape(z.shape))
        fm = f(zm.reshape(z.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"function is non-finite near coordinate {i}")
        out[i] = (fp - fm) / (2.0 * eps)
    return out.reshape(z.shape)


def penalty_from_logits(
    digit_logits: np.ndarray, g: int, spec: PenaltySpec
) -> tuple[float, np.ndarray]:
    """Penalty value and digit-logit gradient for one position, composing the
    softmax/sigmoid transforms with the variant's penalty."""
    z = np.asarray(digit_logits, dtype=np.float64)
    if z.shape != (10,):
        raise ValueError(f"expected 10 digit logits, got shape {z.shape}")
    _check_digit(g)
    v = spec.variant
    if v is Variant.NTL:
        return ntl_penalty(_softmax(z), g)
    if v is Variant.DIST2:
        return dist2_penalty(_softmax(z), dist2_target(g, spec.rho, spec.tau))
    if v is Variant.DIGIT_ENTROPY:
        return digit_entropy_penalty(_softmax(z))
    if v is Variant.DEL:
        return del_penalty(_softmax(z), _sigmoid(z), _one_hot(g))
    if v is Variant.FOCAL:
        return focal_penalty(_sigmoid(z), _one_hot(g), spec.gamma)
    raise ValueError(f"variant {v} has no penalty term")


def _penalty_batch(Z: np.ndarray, g: np.ndarray, spec: PenaltySpec) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized penalties for rows of digit logits Z (N, 10) and targets g (N,).

    Returns (values (N,), gradients (N, 10)); same math as the scalar ops.
    """
    N = Z.shape[0]
    rows = np.arange(N)
    v = spec.variant
    if v is Variant.NTL:
        p = _softmax(Z, axis=1)
        d = np.abs(np.arange(10.0)[None, :] - g[:, None])
        val = (p * d).sum(axis=1)
        return val, p * (d - val[:, None])
    if v is Variant.DIST2:
        p = _softmax(Z, axis=1)
        q = _dist2_target_table(spec.rho, spec.tau)[g]
        logq = np.log(q)
        val = (q * (logq - _clip_log(p))).sum(axis=1)
        return val, p - q
    if v is Variant.DIGIT_ENTROPY:
        p = _softmax(Z, axis=1)
        logp = _clip_log(p)
        val = -(p * logp).sum(axis=1)
        return val, -p * (logp + val[:, None])
    if v is Variant.DEL:
        p = _softmax(Z, axis=1)
        pd = _sigmoid(Z)
        y = np.zeros((N, 10))
        y[rows, g] = 1.0
        b = -(y * _clip_log(pd) + (1.0 - y) * _clip_log(1.0 - pd))
        val = (p * b).sum(axis=1)
        return val, p * (b - val[:, None] + pd - y)
    if v is Variant.FOCAL:
        pd = _sigmoid(Z)
        y = np.zeros((N, 10))
        y[rows, g] = 1.0
        b = -(y * _clip_log(pd) + (1.0 - y) * _clip_log(1.0 - pd))
        a = y * (1.0 - pd) + (1.0 - y) * pd
        if spec.gamma == 0:
            return b.sum(axis=1), pd - y
        a_safe = np.clip(a, PROB_FLOOR, None)
        val = (a_safe**spec.gamma * b).sum(axis=1)
        grad = spec.gamma * a_safe ** (spec.gamma - 1.0) * (1.0 - 2.0 * y) * pd * (1.0 - pd) * b
        grad += a_safe**spec.gamma * (pd - y)
        return val, grad
    raise ValueError(f"variant {v} has no penalty term")


_DIST2_TABLES: dict[tuple[Rho, float], np.ndarray] = {}


def _dist2_target_table(rho: Rho, tau: float) -> np.ndarray:
    table = _DIST2_TABLES.get((rho, tau))
    if table is None:
        table = np.stack([dist2_target(g, rho, tau) for g in range(10)])
        table.setflags(write=False)
        _DIST2_TABLES[(rho, tau)] = table
    return table


def combined_loss(
    rows: np.ndarray,
    targets: np.ndarray,
    mask: np.ndarray,
    vocab: Vocab,
    spans: Sequence[Sequence[NumberSpan]],
    spec: PenaltySpec,
) -> LossOutput:
    """Cross-entropy plus the alpha-weighted mean digit penalty.

    ``rows`` is (B, T, V); ``spans`` gives the number spans of each target
    row (computed on the same token sequence as ``targets``). The penalty is
    applied exactly at positions that are masked on and whose target token is
    a digit, weighted by u(t) when place weighting is on. With alpha == 0 the
    result (values and gradient) is bitwise identical to plain CE.
    """
    rows = np.asarray(rows)
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    if rows.ndim != 3:
        raise ValueError(f"rows must be (B, T, V), got shape {rows.shape}")
    if len(spans) != rows.shape[0]:
        raise ValueError("need one span list per batch row")

    out = ce_loss(rows, targets, mask)
    alpha = spec.effective_alpha
    if alpha == 0.0:
        return out

    digit_of = _digit_value_by_id(vocab)
    dvals = digit_of[targets]
    pos_mask = mask & (dvals >= 0)
    n_pen = int(pos_mask.sum())
    if n_pen == 0:
        return out

    b_idx, t_idx = np.nonzero(pos_mask)
    g = dvals[b_idx, t_idx]
    did = _digit_id_array(vocab)
    Z = rows[b_idx[:, None], t_idx[:, None], did[None, :]].astype(np.float64)
    values, dgrads = _penalty_batch(Z, g, spec)

    if spec.place_weighting_on:
        u = np.ones(n_pen)
        weight_maps: list[dict[int, float]] = []
        for row_spans in spans:
            wm: dict[int, float] = {}
            for span in row_spans:
                for pos, w in zip(span.digit_positions(), span_place_weights(span, spec.place_weights)):
                    wm[pos] = w
            weight_maps.append(wm)
        for i in range(n_pen):
            u[i] = weight_maps[b_idx[i]].get(int(t_idx[i]), 1.0)
    else:
        u = np.ones(n_pen)

    penalty_value = alpha * float((u * values).sum()) / n_pen
    grad = out.grad.copy()
    contrib = (alpha / n_pen) * u[:, None] * dgrads
    grad[b_idx[:, None], t_idx[:, None], did[None, :]] += contrib.astype(rows.dtype)
    return LossOutput(
        value=out.ce_value + penalty_value,
        grad=grad,
        penalty_value=penalty_value,
        ce_value=out.ce_value,
    )


GRADCHECK_TOL = 1e-6


@dataclass
class GradCheckResult:
    variant: Variant
    trials: int
    eps: float
    max_rel_err: float
    worst_trial: int
    worst_coord: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < GRADCHECK_TOL


def gradient_check(
    variant: Variant,
    trials: int = 1000,
    eps: float = 1e-5,
    seed: int = 0,
    spec: PenaltySpec | None = None,
) -> GradCheckResult:
    """Compare a variant's analytic digit-logit gradient against central
    finite differences over random (logits, target) trials.

    The per-trial error is ||analytic - fd||_inf / max(||fd||_inf, 1e-8):
    relative to the gradient's scale, since fd rounding noise (~1e-10 at
    eps=1e-5 in float64) makes tiny individual coordinates unresolvable.
    """
    if trials <= 0:
        raise ValueError(f"trials must be positive, got {trials}")
    if spec is None:
        spec = PenaltySpec(variant=variant)
    elif spec.variant is not variant:
        raise ValueError("spec.variant disagrees with variant")
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_trial = -1
    worst_coord = -1
    for trial in range(trials):
        z = rng.uniform(-3.0, 3.0, size=10)
        g = int(rng.integers(0, 10))
        _, analytic = penalty_from_logits(z, g, spec)
        fd = finite_diff_grad(lambda zz: penalty_from_logits(zz, g, spec)[0], z, eps)
        diff = np.abs(analytic - fd)
        rel = float(diff.max() / max(np.abs(fd).max(), 1e-8))
        if rel > worst:
            worst = rel
            worst_trial = trial
            worst_coord = int(diff.argmax())
    return GradCheckResult(variant, trials, eps, worst, worst_trial, worst_coord)
