"""Small autoregressive next-token models with hand-written backprop.

Two architectures share the embedding/head plumbing: a causal pre-norm
transformer and a windowed feed-forward baseline that sees only the last
WINDOW token embeddings per position. Forward passes cache every activation
needed by the exact reverse-mode pass; gradients are validated against
central finite differences on a micro configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

LN_EPS = 1e-5
WINDOW = 12  # receptive field of the feed-forward baseline
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Arch(Enum):
    TRANSFORMER = "transformer"
    WINDOW_MLP = "window_mlp"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    context_len: int = 48
    arch: Arch = Arch.TRANSFORMER
    init_seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be at least 2, got {self.vocab_size}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.context_len < 1:
            raise ValueError("context_len must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class ModelState:
    """Named parameter tensors plus the optimizer step counter."""

    params: dict[str, np.ndarray]
    step: int = 0

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def copy(self) -> "ModelState":
        return ModelState({k: v.copy() for k, v in self.params.items()}, self.step)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter name -> shape map; init and checkpoints follow this order."""
    V, D, C = config.vocab_size, config.d_model, config.context_len
    shapes: dict[str, tuple[int, ...]] = {"tok_emb": (V, D)}
    if config.arch is Arch.TRANSFORMER:
        shapes["pos_emb"] = (C, D)
        for i in range(config.n_layers):
            p = f"layer{i}."
            shapes[p + "ln1.g"] = (D,)
            shapes[p + "ln1.b"] = (D,)
            shapes[p + "attn.w_qkv"] = (D, 3 * D)
            shapes[p + "attn.b_qkv"] = (3 * D,)
            shapes[p + "attn.w_out"] = (D, D)
            shapes[p + "attn.b_out"] = (D,)
            shapes[p + "ln2.g"] = (D,)
            shapes[p + "ln2.b"] = (D,)
            shapes[p + "mlp.w1"] = (D, 4 * D)
            shapes[p + "mlp.b1"] = (4 * D,)
            shapes[p + "mlp.w2"] = (4 * D, D)
            shapes[p + "mlp.b2"] = (D,)
    else:
        shapes["win.w1"] = (WINDOW * D, 4 * D)
        shapes["win.b1"] = (4 * D,)
        shapes["win.w2"] = (4 * D, D)
        shapes["win.b2"] = (D,)
    shapes["ln_f.g"] = (D,)
    shapes["ln_f.b"] = (D,)
    shapes["head.w"] = (D, V)
    shapes["head.b"] = (V,)
    return shapes


def init_model(config: ModelConfig, dtype: np.dtype = np.float32) -> ModelState:
    """Initialize parameters from config.init_seed; residual-output matrices
    are scaled down by sqrt(2 * n_layers) as usual for deep residual nets."""
    rng = np.random.default_rng(config.init_seed)
    resid_scale = 0.02 / math.sqrt(2 * max(config.n_layers, 1))
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".g"):
            p = np.ones(shape)
        elif name.endswith((".b", ".b_qkv", ".b_out", ".b1", ".b2")):
            p = np.zeros(shape)
        elif name.endswith(("attn.w_out", "mlp.w2", "win.w2")):
            p = rng.standard_normal(shape) * resid_scale
        else:
            p = rng.standard_normal(shape) * 0.02
        params[name] = p.astype(dtype)
    return ModelState(params)


_CAUSAL_MASKS: dict[int, np.ndarray] = {}


def _causal_mask(t: int) -> np.ndarray:
    mask = _CAUSAL_MASKS.get(t)
    if mask is None:
        mask = np.tril(np.ones((t, t), dtype=bool))
        _CAUSAL_MASKS[t] = mask
    return mask


def _gelu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (gelu(x), tanh term); the tanh is cached for the backward pass.

    Cubing via x * x * x, not x**3: float32 pow falls off numpy's fast path.
    """
    u = _GELU_C * (x + _GELU_A * (x * x * x))
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * (x * x))


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + np.asarray(LN_EPS, dtype=x.dtype))
    xhat = (x - mu) * rstd
    return xhat * g + b, xhat, rstd


def _layernorm_backward(dy, xhat, rstd, g):
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _validate_ids(config: ModelConfig, ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ValueError(f"token batch must be 2-D (batch, seq), got shape {ids.shape}")
    if ids.shape[1] > config.context_len:
        raise ValueError(
            f"sequence length {ids.shape[1]} exceeds context_len {config.context_len}"
        )
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise ValueError("token id out of range")
    return ids


def forward_with_cache(state: ModelState, config: ModelConfig, ids: np.ndarray):
    """Shared forward pass; returns (logits, final hidden states, cache)."""
    ids = _validate_ids(config, ids)
    P = state.params
    B, T = ids.shape
    cache: dict = {"ids": ids}

    if config.arch is Arch.TRANSFORMER:
        x = P["tok_emb"][ids] + P["pos_emb"][:T]
        layers = []
        H, dh = config.n_heads, config.head_dim
        scale = np.asarray(1.0 / math.sqrt(dh), dtype=x.dtype)
        mask = _causal_mask(T)
        for i in range(config.n_layers):
            p = f"layer{i}."
            lc: dict = {"x_in": x}
            a, lc["xhat1"], lc["rstd1"] = _layernorm(x, P[p + "ln1.g"], P[p + "ln1.b"])
            lc["a"] = a
            qkv = a.reshape(B * T, -1) @ P[p + "attn.w_qkv"] + P[p + "attn.b_qkv"]
            qkv = qkv.reshape(B, T, 3, H, dh).transpose(2, 0, 3, 1, 4).reshape(3, B * H, T, dh)
            q, k, v = qkv[0], qkv[1], qkv[2]
            s = (q @ k.transpose(0, 2, 1)) * scale
            s = np.where(mask, s, np.asarray(-np.inf, dtype=s.dtype))
            s = s - s.max(axis=-1, keepdims=True)
            att = np.exp(s)
            att = att / att.sum(axis=-1, keepdims=True)
            o = att @ v
            o = o.reshape(B, H, T, dh).transpose(0, 2, 1, 3).reshape(B, T, -1)
            att_out = o.reshape(B * T, -1) @ P[p + "attn.w_out"] + P[p + "attn.b_out"]
            lc.update(q=q, k=k, v=v, att=att, o=o, scale=scale)
            x = x + att_out.reshape(B, T, -1)
            lc["x_mid"] = x
            a2, lc["xhat2"], lc["rstd2"] = _layernorm(x, P[p + "ln2.g"], P[p + "ln2.b"])
            lc["a2"] = a2
            h = a2.reshape(B * T, -1) @ P[p + "mlp.w1"] + P[p + "mlp.b1"]
            hg, ht = _gelu(h)
            f = hg @ P[p + "mlp.w2"] + P[p + "mlp.b2"]
            lc.update(h=h, hg=hg, ht=ht)
            x = x + f.reshape(B, T, -1)
            layers.append(lc)
        cache["layers"] = layers
    else:
        emb = P["tok_emb"][ids]
        D = config.d_model
        ep = np.concatenate([np.zeros((B, WINDOW - 1, D), dtype=emb.dtype), emb], axis=1)
        win = np.stack([ep[:, j : j + T] for j in range(WINDOW)], axis=2)  # (B,T,W,D)
        flat = win.reshape(B * T, WINDOW * D)
        h = flat @ P["win.w1"] + P["win.b1"]
        hg, ht = _gelu(h)
        x = (hg @ P["win.w2"] + P["win.b2"]).reshape(B, T, D)
        cache.update(win_flat=flat, h=h, hg=hg, ht=ht)

    cache["x_f_in"] = x
    xf, cache["xhat_f"], cache["rstd_f"] = _layernorm(x, P["ln_f.g"], P["ln_f.b"])
    cache["xf"] = xf
    logits = xf.reshape(-1, config.d_model) @ P["head.w"] + P["head.b"]
    return logits.reshape(ids.shape[0], ids.shape[1], -1), xf, cache


def model_forward(
    state: ModelState, config: ModelConfig, token_batch: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Causal logits (B, T, V) and final hidden states (B, T, d_model)."""
    logits, hidden, _ = forward_with_cache(state, config, token_batch)
    return logits, hidden


def model_backward(
    state: ModelState, config: ModelConfig, cache: dict, logits_grad: np.ndarray
) -> dict[str, np.ndarray]:
    """Reverse-mode pass: gradients for every parameter given d(loss)/d(logits)."""
    P = state.params
    ids = cache["ids"]
    B, T = ids.shape
    D = config.d_model
    dlogits = np.asarray(logits_grad)
    if dlogits.shape != (B, T, config.vocab_size):
        raise ValueError(
            f"logits_grad shape {dlogits.shape} does not match (B, T, V)=({B}, {T}, {config.vocab_size})"
        )
    grads: dict[str, np.ndarray] = {}

    dflat = dlogits.reshape(B * T, -1)
    grads["head.w"] = cache["xf"].reshape(B * T, D).T @ dflat
    grads["head.b"] = dflat.sum(axis=0)
    dxf = (dflat @ P["head.w"].T).reshape(B, T, D)
    dx, grads["ln_f.g"], grads["ln_f.b"] = _layernorm_backward(
        dxf, cache["xhat_f"], cache["rstd_f"], P["ln_f.g"]
    )

    if config.arch is Arch.TRANSFORMER:
        H, dh = config.n_heads, config.head_dim
        for i in reversed(range(config.n_layers)):
            p = f"layer{i}."
            lc = cache["layers"][i]
            # MLP block
            df = dx.reshape(B * T, D)
            grads[p + "mlp.w2"] = lc["hg"].T @ df
            grads[p + "mlp.b2"] = df.sum(axis=0)
            dhg = df @ P[p + "mlp.w2"].T
            dh_ = dhg * _gelu_grad(lc["h"], lc["ht"])
            grads[p + "mlp.w1"] = lc["a2"].reshape(B * T, D).T @ dh_
            grads[p + "mlp.b1"] = dh_.sum(axis=0)
            da2 = (dh_ @ P[p + "mlp.w1"].T).reshape(B, T, D)
            dx_mid, grads[p + "ln2.g"], grads[p + "ln2.b"] = _layernorm_backward(
                da2, lc["xhat2"], lc["rstd2"], P[p + "ln2.g"]
            )
            dx = dx + dx_mid
            # attention block
            datt_out = dx.reshape(B * T, D)
            grads[p + "attn.w_out"] = lc["o"].reshape(B * T, D).T @ datt_out
            grads[p + "attn.b_out"] = datt_out.sum(axis=0)
            do = (datt_out @ P[p + "attn.w_out"].T).reshape(B, T, H, dh)
            do = do.transpose(0, 2, 1, 3).reshape(B * H, T, dh)
            att, q, k, v = lc["att"], lc["q"], lc["k"], lc["v"]
            datt = do @ v.transpose(0, 2, 1)
            dv = att.transpose(0, 2, 1) @ do
            ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
            ds = ds * lc["scale"]
            dq = ds @ k
            dk = ds.transpose(0, 2, 1) @ q
            dqkv = np.stack([dq, dk, dv])  # (3, B*H, T, dh)
            dqkv = (
                dqkv.reshape(3, B, H, T, dh)
                .transpose(1, 3, 0, 2, 4)
                .reshape(B * T, 3 * D)
            )
            grads[p + "attn.w_qkv"] = lc["a"].reshape(B * T, D).T @ dqkv
            grads[p + "attn.b_qkv"] = dqkv.sum(axis=0)
            da = (dqkv @ P[p + "attn.w_qkv"].T).reshape(B, T, D)
            dx_in, grads[p + "ln1.g"], grads[p + "ln1.b"] = _layernorm_backward(
                da, lc["xhat1"], lc["rstd1"], P[p + "ln1.g"]
            )
            dx = dx + dx_in
        grads["pos_emb"] = np.zeros_like(P["pos_emb"])
        grads["pos_emb"][:T] = dx.sum(axis=0)
        grads["tok_emb"] = np.zeros_like(P["tok_emb"])
        np.add.at(grads["tok_emb"], ids, dx)
    else:
        df = dx.reshape(B * T, D)
        grads["win.w2"] = cache["hg"].T @ df
        grads["win.b2"] = df.sum(axis=0)
        dhg = df @ P["win.w2"].T
        dh_ = dhg * _gelu_grad(cache["h"], cache["ht"])
        grads["win.w1"] = cache["win_flat"].T @ dh_
        grads["win.b1"] = dh_.sum(axis=0)
        dwin = (dh_ @ P["win.w1"].T).reshape(B, T, WINDOW, D)
        dep = np.zeros((B, T + WINDOW - 1, D), dtype=dwin.dtype)
        for j in range(WINDOW):
            dep[:, j : j + T] += dwin[:, :, j]
        grads["tok_emb"] = np.zeros_like(P["tok_emb"])
        np.add.at(grads["tok_emb"], ids, dep[:, WINDOW - 1 :])

    return grads


def greedy_decode(
    state: ModelState,
    config: ModelConfig,
    prompt_tokens: Sequence[int],
    max_new: int,
    eos_id: int | None = None,
) -> list[int]:
    """Argmax decoding until EOS, max_new tokens, or the context fills.

    np.argmax breaks ties toward the lowest token id.
    """
    seq = list(prompt_tokens)
    if len(seq) > config.context_len:
        raise ValueError("prompt does not fit the model context")
    for _ in range(max_new):
        if len(seq) >= config.context_len:
            break
        logits, _ = model_forward(state, config, np.asarray([seq]))
        nxt = int(np.argmax(logits[0, -1]))
        seq.append(nxt)
        if eos_id is not None and nxt == eos_id:
            break
    return seq


def digit_embeddings(state: ModelState, config: ModelConfig, vocab) -> np.ndarray:
    """Final hidden state of each single-digit sequence [d], d = 0..9."""
    ids = np.asarray([[tid] for tid in vocab.digit_ids])
    _, hidden = model_forward(state, config, ids)
    return hidden[:, 0, :]
