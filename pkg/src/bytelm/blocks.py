"""Pre-norm transformer blocks with windowed causal attention.

Every linear map is bias-free. Queries and keys are layer-normalized per
head (one learned gain of length head_dim, shared across heads) before
rotary position mixing; scores are scaled by 1/sqrt(head_dim) after.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import (
    Tensor,
    add_mask,
    causal_mask,
    gelu,
    layer_norm,
    matmul,
    reshape,
    rope_apply,
    softmax,
    transpose,
)

HEAD_DIM = 64


@dataclass(frozen=True)
class AttentionConfig:
    """Attention geometry for one stack of blocks."""

    model_dim: int
    window: int
    head_dim: int = HEAD_DIM
    ff_mult: int = 4

    def __post_init__(self):
        if self.model_dim % self.head_dim:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by head_dim {self.head_dim}"
            )
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.ff_mult < 1:
            raise ConfigError(f"ff_mult must be >= 1, got {self.ff_mult}")

    @property
    def n_heads(self) -> int:
        return self.model_dim // self.head_dim


@dataclass
class BlockWeights:
    """Learned tensors for one block; see `param_count` for the 12*D^2 ledger."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w1: Tensor
    w2: Tensor
    ln1_gain: Tensor
    ln2_gain: Tensor
    q_gain: Tensor
    k_gain: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {
            "wq": self.wq,
            "wk": self.wk,
            "wv": self.wv,
            "wo": self.wo,
            "w1": self.w1,
            "w2": self.w2,
            "ln1_gain": self.ln1_gain,
            "ln2_gain": self.ln2_gain,
            "q_gain": self.q_gain,
            "k_gain": self.k_gain,
        }


def matrix_param_count(cfg: AttentionConfig) -> int:
    """Weight-matrix parameters per block: 4 attention + 2 FF maps."""
    d = cfg.model_dim
    return 4 * d * d + 2 * cfg.ff_mult * d * d


_mask_cache: dict[tuple[int, int, str], np.ndarray] = {}


def _cached_mask(t: int, window: int, dtype) -> np.ndarray:
    key = (t, window, np.dtype(dtype).name)
    if key not in _mask_cache:
        _mask_cache[key] = causal_mask(t, window, np.dtype(dtype).type)
    return _mask_cache[key]


def causal_window_attention(x: Tensor, cfg: AttentionConfig, w: BlockWeights) -> Tensor:
    """Multi-head attention where position t sees keys in [max(0, t-W+1), t]."""
    if x.data.ndim != 3:
        raise ShapeError(f"attention expects [B, T, D], got {x.shape}")
    b, t, d = x.data.shape
    if d != cfg.model_dim:
        raise ShapeError(f"input dim {d} != configured {cfg.model_dim}")
    h, hd = cfg.n_heads, cfg.head_dim

    def split_heads(m: Tensor) -> Tensor:
        return transpose(reshape(m, (b, t, h, hd)), (0, 2, 1, 3))

    q = split_heads(matmul(x, w.wq))
    k = split_heads(matmul(x, w.wk))
    v = split_heads(matmul(x, w.wv))
    q = rope_apply(layer_norm(q, w.q_gain))
    k = rope_apply(layer_norm(k, w.k_gain))
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(hd))
    scores = add_mask(scores, _cached_mask(t, cfg.window, x.data.dtype))
    out = matmul(softmax(scores, -1), v)
    out = reshape(transpose(out, (0, 2, 1, 3)), (b, t, d))
    return matmul(out, w.wo)


def feed_forward(x: Tensor, w: BlockWeights) -> Tensor:
    return matmul(gelu(matmul(x, w.w1)), w.w2)


def transformer_block(x: Tensor, cfg: AttentionConfig, w: BlockWeights) -> Tensor:
    """x + Attn(LN(x)), then + FF(LN(.))."""
    x = x + causal_window_attention(layer_norm(x, w.ln1_gain), cfg, w)
    return x + feed_forward(layer_norm(x, w.ln2_gain), w)


def run_blocks(x: Tensor, cfg: AttentionConfig, blocks: list[BlockWeights]) -> Tensor:
    for w in blocks:
        x = transformer_block(x, cfg, w)
    return x
