"""Scaled dot-product attention and the two wirings the fusion model uses.

Per-modality self-attention runs queries, keys, and values from the same
latent matrix.  Bi-directional cross-modal attention runs two unidirectional
sub-layers, one per direction, and concatenates their outputs along the
feature axis, doubling the width.

All operations accept either a single token matrix ``(tokens, width)`` or a
stacked batch ``(batch, tokens, width)``.  Attention never mixes rows across
the leading batch axis; softmax normalization is always over key tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, concat, glorot_uniform, matmul, permute, softmax_rows, transpose_last2


@dataclass(frozen=True)
class AttentionConfig:
    """Width bookkeeping for one attention site.

    ``d_model`` is the token width; each of the ``num_heads`` heads attends
    in a ``d_k = d_model / num_heads`` wide subspace, with ``d_v = d_k``.
    ``qk_init_gain`` scales the query/key projections at initialization:
    values above 1 widen the initial score spread so attention patterns are
    diverse enough for weight gradients to be informative.
    """

    d_model: int
    num_heads: int = 1
    qk_init_gain: float = 1.0

    def __post_init__(self):
        if self.d_model < 1 or self.num_heads < 1:
            raise ConfigError(f"d_model and num_heads must be positive, got {self.d_model}, {self.num_heads}")
        if self.d_model % self.num_heads != 0:
            raise ConfigError(f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}")
        if self.qk_init_gain <= 0:
            raise ConfigError(f"qk_init_gain must be positive, got {self.qk_init_gain}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.num_heads

    @property
    def d_v(self) -> int:
        return self.d_k


class AttentionBlock:
    """Learned square Q/K/V/O projections for one attention site.

    After a forward pass, ``last_weights`` holds the most recent softmax
    weight array (``(..., heads, queries, keys)``) for diagnostics.
    """

    def __init__(self, config: AttentionConfig, rng: np.random.Generator):
        d = config.d_model
        gain = config.qk_init_gain
        self.config = config
        self.w_q = Tensor(gain * glorot_uniform(rng, (d, d), d, d), requires_grad=True)
        self.w_k = Tensor(gain * glorot_uniform(rng, (d, d), d, d), requires_grad=True)
        self.w_v = Tensor(glorot_uniform(rng, (d, d), d, d), requires_grad=True)
        self.w_o = Tensor(glorot_uniform(rng, (d, d), d, d), requires_grad=True)
        self.last_weights: np.ndarray | None = None

    def parameters(self) -> dict[str, Tensor]:
        return {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v, "w_o": self.w_o}


def scaled_dot_product(q, k, v, return_weights: bool = False):
    """softmax(q k^T / sqrt(d_k)) v over the last two axes.

    ``q`` is ``(..., m, d_k)``, ``k`` is ``(..., n, d_k)``, ``v`` is
    ``(..., n, d_v)``.  Every weight row is nonnegative and sums to one.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query width {q.shape} does not match key width {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key rows {k.shape} do not match value rows {v.shape}")
    d_k = q.shape[-1]
    scores = matmul(q, transpose_last2(k)) * (1.0 / np.sqrt(d_k))
    weights = softmax_rows(scores)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def _split_heads(x: Tensor, num_heads: int) -> Tensor:
    """(..., t, d) -> (..., heads, t, d/heads)."""
    t, d = x.shape[-2], x.shape[-1]
    y = x.reshape(x.shape[:-1] + (num_heads, d // num_heads))
    nd = x.ndim
    axes = tuple(range(nd - 2)) + (nd - 1, nd - 2, nd)
    return permute(y, axes)


def _merge_heads(x: Tensor) -> Tensor:
    """(..., heads, t, d_k) -> (..., t, heads * d_k)."""
    nd = x.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    y = permute(x, axes)
    h, dk = x.shape[-3], x.shape[-1]
    return y.reshape(y.shape[:-2] + (h * dk,))


def multi_head(block: AttentionBlock, q_in, k_in, v_in) -> Tensor:
    """Project, attend per head in parallel subspaces, concatenate, project."""
    d = block.config.d_model
    for name, t in (("query", q_in), ("key", k_in), ("value", v_in)):
        if t.shape[-1] != d:
            raise ShapeError(f"{name} width {t.shape} does not match block d_model {d}")
    q = _split_heads(matmul(q_in, block.w_q), block.config.num_heads)
    k = _split_heads(matmul(k_in, block.w_k), block.config.num_heads)
    v = _split_heads(matmul(v_in, block.w_v), block.config.num_heads)
    heads, weights = scaled_dot_product(q, k, v, return_weights=True)
    block.last_weights = weights.values.copy()
    return matmul(_merge_heads(heads), block.w_o)


def self_attention(block: AttentionBlock, x) -> Tensor:
    """Multi-head attention with queries, keys, and values all equal to ``x``."""
    return multi_head(block, x, x, x)


def cross_modal_pair(block_ab: AttentionBlock, block_ba: AttentionBlock, a, b) -> Tensor:
    """Bi-directional cross-modal attention between two modalities.

    Direction a->b uses ``a`` as queries against ``b``'s keys and values;
    the mirror direction swaps the roles.  The two outputs are concatenated
    along the feature axis, so the result is twice as wide as the inputs.
    """
    ab = multi_head(block_ab, a, b, b)
    ba = multi_head(block_ba, b, a, a)
    return concat([ab, ba], axis=-1)


def attention_weights_to_csv(weights: np.ndarray, path) -> None:
    """Write one attention weight matrix as CSV: row = query, column = key."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"expected a 2-D weight matrix, got shape {w.shape}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in w:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
