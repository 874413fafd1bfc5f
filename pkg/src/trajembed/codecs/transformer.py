"""Post-norm Transformer encoder and a cross-attention decoder."""

from __future__ import annotations

import numpy as np

from ..numerics import LayerNorm, Linear, Module, SeededRng, Tensor, as_tensor, ops
from ..numerics.tensor import ShapeError


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    """Fixed (length, dim) position table: sin on even columns, cos on odd columns."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    rate = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2, dtype=np.float64) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * rate)
    table[:, 1::2] = np.cos(pos * rate[: dim // 2])
    return table


def masked_mean(x: Tensor, mask: np.ndarray | None) -> Tensor:
    """Mean over axis 1 of (B, T, d) restricted to valid positions."""
    if mask is None:
        return ops.mean(x, axis=1)
    m = np.asarray(mask, dtype=np.float64)
    counts = np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    return ops.sum(x * m[..., None], axis=1) / counts


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``heads`` slices of width ``dim // heads``.

    ``last_weights`` keeps the most recent (B, heads, Tq, Tk) attention matrix.
    """

    def __init__(self, rng: SeededRng, dim: int, heads: int = 4):
        if dim % heads:
            raise ValueError(f"model dim {dim} is not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.out = Linear(rng, dim, dim)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        return ops.transpose(ops.reshape(x, (B, T, self.heads, self.dim // self.heads)), (0, 2, 1, 3))

    def __call__(self, query: Tensor, source: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        if query.shape[-1] != self.dim or source.shape[-1] != self.dim:
            raise ShapeError(f"attention: expected model dim {self.dim}, got {query.shape} and {source.shape}")
        B, Tq, _ = query.shape
        q, k, v = self._split(self.q(query)), self._split(self.k(source)), self._split(self.v(source))
        scores = ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.dim // self.heads))
        mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[:, None, None, :]
        weights = ops.softmax(scores, mask=mask)
        self.last_weights = weights.data
        ctx = ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3))
        return self.out(ops.reshape(ctx, (B, Tq, self.dim)))


class FeedForward(Module):
    def __init__(self, rng: SeededRng, dim: int, hidden: int):
        self.inner = Linear(rng, dim, hidden)
        self.outer = Linear(rng, hidden, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(ops.relu(self.inner(x)))


class TransformerLayer(Module):
    """``LayerNorm(x + Attn(x, src))`` followed by ``LayerNorm(y + FFN(y))``."""

    def __init__(self, rng: SeededRng, dim: int, heads: int = 4, ff_mult: int = 4):
        self.attention = MultiHeadAttention(rng, dim, heads)
        self.norm1 = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim, ff_mult * dim)
        self.norm2 = LayerNorm(dim)

    def __call__(self, x: Tensor, source: Tensor | None = None, key_mask=None) -> Tensor:
        src = x if source is None else source
        y = self.norm1(x + self.attention(x, src, key_mask))
        return self.norm2(y + self.ffn(y))


class TransformerEncoder(Module):
    """Self-attention stack; returns the memory sequence and its masked mean pool."""

    def __init__(self, rng: SeededRng, in_dim: int, dim: int, layers: int = 1, heads: int = 4, ff_mult: int = 4):
        if dim % heads:
            raise ValueError(f"model dim {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.input_proj = Linear(rng, in_dim, dim) if in_dim != dim else None
        self.layers = [TransformerLayer(rng, dim, heads, ff_mult) for _ in range(layers)]

    def memory(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 3:
            raise ShapeError(f"transformer input must be (B, T, d), got {x.shape}")
        if x.shape[1] == 0:
            raise ValueError("transformer encoder needs a non-empty sequence")
        if self.input_proj is not None:
            x = self.input_proj(x)
        x = x + sinusoidal_encoding(x.shape[1], self.dim)
        for layer in self.layers:
            x = layer(x, key_mask=mask)
        return x

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        m = self.memory(x, mask)
        return m, masked_mean(m, mask)


def transformer_encode(E, encoder: TransformerEncoder) -> tuple[Tensor, Tensor]:
    values, mask = E.values, E.mask
    if values.ndim == 2:
        m, z = encoder(ops.reshape(values, (1,) + values.shape), None if mask is None else np.asarray(mask)[None])
        return m[0], z[0]
    return encoder(values, mask)


class TransformerDecoder(Module):
    """Cross-attention stack where the memory supplies queries and the source supplies keys and values.

    The output length equals the memory length; a linear head maps each
    position to ``out_dim`` reconstruction values or logits.
    """

    def __init__(self, rng: SeededRng, dim: int, out_dim: int, layers: int = 1, heads: int = 4, ff_mult: int = 4):
        self.dim = dim
        self.layers = [TransformerLayer(rng, dim, heads, ff_mult) for _ in range(layers)]
        self.head = Linear(rng, dim, out_dim)

    def __call__(self, memory: Tensor, source: Tensor, source_mask: np.ndarray | None = None) -> Tensor:
        memory, source = as_tensor(memory), as_tensor(source)
        if memory.shape[-1] != self.dim or source.shape[-1] != self.dim:
            raise ShapeError(f"decoder: expected dim {self.dim}, got memory {memory.shape} and source {source.shape}")
        src = source + sinusoidal_encoding(source.shape[1], self.dim)
        x = memory
        for layer in self.layers:
            x = layer(x, src, source_mask)
        return self.head(x)


def transformer_decode(memory: Tensor, source: Tensor, decoder: TransformerDecoder, source_mask=None) -> Tensor:
    return decoder(memory, source, source_mask)
