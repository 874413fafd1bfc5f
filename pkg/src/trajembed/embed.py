"""Feature embedders and assembly of per-point embeddings."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import MLP, Adam, Module, Parameter, SeededRng, Tensor, backward, ops
from .numerics.tensor import ShapeError


@dataclass
class EmbeddingSequence:
    """Per-point vectors ``values`` of shape (B, T, d) or (T, d) with a validity mask."""

    values: Tensor
    mask: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[-1]


class IndexEmbedding(Module):
    """Learnable lookup table; row ``x`` is the embedding of token ``x``."""

    def __init__(self, rng: SeededRng, vocab_size: int, dim: int, table: np.ndarray | None = None):
        if vocab_size < 1:
            raise ValueError("vocabulary must hold at least one token")
        init = rng.normal((vocab_size, dim), scale=1.0 / np.sqrt(dim)) if table is None else table
        self.table = Parameter(init)

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    def __call__(self, tokens) -> Tensor:
        return index_embed(tokens, self.table)


def index_embed(tokens, table: Tensor) -> Tensor:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= table.shape[0]):
        raise IndexError(f"token out of range for vocabulary of size {table.shape[0]}")
    return ops.gather_rows(table, tokens)


class FCEmbedder(MLP):
    """``g(W x + b)``, optionally stacked."""

    def __init__(self, rng: SeededRng, in_dim: int, dim: int, layers: int = 1, activation: str = "tanh"):
        dims = [in_dim] + [dim] * layers
        super().__init__(rng, dims, activation=activation, final_activation=activation)


def fc_embed(x, layer: FCEmbedder) -> Tensor:
    return layer(x if isinstance(x, Tensor) else Tensor(x))


class FourierEmbedder(Module):
    """Learnable Fourier features ``[cos(w x) || sin(w x)] / sqrt(d)``."""

    def __init__(self, rng: SeededRng, dim: int, scale: float = 1.0):
        if dim % 2:
            raise ValueError(f"Fourier embedding dimension must be even, got {dim}")
        self.dim = dim
        self.freq = Parameter(rng.normal(dim // 2, scale=scale))

    def __call__(self, x) -> Tensor:
        return fourier_embed(x, self.freq)


def fourier_embed(x, freq: Tensor) -> Tensor:
    d = 2 * freq.shape[0]
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    phase = ops.reshape(x, x.shape + (1,)) * freq
    return ops.concat([ops.cos(phase), ops.sin(phase)], axis=-1) * (1.0 / np.sqrt(d))


def assemble(parts: Sequence[Tensor], mask: np.ndarray, mode: str = "concat") -> EmbeddingSequence:
    if not parts:
        raise ValueError("assemble needs at least one part")
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.shape[:-1] != lead:
            raise ShapeError(f"assemble: sequence lengths differ {[q.shape for q in parts]}")
    if len(parts) == 1:
        return EmbeddingSequence(parts[0], mask)
    if mode == "concat":
        return EmbeddingSequence(ops.concat(parts, axis=-1), mask)
    if mode == "sum":
        dims = {p.shape[-1] for p in parts}
        if len(dims) != 1:
            raise ShapeError(f"assemble: sum mode needs equal dims, got {sorted(dims)}")
        out = parts[0]
        for p in parts[1:]:
            out = out + p
        return EmbeddingSequence(out, mask)
    raise ValueError(f"unknown assemble mode {mode!r}")


# ---------------------------------------------------------------- word2vec

@dataclass(frozen=True)
class Word2VecConfig:
    mode: str = "skipgram"  # or "cbow"
    dim: int = 64
    window: int = 2
    negatives: int = 5
    epochs: int = 5
    batch_size: int = 512
    lr: float = 0.01


def sgns_loss(center: Tensor, context: Tensor, negative: Tensor) -> Tensor:
    """Negative-sampling objective. ``center``/``context``: (B, d); ``negative``: (B, K, d)."""
    pos = ops.sum(center * context, axis=-1)
    neg = ops.sum(ops.reshape(center, (center.shape[0], 1, center.shape[1])) * negative, axis=-1)
    return -ops.mean(ops.log_sigmoid(pos) + ops.sum(ops.log_sigmoid(-neg), axis=-1))


def _training_pairs(corpus: Sequence[Sequence[int]], window: int, mode: str):
    centers, contexts = [], []
    for seq in corpus:
        seq = list(seq)
        for i, c in enumerate(seq):
            ctx = [seq[j] for j in range(max(0, i - window), min(len(seq), i + window + 1)) if j != i]
            if not ctx:
                continue
            if mode == "skipgram":
                centers.extend([c] * len(ctx))
                contexts.extend([[x] for x in ctx])
            else:
                centers.append(c)
                contexts.append(ctx)
    return centers, contexts


def word2vec_train(corpus: Sequence[Sequence[int]], vocab_size: int, cfg: Word2VecConfig = Word2VecConfig(),
                   seed: int = 0, return_history: bool = False):
    """Train token vectors with negative sampling; returns the ``(V, d)`` input table.

    Skip-gram predicts each context token from the centre token; CBOW predicts
    the centre from the mean of its context vectors. Negatives follow the
    unigram distribution raised to 0.75.
    """
    if vocab_size < 2:
        raise ValueError("word2vec needs a vocabulary of at least 2 tokens")
    if not corpus or not any(len(s) for s in corpus):
        raise ValueError("word2vec needs a non-empty corpus")
    if cfg.mode not in ("skipgram", "cbow"):
        raise ValueError(f"unknown word2vec mode {cfg.mode!r}")
    rng = SeededRng(seed)
    w_in = Parameter(rng.uniform((vocab_size, cfg.dim), -0.5 / cfg.dim, 0.5 / cfg.dim), name="w_in")
    w_out = Parameter(rng.uniform((vocab_size, cfg.dim), -0.5 / cfg.dim, 0.5 / cfg.dim), name="w_out")
    history: list[float] = []
    if cfg.epochs == 0:
        return (w_in.data.copy(), history) if return_history else w_in.data.copy()

    counts = Counter(int(x) for s in corpus for x in s)
    freq = np.array([counts.get(i, 0) for i in range(vocab_size)], dtype=np.float64) ** 0.75
    noise_cdf = np.cumsum(freq / freq.sum())
    centers, contexts = _training_pairs(corpus, cfg.window, cfg.mode)
    if not centers:
        raise ValueError("corpus has no token with a context")
    width = max(len(c) for c in contexts)
    ctx = np.zeros((len(contexts), width), dtype=np.int64)
    ctx_mask = np.zeros((len(contexts), width))
    for i, c in enumerate(contexts):
        ctx[i, :len(c)] = c
        ctx_mask[i, :len(c)] = 1.0
    centers = np.asarray(centers, dtype=np.int64)
    opt = Adam([w_in, w_out], lr=cfg.lr)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(centers))
        total, batches = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            negs = np.minimum(np.searchsorted(noise_cdf, rng.uniform((len(idx), cfg.negatives)), side="right"),
                              vocab_size - 1)
            loss = word2vec_batch_loss(w_in, w_out, centers[idx], ctx[idx], ctx_mask[idx], negs, cfg.mode)
            backward(loss)
            opt.step()
            total += loss.item()
            batches += 1
        history.append(total / batches)
    return (w_in.data.copy(), history) if return_history else w_in.data.copy()


def word2vec_batch_loss(w_in: Tensor, w_out: Tensor, centers, ctx, ctx_mask, negs, mode: str) -> Tensor:
    if mode == "skipgram":
        src = ops.gather_rows(w_in, centers)
        tgt = ops.gather_rows(w_out, ctx[:, 0])
    else:
        ctx_vecs = ops.gather_rows(w_in, ctx) * ctx_mask[..., None]
        src = ops.sum(ctx_vecs, axis=1) / ctx_mask.sum(axis=1, keepdims=True)
        tgt = ops.gather_rows(w_out, centers)
    return sgns_loss(src, tgt, ops.gather_rows(w_out, negs))
