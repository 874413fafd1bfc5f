"""Vanilla RNN, LSTM and GRU encoders and decoders over padded batches.

Each cell stores fused weights ``W`` (in, k*H), ``U`` (H, k*H) and ``b`` (k*H)
with gate blocks in this order:

* vanilla: ``[h~]`` with ``h = tanh(x W + h U + b)``
* lstm: ``[f, i, o, c~]``
* gru: ``[z, r, h~]`` with ``h = (1 - z) h_prev + z h~`` and the reset gate
  applied to ``h_prev`` before its candidate projection.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..numerics import Linear, Module, Parameter, SeededRng, Tensor, as_tensor, ops, xavier_uniform
from ..numerics.tensor import ShapeError

GATE_COUNT = {"vanilla": 1, "lstm": 4, "gru": 3}
VARIANT_ALIASES = {"rnn": "vanilla", "vanilla": "vanilla", "lstm": "lstm", "gru": "gru"}


def _variant(name: str) -> str:
    try:
        return VARIANT_ALIASES[name]
    except KeyError:
        raise ValueError(f"unknown RNN variant {name!r}") from None


def _masked_update(old: Tensor, new: Tensor, m: np.ndarray | None) -> Tensor:
    if m is None:
        return new
    return old + (new - old) * m


class RNNCell(Module):
    def __init__(self, rng: SeededRng, in_dim: int, hidden: int, variant: str = "gru"):
        self.variant = _variant(variant)
        self.in_dim, self.hidden = in_dim, hidden
        k = GATE_COUNT[self.variant]
        self.W = Parameter(xavier_uniform(rng, in_dim, hidden, (in_dim, k * hidden)))
        self.U = Parameter(xavier_uniform(rng, hidden, hidden, (hidden, k * hidden)))
        self.b = Parameter(np.zeros(k * hidden))
        if self.variant == "lstm":
            # forget-gate bias starts at 1
            init = np.zeros(k * hidden)
            init[:hidden] = 1.0
            self.b.assign(init)

    def project_inputs(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"{self.variant} cell: expected input dim {self.in_dim}, got {x.shape}")
        return ops.matmul(x, self.W) + self.b

    def step(self, xw: Tensor, h: Tensor, c: Tensor | None):
        """One recurrence step given the projected input ``xw = x W + b`` of shape (B, kH)."""
        H = self.hidden
        if self.variant == "vanilla":
            return ops.tanh(xw + ops.matmul(h, self.U)), None
        if self.variant == "lstm":
            g = xw + ops.matmul(h, self.U)
            f = ops.sigmoid(g[:, :H])
            i = ops.sigmoid(g[:, H:2 * H])
            o = ops.sigmoid(g[:, 2 * H:3 * H])
            cand = ops.tanh(g[:, 3 * H:])
            c_new = f * c + i * cand
            return o * ops.tanh(c_new), c_new
        hu = ops.matmul(h, self.U[:, :2 * H])
        z = ops.sigmoid(xw[:, :H] + hu[:, :H])
        r = ops.sigmoid(xw[:, H:2 * H] + hu[:, H:])
        cand = ops.tanh(xw[:, 2 * H:] + ops.matmul(r * h, self.U[:, 2 * H:]))
        return h + z * (cand - h), None

    def __call__(self, x: Tensor, h: Tensor, c: Tensor | None = None):
        return self.step(self.project_inputs(x), h, c)


def run_cells(cells: list[RNNCell], x: Tensor, mask: np.ndarray | None, h0: Tensor | None = None):
    """Run stacked cells over (B, T, in). Returns (outputs (B, T, H), final hidden (B, H)).

    Padded steps leave the state unchanged, so the final hidden state is the
    state at the last valid position of each row.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"recurrent input must be (B, T, d), got {x.shape}")
    B, T, _ = x.shape
    if T == 0:
        raise ValueError("recurrent encoder needs a non-empty sequence")
    m = None if mask is None else np.asarray(mask, dtype=np.float64).reshape(B, T)
    seq = x
    h = None
    for cell in cells:
        xw = cell.project_inputs(seq)
        h = h0 if h0 is not None else Tensor(np.zeros((B, cell.hidden)))
        c = Tensor(np.zeros((B, cell.hidden))) if cell.variant == "lstm" else None
        outs = []
        for t in range(T):
            mt = None if m is None else m[:, t:t + 1]
            h_new, c_new = cell.step(xw[:, t], h, c)
            h = _masked_update(h, h_new, mt)
            if c is not None:
                c = _masked_update(c, c_new, mt)
            outs.append(h)
        seq = ops.stack(outs, axis=1)
    return seq, h


class RNNEncoder(Module):
    """Final hidden state of a (stacked) recurrent network as the trajectory embedding."""

    def __init__(self, rng: SeededRng, in_dim: int, dim: int, variant: str = "gru", layers: int = 1):
        if layers < 1:
            raise ValueError("layers must be >= 1")
        self.dim = dim
        self.cells = [RNNCell(rng, in_dim if i == 0 else dim, dim, variant) for i in range(layers)]

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        return run_cells(self.cells, x, mask)[1]

    def sequence(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        return run_cells(self.cells, x, mask)[0]


def rnn_encode(E, encoder: RNNEncoder) -> Tensor:
    """Encode an ``EmbeddingSequence`` (single or batched) to its final hidden state."""
    values, mask = E.values, E.mask
    if values.ndim == 2:
        z = encoder(ops.reshape(values, (1,) + values.shape), None if mask is None else np.asarray(mask)[None])
        return z[0]
    return encoder(values, mask)


class RNNDecoder(Module):
    """Auto-regressive decoder whose initial hidden state is the embedding.

    Step inputs are ``in_dim`` vectors; the first step consumes a learned start
    vector. Outputs are ``y_t = h_t V + c``.
    """

    def __init__(self, rng: SeededRng, in_dim: int, dim: int, out_dim: int, variant: str = "gru"):
        self.in_dim, self.dim, self.out_dim = in_dim, dim, out_dim
        self.cell = RNNCell(rng, in_dim, dim, variant)
        self.start = Parameter(rng.normal(in_dim, scale=0.1))
        self.head = Linear(rng, dim, out_dim)

    def _start_batch(self, B: int) -> Tensor:
        return ops.reshape(self.start, (1, 1, self.in_dim)) * np.ones((B, 1, 1))

    def teacher_forced(self, z: Tensor, inputs: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Outputs (B, T, out) when step ``t`` consumes the ground-truth input ``t - 1``."""
        inputs = as_tensor(inputs)
        B, T, _ = inputs.shape
        shifted = ops.concat([self._start_batch(B), inputs[:, :T - 1]], axis=1)
        states, _ = run_cells([self.cell], shifted, mask, h0=z)
        return self.head(states)

    def generate(self, z: Tensor, length: int, feedback: Callable[[Tensor], Tensor]) -> Tensor:
        """Greedy decoding: each output is mapped by ``feedback`` to the next step's input."""
        if length < 1:
            raise ValueError("decode length must be >= 1")
        B = z.shape[0]
        x = self._start_batch(B)[:, 0]
        h, c = z, (Tensor(np.zeros((B, self.dim))) if self.cell.variant == "lstm" else None)
        outs = []
        for _ in range(length):
            h, c = self.cell(x, h, c)
            y = self.head(h)
            outs.append(y)
            x = feedback(y)
        return ops.stack(outs, axis=1)


def argmax_feedback(table: Tensor) -> Callable[[Tensor], Tensor]:
    """Feed back the embedding of the most likely token."""
    def feed(logits: Tensor) -> Tensor:
        return ops.gather_rows(Tensor(table.data), np.argmax(logits.data, axis=-1))
    return feed


def rnn_decode(z: Tensor, length: int, decoder: RNNDecoder, inputs: Tensor | None = None,
               feedback: Callable[[Tensor], Tensor] | None = None, mask=None) -> Tensor:
    """Teacher-forced when ``inputs`` is given, greedy otherwise."""
    if inputs is not None:
        if inputs.shape[1] != length:
            raise ShapeError(f"teacher inputs have length {inputs.shape[1]}, expected {length}")
        return decoder.teacher_forced(z, inputs, mask)
    if feedback is None:
        raise ValueError("greedy decoding needs a feedback function")
    return decoder.generate(z, length, feedback)
