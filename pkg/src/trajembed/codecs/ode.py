"""Continuous-time encoders: RK4-evolved GRU states and a discretised controlled differential equation."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..numerics import MLP, Linear, Module, SeededRng, Tensor, as_tensor, ops
from ..numerics.tensor import ShapeError
from .rnn import RNNCell, _masked_update

Dynamics = Callable[[Tensor], Tensor]


def rk4_solve(f: Dynamics, h: Tensor, dt, steps: int) -> Tensor:
    """Integrate ``dh/dt = f(h)`` over ``dt`` (scalar or per-row (B, 1)) with ``steps`` RK4 steps."""
    if steps < 1:
        raise ValueError("RK4 needs at least one step")
    step = np.asarray(dt, dtype=np.float64) / steps
    half = step / 2.0
    for _ in range(steps):
        k1 = f(h)
        k2 = f(h + k1 * half)
        k3 = f(h + k2 * half)
        k4 = f(h + k3 * step)
        h = h + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (step / 6.0)
    return h


class ODEDynamics(Module):
    """``dh/dt = tanh-MLP(h)``."""

    def __init__(self, rng: SeededRng, dim: int, hidden: int | None = None):
        self.net = MLP(rng, [dim, hidden or dim, dim], activation="tanh", final_activation="tanh")

    def __call__(self, h: Tensor) -> Tensor:
        return self.net(h)


def _check_times(times: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64)
    gaps = np.diff(times, axis=1)
    if mask is not None:
        valid = np.asarray(mask, dtype=bool)[:, 1:]
        gaps = np.where(valid, gaps, 1.0)
    if np.any(gaps <= 0):
        raise ValueError("ODE encoder needs strictly increasing timestamps")
    return times


class ODEEncoder(Module):
    """GRU encoder whose hidden state also evolves between points by an ODE.

    Between points ``i - 1`` and ``i`` the state is integrated over
    ``(t_i - t_{i-1}) / time_scale`` with fixed-step RK4, then updated by the GRU
    cell with the embedding of point ``i``.
    """

    def __init__(self, rng: SeededRng, in_dim: int, dim: int, steps: int = 4, time_scale: float = 60.0,
                 dynamics: Dynamics | None = None):
        self.dim, self.steps, self.time_scale = dim, steps, time_scale
        self.cell = RNNCell(rng, in_dim, dim, "gru")
        self.dynamics = dynamics if dynamics is not None else ODEDynamics(rng, dim)

    def __call__(self, x: Tensor, times, mask: np.ndarray | None = None) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 3:
            raise ShapeError(f"ODE encoder input must be (B, T, d), got {x.shape}")
        B, T, _ = x.shape
        if T == 0:
            raise ValueError("ODE encoder needs a non-empty sequence")
        times = _check_times(np.asarray(times).reshape(B, T), mask)
        m = None if mask is None else np.asarray(mask, dtype=np.float64).reshape(B, T)
        xw = self.cell.project_inputs(x)
        h = Tensor(np.zeros((B, self.dim)))
        for t in range(T):
            mt = None if m is None else m[:, t:t + 1]
            if t > 0:
                dt = ((times[:, t] - times[:, t - 1]) / self.time_scale)[:, None]
                if mt is not None:
                    dt = dt * mt
                h = rk4_solve(self.dynamics, h, dt, self.steps)
            h_new, _ = self.cell.step(xw[:, t], h, None)
            h = _masked_update(h, h_new, mt)
        return h


def ode_encode(E, times, encoder: ODEEncoder) -> Tensor:
    values, mask = E.values, E.mask
    if values.ndim == 2:
        return encoder(ops.reshape(values, (1,) + values.shape), np.asarray(times)[None],
                       None if mask is None else np.asarray(mask)[None])[0]
    return encoder(values, times, mask)


class ODEDecoder(Module):
    """Teacher-forced GRU decoder with RK4 evolution between target timestamps."""

    def __init__(self, rng: SeededRng, in_dim: int, dim: int, out_dim: int, steps: int = 4,
                 time_scale: float = 60.0):
        self.dim, self.steps, self.time_scale = dim, steps, time_scale
        self.cell = RNNCell(rng, in_dim, dim, "gru")
        self.dynamics = ODEDynamics(rng, dim)
        self.start = Linear(rng, dim, in_dim)
        self.head = Linear(rng, dim, out_dim)

    def __call__(self, z: Tensor, inputs: Tensor, times, mask: np.ndarray | None = None) -> Tensor:
        inputs = as_tensor(inputs)
        B, T, _ = inputs.shape
        times = _check_times(np.asarray(times).reshape(B, T), mask)
        m = None if mask is None else np.asarray(mask, dtype=np.float64).reshape(B, T)
        first = ops.reshape(self.start(z), (B, 1, -1))
        xw = self.cell.project_inputs(ops.concat([first, inputs[:, :T - 1]], axis=1))
        h, outs = z, []
        for t in range(T):
            mt = None if m is None else m[:, t:t + 1]
            if t > 0:
                dt = ((times[:, t] - times[:, t - 1]) / self.time_scale)[:, None]
                if mt is not None:
                    dt = dt * mt
                h = rk4_solve(self.dynamics, h, dt, self.steps)
            h_new, _ = self.cell.step(xw[:, t], h, None)
            h = _masked_update(h, h_new, mt)
            outs.append(h)
        return self.head(ops.stack(outs, axis=1))


def spline_path(splines: Sequence, steps: int) -> np.ndarray:
    """Evaluate each spline on ``steps + 1`` uniform points of its own domain: (B, steps + 1, C)."""
    if steps < 1:
        raise ValueError("CDE needs at least one step")
    out = []
    for s in splines:
        tau = np.linspace(s.knots[0], s.knots[-1], steps + 1)
        out.append(np.asarray(s(tau), dtype=np.float64).reshape(steps + 1, -1))
    return np.stack(out)


class CDEEncoder(Module):
    """``h_0 = Linear(X(t_0))``; ``h_{k+1} = h_k + F(h_k) (X(tau_{k+1}) - X(tau_k))``.

    ``F`` maps the hidden state to a (dim, channels) matrix.
    """

    def __init__(self, rng: SeededRng, channels: int, dim: int, steps: int = 16, hidden: int | None = None):
        if steps < 1:
            raise ValueError("CDE needs at least one step")
        self.channels, self.dim, self.steps = channels, dim, steps
        self.initial = Linear(rng, channels, dim)
        self.field = MLP(rng, [dim, hidden or dim, dim * channels], activation="relu", final_activation="tanh")

    def __call__(self, path) -> Tensor:
        """``path``: (B, S + 1, channels) control values on a uniform grid."""
        path = np.asarray(path, dtype=np.float64)
        if path.ndim != 3 or path.shape[2] != self.channels:
            raise ShapeError(f"CDE path must be (B, S+1, {self.channels}), got {path.shape}")
        B = path.shape[0]
        increments = np.diff(path, axis=1)
        h = self.initial(Tensor(path[:, 0]))
        for k in range(increments.shape[1]):
            f = ops.reshape(self.field(h), (B, self.dim, self.channels))
            dx = increments[:, k][:, :, None]
            h = h + ops.reshape(ops.matmul(f, dx), (B, self.dim))
        return h

    def encode_splines(self, splines: Sequence, steps: int | None = None) -> Tensor:
        return self(spline_path(splines, steps or self.steps))


def cde_encode(spline, encoder: CDEEncoder, steps: int | None = None) -> Tensor:
    return encoder.encode_splines([spline], steps)[0]
