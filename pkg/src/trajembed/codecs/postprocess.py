"""Variational and planar normalising-flow embedding postprocessors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import Linear, Module, Parameter, SeededRng, Tensor, as_tensor, ops


@dataclass
class GaussianEmbedding:
    mu: Tensor
    log_sigma: Tensor

    @property
    def sigma(self) -> Tensor:
        return ops.exp(self.log_sigma)


class VariationalPostprocessor(Module):
    """``mu = z W_mu + b_mu``, ``log sigma = z W_sigma + b_sigma``, ``z' = mu + sigma * eps``."""

    def __init__(self, rng: SeededRng, dim: int, out_dim: int | None = None):
        self.mu = Linear(rng, dim, out_dim or dim)
        self.log_sigma = Linear(rng, dim, out_dim or dim)

    def __call__(self, z: Tensor, eps=None) -> tuple[GaussianEmbedding, Tensor]:
        z = as_tensor(z)
        g = GaussianEmbedding(self.mu(z), self.log_sigma(z))
        if eps is None:
            return g, g.mu
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != g.mu.shape:
            raise ValueError(f"noise shape {eps.shape} does not match embedding shape {g.mu.shape}")
        return g, g.mu + g.sigma * eps


def variational_postprocess(z, eps, post: VariationalPostprocessor) -> tuple[GaussianEmbedding, Tensor]:
    return post(z, eps)


def _softplus(x: Tensor) -> Tensor:
    return -ops.log_sigmoid(-x)


class PlanarFlow(Module):
    """``f(z) = z + u_hat tanh(w . z + b)``.

    When ``w . u < -1`` the flow would not be invertible, so ``u`` is replaced by
    ``u + (softplus(w . u) - 1 - w . u) w / |w|^2``; otherwise ``u_hat = u``.
    """

    def __init__(self, rng: SeededRng, dim: int):
        self.u = Parameter(np.zeros(dim))
        self.w = Parameter(rng.normal(dim, scale=1.0 / np.sqrt(dim)))
        self.b = Parameter(np.zeros(1))

    def u_hat(self) -> Tensor:
        wu = ops.sum(self.w * self.u)
        if wu.item() >= -1.0:
            return self.u
        w_sq = ops.sum(self.w * self.w) + 1e-12
        return self.u + self.w * ((_softplus(wu) - 1.0 - wu) / w_sq)

    def __call__(self, z: Tensor) -> tuple[Tensor, Tensor]:
        """Returns the transformed (B, d) batch and the per-row log |det J|."""
        z = as_tensor(z)
        u = self.u_hat()
        d = z.shape[-1]
        pre = ops.reshape(ops.matmul(z, ops.reshape(self.w, (d, 1))), (z.shape[0],)) + self.b
        act = ops.tanh(pre)
        out = z + ops.reshape(act, (-1, 1)) * u
        psi_u = (1.0 - act * act) * ops.sum(self.w * u)
        return out, ops.log(ops.absolute(psi_u + 1.0))


class NFPostprocessor(Module):
    """Composition of ``K`` planar flows with summed log-determinants."""

    def __init__(self, rng: SeededRng, dim: int, flows: int = 4):
        if flows < 0:
            raise ValueError("flow count must be non-negative")
        self.flows = [PlanarFlow(rng, dim) for _ in range(flows)]

    def __call__(self, z: Tensor) -> tuple[Tensor, Tensor]:
        z = as_tensor(z)
        single = z.ndim == 1
        if single:
            z = ops.reshape(z, (1, -1))
        total = Tensor(np.zeros(z.shape[0]))
        for flow in self.flows:
            z, ld = flow(z)
            total = total + ld
        if single:
            return z[0], total[0]
        return z, total


def nf_postprocess(z, post: NFPostprocessor) -> tuple[Tensor, Tensor]:
    return post(z)
