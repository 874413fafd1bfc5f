"""Reconstruction, contrastive and regularisation losses as differentiable scalars."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geo import EARTH_RADIUS_M
from .numerics import Tensor, as_tensor, ops
from .numerics.tensor import ShapeError


@dataclass(frozen=True)
class ContrastiveSpec:
    temperature: float = 0.1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class MECSpec:
    eps: float = 1.0

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("MEC distortion bound must be positive")


def _masked_mean(values: Tensor, mask) -> Tensor:
    if mask is None:
        return ops.mean(values)
    m = np.broadcast_to(np.asarray(mask, dtype=np.float64), values.shape)
    return ops.sum(values * m) * (1.0 / max(m.sum(), 1.0))


def pointwise_recon(pred, truth, kind: str = "mse", mask=None) -> Tensor:
    """Mean squared or absolute error over (unmasked) elements."""
    pred, truth = as_tensor(pred), as_tensor(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"pointwise_recon: prediction {pred.shape} vs truth {truth.shape}")
    diff = pred - truth
    if kind == "mse":
        per = diff * diff
    elif kind == "mae":
        per = ops.absolute(diff)
    else:
        raise ValueError(f"unknown reconstruction kind {kind!r}")
    return _masked_mean(per, mask)


def cross_entropy(logits, target, mask=None) -> Tensor:
    """Mean of ``-logit[target] + logsumexp(logits)`` over (unmasked) positions.

    ``logits`` has classes on the last axis; ``target`` holds integer ids with
    the remaining shape.
    """
    logits = as_tensor(logits)
    target = np.asarray(target, dtype=np.int64)
    n_classes = logits.shape[-1]
    if target.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {target.shape}")
    if target.size and (target.min() < 0 or target.max() >= n_classes):
        raise IndexError(f"cross_entropy: target out of range for {n_classes} classes")
    logp = ops.log_softmax(logits)
    flat = ops.reshape(logp, (-1, n_classes))
    picked = ops.getitem(flat, (np.arange(flat.shape[0]), target.reshape(-1)))
    nll = ops.reshape(-picked, target.shape)
    return _masked_mean(nll, mask)


def distance_loss(pred, truth, mask=None) -> Tensor:
    """Mean haversine distance in meters between (lng, lat) pairs in degrees on the last axis."""
    pred, truth = as_tensor(pred), as_tensor(truth)
    if pred.shape != truth.shape or pred.shape[-1] != 2:
        raise ShapeError(f"distance_loss: expected matching (..., 2) inputs, got {pred.shape} and {truth.shape}")
    rad = np.pi / 180.0
    lng1, lat1 = pred[..., 0] * rad, pred[..., 1] * rad
    lng2, lat2 = truth[..., 0] * rad, truth[..., 1] * rad
    s_lat = ops.sin((lat2 - lat1) * 0.5)
    s_lng = ops.sin((lng2 - lng1) * 0.5)
    a = s_lat * s_lat + ops.cos(lat1) * ops.cos(lat2) * s_lng * s_lng
    # tiny floor keeps the sqrt differentiable at zero distance
    d = ops.arcsin(ops.sqrt(a + 1e-30)) * (2.0 * EARTH_RADIUS_M)
    return _masked_mean(d, mask)


def infonce(z: Tensor, z_pos: Tensor, spec: ContrastiveSpec = ContrastiveSpec()) -> Tensor:
    """Mean over anchors ``i`` of ``-log softmax_j(z_i . z'_j / tau)[i]``."""
    z, z_pos = as_tensor(z), as_tensor(z_pos)
    if z.shape != z_pos.shape or z.ndim != 2:
        raise ShapeError(f"infonce: expected two (B, d) views, got {z.shape} and {z_pos.shape}")
    sims = ops.matmul(z, ops.transpose(z_pos)) * (1.0 / spec.temperature)
    b = z.shape[0]
    logp = ops.log_softmax(sims)
    return -ops.mean(ops.getitem(logp, (np.arange(b), np.arange(b))))


def mec(z1: Tensor, z2: Tensor, spec: MECSpec = MECSpec()) -> Tensor:
    """Negated coding-rate entropy ``-(B+d)/2 * logdet(I + d/(B eps^2) Z1 Z2^T)``."""
    z1, z2 = as_tensor(z1), as_tensor(z2)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ShapeError(f"mec: expected matching (B, d) inputs, got {z1.shape} and {z2.shape}")
    b, d = z1.shape
    arg = ops.matmul(z1, ops.transpose(z2)) * (d / (b * spec.eps ** 2)) + np.eye(b)
    return ops.logdet(arg) * (-(b + d) / 2.0)


def reg_norm(z, kind: str = "l2") -> Tensor:
    z = as_tensor(z)
    if kind == "l1":
        return ops.sum(ops.absolute(z))
    if kind == "l2":
        return ops.sqrt(ops.sum(z * z) + 1e-30)
    raise ValueError(f"unknown norm kind {kind!r}")


def kl_gaussian(mu, sigma) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over the last axis, averaged over leading axes."""
    mu, sigma = as_tensor(mu), as_tensor(sigma)
    per = (mu * mu + sigma * sigma - 1.0 - ops.log(sigma * sigma)) * 0.5
    total = ops.sum(per, axis=-1)
    return ops.mean(total) if total.ndim else total


def kl_gaussian_logsigma(mu, log_sigma) -> Tensor:
    """Same KL parameterised by ``log sigma`` (avoids log of a square)."""
    mu, log_sigma = as_tensor(mu), as_tensor(log_sigma)
    per = (mu * mu + ops.exp(log_sigma * 2.0) - 1.0 - log_sigma * 2.0) * 0.5
    total = ops.sum(per, axis=-1)
    return ops.mean(total) if total.ndim else total
