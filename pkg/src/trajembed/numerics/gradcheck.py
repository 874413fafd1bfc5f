from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def grad_check(f: Callable[..., Tensor], point: Sequence[np.ndarray], h: float = 1e-5) -> float:
    """Largest relative disagreement between reverse-mode and central-difference gradients.

    ``f`` receives one leaf tensor per entry of ``point`` and must return a scalar.
    The error for each coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    arrays = [np.array(p, dtype=np.float64) for p in point]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = f(*leaves)
    backward(out)
    worst = 0.0
    for k, base in enumerate(arrays):
        analytic = leaves[k].grad
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*[Tensor(a) for a in arrays]).item()
            flat[i] = orig - h
            fm = f(*[Tensor(a) for a in arrays]).item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            if not np.isfinite(numeric):
                raise FloatingPointError(f"non-finite finite-difference estimate at input {k}, index {i}")
            err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


def grad_check_params(loss_fn: Callable[[], Tensor], params, h: float = 1e-5, max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> float:
    """Same check against the ``Parameter`` objects of a model, perturbing them in place.

    ``max_coords`` limits how many coordinates per parameter are probed (chosen
    with ``rng``) to keep checks on larger models affordable.
    """
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    analytic = {id(p): p.grad.copy() for p in params}
    worst = 0.0
    for p in params:
        n = p.data.size
        coords = np.arange(n)
        if max_coords is not None and n > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords, replace=False)
        base = p.data.copy()
        for i in coords:
            trial = base.copy().reshape(-1)
            trial[i] += h
            p.assign(trial.reshape(base.shape))
            fp = loss_fn().item()
            trial[i] -= 2 * h
            p.assign(trial.reshape(base.shape))
            fm = loss_fn().item()
            p.assign(base)
            numeric = (fp - fm) / (2.0 * h)
            if not np.isfinite(numeric):
                raise FloatingPointError(f"non-finite finite-difference estimate for {p.name}[{i}]")
            err = abs(analytic[id(p)].reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
