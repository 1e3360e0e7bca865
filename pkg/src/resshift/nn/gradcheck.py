"""Finite-difference verification of the denoiser's backward pass.

Central differences with step h compare the analytic gradient of a
scalar MSE loss against (L(w+h) - L(w-h)) / 2h for a sample of entries
in every parameter tensor.  Relative error uses the symmetric form
|a - n| / max(|a|, |n|, 1e-6); the floor keeps finite-difference noise
(~1e-11 at h=1e-5 in float64) from inflating genuinely-zero entries.

Parameters are randomized away from their initialization before
checking: the zero-initialized output conv would otherwise block all
upstream gradients and make the comparison vacuous.
"""

from __future__ import annotations

import numpy as np

from ..rng import RandomStream
from . import tensor as T
from .denoiser import Denoiser, DenoiserConfig

DEFAULT_H = 1e-5
DEFAULT_TOLERANCE = 1e-4
_PROBES_PER_GROUP = 12

#: Test hook: when True, a deliberate error is added to one analytic
#: gradient so negative-control runs can confirm the check would fail.
CORRUPT_BACKWARD = False


def finite_difference(loss_fn, array: np.ndarray, index, h: float = DEFAULT_H) -> float:
    """Central-difference derivative of loss_fn() w.r.t. array[index]."""
    orig = array[index]
    array[index] = orig + h
    up = loss_fn()
    array[index] = orig - h
    down = loss_fn()
    array[index] = orig
    return (up - down) / (2.0 * h)


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def check_denoiser(
    config: DenoiserConfig | None = None,
    height: int = 8,
    width: int = 8,
    seed: int = 0,
    h: float = DEFAULT_H,
    probes_per_group: int = _PROBES_PER_GROUP,
) -> dict[str, float]:
    """Max relative error per parameter group on a tiny random problem."""
    cfg = config or DenoiserConfig(in_channels=2, base_width=8, depth=1, time_embed_dim=16, T=15)
    rng = RandomStream(seed, "gradcheck")
    model = Denoiser(cfg, rng.child("init"))
    for name, p in model.params.items():
        p.data = p.data + 0.05 * rng.child("jitter", name).normal(p.data.shape)

    n = 2
    c = cfg.image_channels
    x_t = rng.child("x_t").normal((n, c, height, width))
    y0 = rng.child("y0").uniform((n, c, height, width))
    target = rng.child("target").uniform((n, c, height, width))
    t = rng.child("t").integers(1, cfg.T + 1, (n,))

    def loss_value() -> float:
        pred = model.forward(x_t, y0, t)
        return float(T.mse_loss(pred, target.transpose(0, 2, 3, 1)).data)

    model.zero_grad()
    model.loss_and_grad(x_t, y0, t, target)

    report: dict[str, float] = {}
    for name, p in model.params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat_size = p.data.size
        idx_rng = rng.child("probes", name)
        if flat_size <= probes_per_group:
            flat_indices = np.arange(flat_size)
        else:
            flat_indices = np.unique(idx_rng.integers(0, flat_size, (probes_per_group,)))
        worst = 0.0
        flat_view = p.data.reshape(-1)
        analytic_flat = analytic.reshape(-1)
        for fi in flat_indices:
            numeric = finite_difference(loss_value, flat_view, int(fi), h=h)
            a = float(analytic_flat[int(fi)])
            if CORRUPT_BACKWARD:
                a += 1.0
            worst = max(worst, relative_error(a, numeric))
        report[name] = worst
    return report
