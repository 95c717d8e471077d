"""Surrogate regression and the gradient-ascent synthetic dataset (pseudo targets)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .numeric_core import (
    AdamState,
    MlpParams,
    RngStream,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
)
from .tasks import Dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SurrogateConfig:
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    ascent_step: float = 1e-3
    ascent_iters: int = 100
    hidden: int = 256

    def __post_init__(self):
        if self.ascent_step < 0 or self.ascent_iters < 0 or self.epochs < 1:
            raise ValueError("need ascent_step >= 0, ascent_iters >= 0 and epochs >= 1")


def train_surrogate(
    data: Dataset, cfg: SurrogateConfig, rng: RngStream, last_scale: float = 1.0
) -> tuple[MlpParams, float]:
    """Mini-batch Adam on mean squared error against the normalised scores.

    Returns the fitted parameters and the full-dataset training MSE.
    """
    X, y = data.X, data.y_norm[:, None]
    n = X.shape[0]
    batch = min(cfg.batch_size, n)
    params = init_mlp(X.shape[1], cfg.hidden, 1, rng.child(0), last_scale=last_scale)
    opt = AdamState.for_params(params, lr=cfg.lr)
    order_rng = rng.child(1).generator
    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(n)
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            pred, cache = mlp_forward_cached(params, X[idx])
            resid = pred - y[idx]
            loss = float(np.mean(resid**2))
            if not np.isfinite(loss):
                raise FloatingPointError(f"surrogate loss diverged at epoch {epoch}, batch {start // batch}")
            grads, _ = mlp_backward(params, X[idx], 2.0 * resid / len(idx), cache=cache)
            adam_step(opt, params, grads)
    mse = float(np.mean((mlp_forward(params, X) - y) ** 2))
    log.info("surrogate: %d epochs, train mse %.3g", cfg.epochs, mse)
    return params, mse


def surrogate_grad(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Gradient of the scalar surrogate output with respect to each input row."""
    x = np.atleast_2d(x)
    _, gx = mlp_backward(params, x, np.ones((x.shape[0], 1)))
    return gx


def ascend(
    surrogate: MlpParams | None,
    x0,
    eta: float,
    T: int,
    grad_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """``T`` steps of ``x <- x + eta * grad f(x)``, each gradient taken at the previous iterate.

    ``grad_fn`` replaces the surrogate gradient (used with analytic objectives).
    Works on a single design or a batch of rows; no clamping is applied.
    """
    x = np.array(x0, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if grad_fn is None:
        grad_fn = lambda z: surrogate_grad(surrogate, z)  # noqa: E731
    for t in range(1, T + 1):
        x = x + eta * grad_fn(x)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"gradient ascent produced a non-finite iterate at step {t}")
    return x[0] if single else x


def build_synthetic_dataset(surrogate: MlpParams, data: Dataset, cfg: SurrogateConfig) -> Dataset:
    XT = ascend(surrogate, data.X, cfg.ascent_step, cfg.ascent_iters)
    pred = mlp_forward(surrogate, XT)[:, 0]
    # Labels live in normalised units; stored raw so D' shares D's bounds.
    y_raw = data.y_min + pred * (data.y_max - data.y_min)
    return replace(data, X=XT, y_raw=y_raw, predicted=True)
