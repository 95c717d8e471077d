"""Classifier-free conditional score model under the VP SDE.

The network predicts the injected noise; the score is recovered as
``-eps / std(t)``. With the weighting ``lambda(t) = std(t)**2`` the
denoising score-matching loss is exactly ``||eps_pred - eps||**2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
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
class NoiseSchedule:
    beta_min: float = 0.1
    beta_max: float = 20.0
    M: int = 1000
    t_eps: float = 1e-3

    def beta(self, t):
        return self.beta_min + np.asarray(t, dtype=np.float64) * (self.beta_max - self.beta_min)

    def integral(self, t):
        """B(t), the integral of beta from 0 to t."""
        t = np.asarray(t, dtype=np.float64)
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def std(self, t):
        return np.sqrt(-np.expm1(-self.integral(t)))

    def mean_coef(self, t):
        return np.exp(-0.5 * self.integral(t))

    def drift(self, x, t):
        return -0.5 * self.beta(t) * x

    def diffusion(self, t):
        return np.sqrt(self.beta(t))

    @property
    def betas(self) -> np.ndarray:
        """Discrete beta_m for m = 1..M."""
        m = np.arange(1, self.M + 1)
        return self.beta(m / self.M) / self.M

    @property
    def alpha_bars(self) -> np.ndarray:
        """alpha_bar_m for m = 0..M, with alpha_bar_0 = 1."""
        return np.concatenate([[1.0], np.cumprod(1.0 - self.betas)])


def perturb_kernel(sched: NoiseSchedule, x0, t: float):
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return np.asarray(x0) * sched.mean_coef(t), float(sched.std(t))


def score_target(sched: NoiseSchedule, x0, x_t, t: float) -> np.ndarray:
    if t <= 0.0:
        raise ValueError("the perturbation kernel is degenerate at t = 0")
    mean, std = perturb_kernel(sched, x0, t)
    return -(np.asarray(x_t) - mean) / std**2


@dataclass(frozen=True)
class GuidanceConfig:
    omega: float = 2.0
    p_uncond: float = 0.15

    def __post_init__(self):
        if self.omega < 0 or not 0.0 <= self.p_uncond < 1.0:
            raise ValueError("need omega >= 0 and 0 <= p_uncond < 1")


def time_features(t, n_features: int) -> np.ndarray:
    """Sin/cos of t at geometrically spaced frequencies, one row per sample."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = np.geomspace(1.0, 1000.0, n_features // 2)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class ScoreNetwork:
    params: MlpParams
    sched: NoiseSchedule
    dim: int
    n_time: int = 32
    n_cond: int = 16

    @property
    def in_width(self) -> int:
        return self.dim + self.n_time + self.n_cond + 1

    def inputs(self, x, t, y=None, present=None) -> np.ndarray:
        """Network input rows ``[x_t, time feats, condition feats, flag]``.

        ``y=None`` is the unconditional branch. ``present`` (bool per row)
        masks the condition for a subset of rows.
        """
        x = np.atleast_2d(x)
        n = x.shape[0]
        tf = time_features(np.broadcast_to(t, (n,)), self.n_time)
        if y is None:
            flag = np.zeros(n)
            yv = np.zeros(n)
        else:
            flag = np.ones(n) if present is None else np.asarray(present, dtype=np.float64)
            yv = np.broadcast_to(np.asarray(y, dtype=np.float64), (n,)) * flag
        cond = np.repeat(yv[:, None], self.n_cond, axis=1)
        return np.concatenate([x, tf, cond, flag[:, None]], axis=1)

    def eps(self, x, t, y=None) -> np.ndarray:
        return mlp_forward(self.params, self.inputs(x, t, y))

    def score(self, x, t, y=None) -> np.ndarray:
        """s_phi(x_t, t, y); ``y=None`` gives the unconditional score."""
        std = self.sched.std(t)
        if np.ndim(std):
            std = std[:, None]
        out = -self.eps(x, t, y) / std
        return out[0] if np.ndim(x) == 1 else out

    def meta(self) -> dict:
        s = self.sched
        return {
            "kind": "score_network",
            "dim": self.dim,
            "n_time": self.n_time,
            "n_cond": self.n_cond,
            "beta_min": s.beta_min,
            "beta_max": s.beta_max,
            "M": s.M,
            "t_eps": s.t_eps,
        }

    @classmethod
    def from_meta(cls, params: MlpParams, meta: dict) -> ScoreNetwork:
        sched = NoiseSchedule(meta["beta_min"], meta["beta_max"], int(meta["M"]), meta["t_eps"])
        return cls(params, sched, int(meta["dim"]), int(meta["n_time"]), int(meta["n_cond"]))


def train_score_network(
    data: Dataset,
    sched: NoiseSchedule,
    g: GuidanceConfig,
    epochs: int,
    batch: int,
    rng: RngStream,
    hidden: int = 256,
    lr: float = 1e-3,
    n_time: int = 32,
    n_cond: int = 16,
    ema: float = 0.999,
) -> tuple[ScoreNetwork, list[float]]:
    """Denoising score matching on ``data`` (labels are its normalised scores).

    The returned network carries an exponential moving average of the
    iterates (``ema=0`` keeps the last iterate). Constant-rate Adam leaves
    enough jitter in the final weights to bias the conditional mean.
    Also returns the mean loss of every epoch.
    """
    if not 0.0 <= ema < 1.0:
        raise ValueError("ema decay must lie in [0, 1)")
    X, y = data.X, data.y_norm
    n, d = X.shape
    batch = min(batch, n)
    net = ScoreNetwork(None, sched, d, n_time, n_cond)  # type: ignore[arg-type]
    net.params = init_mlp(net.in_width, hidden, d, rng.child(0))
    opt = AdamState.for_params(net.params, lr=lr)
    avg = net.params.copy()
    gen = rng.child(1).generator
    history = []
    for epoch in range(epochs):
        perm = gen.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            b = len(idx)
            t = gen.uniform(sched.t_eps, 1.0, size=b)
            noise = gen.standard_normal((b, d))
            keep = gen.uniform(size=b) >= g.p_uncond
            x_t = X[idx] * sched.mean_coef(t)[:, None] + sched.std(t)[:, None] * noise
            inp = net.inputs(x_t, t, y[idx], present=keep)
            pred, cache = mlp_forward_cached(net.params, inp)
            resid = pred - noise
            loss = float(np.sum(resid**2) / b)
            if not np.isfinite(loss):
                raise FloatingPointError(f"score-matching loss diverged at epoch {epoch}, batch {start // batch}")
            grads, _ = mlp_backward(net.params, inp, 2.0 * resid / b, cache=cache)
            adam_step(opt, net.params, grads)
            for a, w in zip(avg.tensors(), net.params.tensors()):
                a *= ema
                a += (1.0 - ema) * w
            total += loss * b
        history.append(total / n)
    if ema > 0.0:
        net.params = avg
    log.info("score network: %d epochs, final loss %.4g", epochs, history[-1] if history else float("nan"))
    return net, history


def guided_score(net: ScoreNetwork, x_t, t, y, omega: float) -> np.ndarray:
    """(1 + omega) * s(x, t, y) - omega * s(x, t, none)."""
    cond = net.score(x_t, t, y)
    if omega == 0.0:
        return cond
    return (1.0 + omega) * cond - omega * net.score(x_t, t, None)


def probability_flow_heun(
    score_fn: Callable[[np.ndarray, float], np.ndarray],
    sched: NoiseSchedule,
    x_start,
    t_start: float,
    steps: int,
) -> np.ndarray:
    """Integrate dx/dt = f(x, t) - g(t)^2 / 2 * score(x, t) from ``t_start`` down to t_eps.

    Uniform time grid, Heun predictor-corrector on every step except the last,
    which is a plain Euler step.
    """
    if not 0.0 < t_start <= 1.0:
        raise ValueError(f"t_start must lie in (0, 1], got {t_start}")
    if steps < 1:
        raise ValueError("need at least one sampler step")
    x = np.array(x_start, dtype=np.float64)

    def velocity(z, t):
        return sched.drift(z, t) - 0.5 * sched.beta(t) * score_fn(z, t)

    ts = np.linspace(t_start, sched.t_eps, steps + 1)
    for i in range(steps):
        t0, t1 = float(ts[i]), float(ts[i + 1])
        h = t1 - t0
        d0 = velocity(x, t0)
        if i == steps - 1:
            x = x + h * d0
        else:
            x_pred = x + h * d0
            x = x + 0.5 * h * (d0 + velocity(x_pred, t1))
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"sampler state became non-finite at step {i}")
    return x


def heun_sample(
    net: ScoreNetwork,
    sched: NoiseSchedule,
    x_start,
    t_start: float,
    y: float,
    omega: float,
    steps: int,
) -> np.ndarray:
    return probability_flow_heun(
        lambda z, t: guided_score(net, z, t, y, omega), sched, x_start, t_start, steps
    )
