"""Existing-design editing: noise the top offline designs, then denoise them under guidance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import NoiseSchedule, ScoreNetwork, heun_sample
from .numeric_core import RngStream, gaussian
from .tasks import Dataset


@dataclass(frozen=True)
class EditConfig:
    m: int = 400
    y_target: float = 1.0
    omega: float = 2.0
    K: int = 256
    steps: int = 128

    def validate(self, sched: NoiseSchedule, n: int | None = None) -> None:
        if not 0 <= self.m <= sched.M:
            raise ValueError(f"noise time m={self.m} outside [0, {sched.M}]")
        if self.K < 1:
            raise ValueError("budget K must be >= 1")
        if n is not None and self.K > n:
            raise ValueError(f"budget K={self.K} exceeds dataset size N={n}")

    def sampler_steps(self, sched: NoiseSchedule) -> int:
        """Integration steps for the edited interval: ``steps * m / M``, at least 1."""
        return max(1, int(round(self.steps * self.m / sched.M)))


def select_top_k(data: Dataset, K: int) -> tuple[np.ndarray, np.ndarray]:
    """The K best designs by raw score (descending, ties by dataset index) and their indices."""
    if K > data.N:
        raise ValueError(f"budget K={K} exceeds dataset size N={data.N}")
    order = np.argsort(-data.y_raw, kind="stable")[:K]
    return data.X[order], order


def perturb_design(x_top, sched: NoiseSchedule, m: int, rng: RngStream) -> np.ndarray:
    x_top = np.asarray(x_top, dtype=np.float64)
    if not 0 <= m <= sched.M:
        raise ValueError(f"noise time m={m} outside [0, {sched.M}]")
    scale = np.sqrt(1.0 - sched.alpha_bars[m])
    return x_top + scale * gaussian(rng, x_top.shape)


def edit_design(
    net: ScoreNetwork, sched: NoiseSchedule, x_top, cfg: EditConfig, rng: RngStream
) -> np.ndarray:
    """Perturb ``x_top`` (a design or a batch whose noise comes from ``rng``) and denoise it."""
    x_perturb = perturb_design(x_top, sched, cfg.m, rng)
    if cfg.m == 0:
        return x_perturb
    return heun_sample(
        net, sched, x_perturb, cfg.m / sched.M, cfg.y_target, cfg.omega, cfg.sampler_steps(sched)
    )


def generate_candidates(
    net: ScoreNetwork, sched: NoiseSchedule, data: Dataset, cfg: EditConfig, rng: RngStream
) -> np.ndarray:
    """Edit the k-th best design with stream ``rng.child(k)``, for k = 0..K-1.

    The noise is drawn per candidate; the deterministic denoising is then run
    on the whole batch at once (rows never interact).
    """
    cfg.validate(sched, data.N)
    tops, _ = select_top_k(data, cfg.K)
    starts = np.stack([perturb_design(tops[k], sched, cfg.m, rng.child(k)) for k in range(cfg.K)])
    if cfg.m == 0:
        return starts
    return heun_sample(
        net, sched, starts, cfg.m / sched.M, cfg.y_target, cfg.omega, cfg.sampler_steps(sched)
    )


def sample_from_prior(
    net: ScoreNetwork, sched: NoiseSchedule, n: int, dim: int, cfg: EditConfig, rng: RngStream
) -> np.ndarray:
    """Generation without editing: start every candidate from N(0, I) at t = 1."""
    starts = np.stack([gaussian(rng.child(k), dim) for k in range(n)])
    return heun_sample(net, sched, starts, 1.0, cfg.y_target, cfg.omega, cfg.steps)
