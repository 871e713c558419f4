"""Flow-matching objective and sampling.

The probability path is the straight line x_t = (1-t) x_0 + t X_T from
standard-normal noise (t=0) to data tokens (t=1); the regression target is
its constant velocity u_t = X_T - x_0. Training times are drawn from a
logit-normal; sampling integrates dx/dt = v(x, t) with explicit Euler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .model import SceneVideoModel, TokenBatch


@dataclass(frozen=True)
class FlowState:
    """One interpolation point on the noise -> data path."""

    t: torch.Tensor      # (B,)
    x0: torch.Tensor     # (B, L, D) noise
    xt: torch.Tensor     # (B, L, D)
    ut: torch.Tensor     # (B, L, D) target velocity


def interpolate(target: torch.Tensor, t: torch.Tensor,
                x0: torch.Tensor) -> FlowState:
    """Build the flow state; endpoints are exact: xt(0)=x0, xt(1)=target."""
    tt = t.reshape(-1, 1, 1).to(target.dtype)
    xt = (1.0 - tt) * x0 + tt * target
    return FlowState(t=t, x0=x0, xt=xt, ut=target - x0)


def sample_logit_normal(n: int, mu: float = 0.0, sigma: float = 1.0,
                        generator: torch.Generator | None = None,
                        dtype=torch.float32) -> torch.Tensor:
    z = torch.randn(n, generator=generator, dtype=dtype)
    return torch.sigmoid(mu + sigma * z)


@dataclass(frozen=True)
class NoiseScheduler:
    """Discrete scheduler positions 0..num_positions mapped onto the flow path.

    Position u corresponds to noise fraction s = u / num_positions, i.e. the
    interpolant (1-s) x + s eps (pure data at 0, pure noise at num_positions).
    """

    num_positions: int = 1000

    def noise_fraction(self, position: float) -> float:
        if not (0 <= position <= self.num_positions):
            raise ValueError("scheduler position out of range")
        return position / self.num_positions


def augment_preceding(x_p: torch.Tensor, scheduler: NoiseScheduler,
                      t_range: tuple[float, float] = (0.0, 50.0),
                      generator: torch.Generator | None = None) -> torch.Tensor:
    """Low-noise augmentation of clean preceding-latent tokens.

    Draws a scheduler position uniformly from t_range and mixes in fresh
    Gaussian noise at that position's noise fraction; closes the gap between
    clean training conditions and model-generated inference conditions.
    """
    lo, hi = t_range
    if not (0 <= lo <= hi <= scheduler.num_positions):
        raise ValueError("augmentation interval out of scheduler range")
    if x_p.numel() == 0:
        return x_p.clone()
    u = lo + (hi - lo) * torch.rand((), generator=generator, dtype=torch.float64)
    s = scheduler.noise_fraction(float(u))
    noise = torch.randn(x_p.shape, generator=generator, dtype=x_p.dtype)
    return (1.0 - s) * x_p + s * noise


def expected_sq_deviation(x_p: torch.Tensor, scheduler: NoiseScheduler,
                          t_range: tuple[float, float]) -> float:
    """Closed form E ||x̃ - x||^2 over the augmentation draw.

    x̃ - x = s (eps - x) with s = u / P, u ~ U[lo, hi], eps ~ N(0, I):
    E||x̃ - x||^2 = E[s^2] (||x||^2 + numel), E[s^2] = (lo^2+lo*hi+hi^2)/(3 P^2).
    """
    lo, hi = t_range
    e_s2 = (lo * lo + lo * hi + hi * hi) / (3.0 * scheduler.num_positions ** 2)
    return float(e_s2 * (x_p.double().pow(2).sum().item() + x_p.numel()))


def fm_loss(model: SceneVideoModel, batch: TokenBatch, target: torch.Tensor, *,
            generator: torch.Generator | None = None,
            t: torch.Tensor | None = None, x0: torch.Tensor | None = None,
            mu: float = 0.0, sigma: float = 1.0) -> torch.Tensor:
    """Mean squared error between predicted and true path velocity.

    t and x0 default to fresh logit-normal / standard-normal draws; pass them
    explicitly for deterministic evaluations (e.g. finite-difference checks).
    """
    b = target.shape[0]
    if t is None:
        t = sample_logit_normal(b, mu, sigma, generator, dtype=target.dtype)
    if x0 is None:
        x0 = torch.randn(target.shape, generator=generator, dtype=target.dtype)
    state = interpolate(target, t, x0)
    v = model(batch, state.xt, state.t)
    return (v - state.ut).pow(2).mean()


@torch.no_grad()
def euler_sample(model: SceneVideoModel, batch: TokenBatch, steps: int, *,
                 generator: torch.Generator | None = None,
                 x0: torch.Tensor | None = None,
                 dtype=torch.float32) -> torch.Tensor:
    """Integrate the velocity field from noise (t=0) to tokens (t=1)."""
    if steps < 1:
        raise ValueError("sampler needs at least one step")
    b, lt = batch.batch_size, batch.target_len
    d = batch.main_values.shape[-1]
    if x0 is None:
        x0 = torch.randn((b, lt, d), generator=generator, dtype=dtype)
    x = x0.clone()
    ts = torch.linspace(0.0, 1.0, steps + 1, dtype=dtype)
    for i in range(steps):
        v = model(batch, x, ts[i].expand(b))
        x = x + (ts[i + 1] - ts[i]) * v
    return x


def sample_clip(model: SceneVideoModel, batch: TokenBatch, steps: int = 20, *,
                generator: torch.Generator | None = None) -> np.ndarray:
    """Generate frames: Euler-integrate, detokenize, clip to [0,1].

    Returns (B * n_frames stacked as) (n_frames, H, W, 3) float32 for a
    single-sample batch; multi-sample batches return (B, n_frames, H, W, 3).
    """
    cfg = model.config
    tokens = euler_sample(model, batch, steps, generator=generator)
    tokenizer = cfg.build_tokenizer()
    outs = []
    for i in range(batch.batch_size):
        frames = tokenizer.detokenize(tokens[i], batch.n_target_frames,
                                      cfg.frame_height, cfg.frame_width)
        outs.append(np.clip(frames, 0.0, 1.0).astype(np.float32))
    return outs[0] if batch.batch_size == 1 else np.stack(outs)
