"""Denoising diffusion machinery: schedule, noising, loss, and samplers.

Index convention: alpha_bars has length T+1 with alpha_bars[0] = 1 (the
clean level); betas/alphas are indexed 1..T via betas[t-1]. Timesteps fed
to the denoiser are embedded as 16 sinusoidal features of t/T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nets
from .rng import Rng

TIME_EMBED_DIM = 16


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray       # (T,), betas[t-1] is beta_t
    alphas: np.ndarray      # (T,)
    alpha_bars: np.ndarray  # (T+1,), alpha_bars[0] == 1.0

    @staticmethod
    def linear(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, T)
        alphas = 1.0 - betas
        alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
        return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)

    @staticmethod
    def linear_scaled(T: int) -> "NoiseSchedule":
        """The default linear range subsampled at T steps.

        The (1e-4, 0.02) endpoints describe a 1000-step reference process;
        per-step betas scale by 1000/T so alpha_bar_T stays near zero at any
        T and the N(0, I) sampling prior matches the forward marginal.
        """
        scale = 1000.0 / T
        return NoiseSchedule.linear(T, 1e-4 * scale, 0.02 * scale)


def time_embedding(t, T: int) -> np.ndarray:
    """16 sinusoidal features of t/T; t may be an int or an int array."""
    t = np.asarray(t, dtype=np.float64)
    frac = t / float(T)
    freqs = 2.0 ** np.arange(TIME_EMBED_DIM // 2)
    angles = frac[..., None] * freqs * 2.0 * np.pi
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


@dataclass
class DenoiserNet:
    """Noise predictor over (noised target | conditioning | time embedding).

    With x0_head=False the MLP output is the predicted noise directly. With
    x0_head=True the MLP estimates the clean signal and the predicted noise
    is derived as (x_t - sqrt(abar_t)*f) / sqrt(1 - abar_t); a plain MLP
    cannot represent the t-dependent gain that direct noise regression
    needs, so the learned stacks all enable the head. Either way the
    emitted quantity, the training target, and the loss are the noise.
    """

    target_dim: int
    cond_dim: int
    net: nets.Mlp
    x0_head: bool = False

    @staticmethod
    def create(target_dim: int, cond_dim: int, rng: Rng, hidden: int = 256,
               depth: int = 3, activation: str = "silu",
               x0_head: bool = False) -> "DenoiserNet":
        widths = [target_dim + cond_dim + TIME_EMBED_DIM] + [hidden] * depth + [target_dim]
        return DenoiserNet(target_dim, cond_dim, nets.init_mlp(widths, rng, activation),
                           x0_head=x0_head)

    def raw(self, x_t: np.ndarray, cond: np.ndarray, t, T: int,
            pvars: dict[str, ad.Var] | None = None):
        """The MLP head output (noise, or the clean-signal estimate)."""
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
        cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
        if cond.shape[0] == 1 and x_t.shape[0] > 1:
            cond = np.broadcast_to(cond, (x_t.shape[0], cond.shape[1]))
        temb = np.atleast_2d(time_embedding(t, T))
        if temb.shape[0] == 1 and x_t.shape[0] > 1:
            temb = np.broadcast_to(temb, (x_t.shape[0], temb.shape[1]))
        inp = np.concatenate([x_t, cond, temb], axis=-1)
        return nets.forward(self.net, inp, pvars)

    def predict_eps(self, x_t: np.ndarray, cond: np.ndarray, t, schedule: "NoiseSchedule"):
        """Predicted noise at step t (inference only)."""
        out = self.raw(x_t, cond, t, schedule.T)
        if not self.x0_head:
            return out
        abar = _per_row(schedule.alpha_bars[np.asarray(t)], out)
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
        return (x_t - np.sqrt(abar) * out) / np.sqrt(1.0 - abar)

    def predict_x0(self, x_t: np.ndarray, cond: np.ndarray, t, schedule: "NoiseSchedule"):
        """Implied clean-signal estimate at step t (inference only)."""
        out = self.raw(x_t, cond, t, schedule.T)
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
        abar = _per_row(schedule.alpha_bars[np.asarray(t)], out)
        if self.x0_head:
            return out
        return (x_t - np.sqrt(1.0 - abar) * out) / np.sqrt(abar)


def _per_row(abar, like: np.ndarray):
    abar = np.asarray(abar, dtype=np.float64)
    if abar.ndim > 0 and like.ndim > 1:
        return abar[:, None]
    return abar


def q_sample(schedule: NoiseSchedule, x0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
    """Forward noising: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    t may be a scalar in [0, T] or a per-row integer array for batches.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr > schedule.T):
        raise ValueError(f"timestep out of range 0..{schedule.T}")
    abar = schedule.alpha_bars[t_arr]
    if t_arr.ndim > 0 and x0.ndim > 1:
        abar = abar[:, None]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def diffusion_loss(denoiser: DenoiserNet, schedule: NoiseSchedule, x0: np.ndarray,
                   cond: np.ndarray, rng: Rng,
                   pvars: dict[str, ad.Var] | None = None,
                   weighting: str = "eps"):
    """Noise-prediction loss: mean squared error between eps and its estimate.

    Samples t uniformly in {1..T} and eps ~ N(0, I) per batch row. Returns a
    Var when pvars is given (training), else a float. For an x0-head net the
    residual is evaluated through the exact identity
    eps - eps_hat = sqrt(abar/(1-abar)) * (f - x0).

    weighting="eps" is the exact noise-space objective. weighting="x0"
    (head nets only) rescales each row by the inverse signal-to-noise
    factor, i.e. uniform clean-signal regression across timesteps; the raw
    objective barely weights the high-noise steps that few-step samplers
    depend on, so the learned stacks train with the rescaled variant.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    batch = x0.shape[0]
    t = rng.randint_array(batch, schedule.T) + 1
    eps = rng.normal(x0.shape)
    x_t = q_sample(schedule, x0, t, eps)
    out = denoiser.raw(x_t, cond, t, schedule.T, pvars)
    if weighting not in ("eps", "x0"):
        raise ValueError(f"unknown weighting {weighting!r}")
    if denoiser.x0_head:
        abar = schedule.alpha_bars[t][:, None]
        coef = np.sqrt(abar / (1.0 - abar)) if weighting == "eps" else np.ones_like(abar)
        if pvars is None:
            diff = (out - x0) * coef
            return float((diff * diff).mean())
        diff = ad.mul(ad.sub(out, ad.Var(x0)), ad.Var(coef))
        return ad.mean(ad.square(diff))
    if weighting == "x0":
        raise ValueError("x0 weighting requires an x0-head denoiser")
    if pvars is None:
        diff = out - eps
        return float((diff * diff).mean())
    return ad.mse(out, eps)


def ddpm_sample(denoiser: DenoiserNet, schedule: NoiseSchedule, cond: np.ndarray,
                rng: Rng, batch: int | None = None,
                clip_x0: float | None = None) -> np.ndarray:
    """Ancestral reverse sampler; sigma_t^2 = beta_t, no noise at the last step.

    clip_x0 bounds the implied clean-signal estimate each step (the update
    is the same recurrence rewritten through the posterior mean; clamping
    keeps small models from running away outside the data range).
    """
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    n = cond.shape[0] if batch is None else batch
    x = rng.normal((n, denoiser.target_dim))
    for t in range(schedule.T, 0, -1):
        beta = schedule.betas[t - 1]
        alpha = schedule.alphas[t - 1]
        abar = schedule.alpha_bars[t]
        abar_prev = schedule.alpha_bars[t - 1]
        if clip_x0 is None:
            eps_hat = denoiser.predict_eps(x, cond, t, schedule)
            x = (x - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
        else:
            x0_hat = np.clip(denoiser.predict_x0(x, cond, t, schedule), -clip_x0, clip_x0)
            x = (np.sqrt(abar_prev) * beta * x0_hat
                 + np.sqrt(alpha) * (1.0 - abar_prev) * x) / (1.0 - abar)
        if t > 1:
            x = x + np.sqrt(beta) * rng.normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise SamplingError(f"non-finite sample at reverse step t={t}")
    return x


def ddim_sample(denoiser: DenoiserNet, schedule: NoiseSchedule, cond: np.ndarray,
                steps: int, w0: np.ndarray) -> np.ndarray:
    """Deterministic (eta=0) DDIM over an evenly strided timestep subsequence.

    The output is a pure function of (net parameters, cond, w0, steps); w0 is
    the explicit initial latent, which is what makes the diffusion policy
    steerable through its noise input.
    """
    if not (1 <= steps <= schedule.T):
        raise ValueError(f"steps must be in 1..{schedule.T}")
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    x = np.atleast_2d(np.asarray(w0, dtype=np.float64)).copy()
    if x.shape[-1] != denoiser.target_dim:
        raise ValueError(f"w0 width {x.shape[-1]} != target width {denoiser.target_dim}")
    taus = np.unique(np.round(np.linspace(1, schedule.T, steps)).astype(int))[::-1]
    for i, t in enumerate(taus):
        t_prev = taus[i + 1] if i + 1 < len(taus) else 0
        abar_t = schedule.alpha_bars[t]
        abar_prev = schedule.alpha_bars[t_prev]
        eps_hat = denoiser.predict_eps(x, cond, int(t), schedule)
        x0_pred = (x - np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(abar_t)
        x = np.sqrt(abar_prev) * x0_pred + np.sqrt(1.0 - abar_prev) * eps_hat
        if not np.all(np.isfinite(x)):
            raise SamplingError(f"non-finite sample at DDIM step t={t}")
    return x
