"""Cosine noise schedule, forward noising, training loss and masked DDIM completion."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import FormatError, _read_container

GMDP_MAGIC = b"GMDP"
GMDP_VERSION = 1


class NumericError(RuntimeError):
    """Non-finite values appeared during training or sampling."""


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bar: np.ndarray
    kind: str = "cosine"

    @property
    def T_diff(self) -> int:
        return len(self.betas)

    def alpha_bar_at(self, t: int) -> float:
        """ᾱ at step ``t``; t = -1 is the clean end point with ᾱ = 1."""
        if t == -1:
            return 1.0
        if not 0 <= t < self.T_diff:
            raise ValueError(f"step {t} out of range [0, {self.T_diff})")
        return float(self.alpha_bar[t])

    def ddim_timesteps(self, n_steps: int) -> list[int]:
        """Uniformly strided sub-sequence of ``n_steps`` training steps, ascending, starting at 0."""
        if not 1 <= n_steps <= self.T_diff:
            raise ValueError(f"need 1 <= n_steps <= {self.T_diff}")
        stride = self.T_diff // n_steps
        return list(range(0, stride * n_steps, stride))


def schedule_from_betas(betas, kind: str = "custom") -> DiffusionSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    alphas = 1.0 - betas
    return DiffusionSchedule(betas, alphas, np.cumprod(alphas), kind)


def cosine_schedule(T_diff: int = 1500, s: float = 0.008, max_beta: float = 0.999) -> DiffusionSchedule:
    if T_diff < 1:
        raise ValueError("T_diff must be >= 1")

    def f(u):
        return np.cos((u / T_diff + s) / (1 + s) * np.pi / 2) ** 2

    steps = np.arange(T_diff + 1, dtype=np.float64)
    ab = f(steps) / f(0.0)
    betas = np.clip(1.0 - ab[1:] / ab[:-1], 0.0, max_beta)
    return schedule_from_betas(betas, "cosine")


def _bcast(v, like: torch.Tensor) -> torch.Tensor:
    v = torch.as_tensor(v, dtype=like.dtype)
    return v.reshape(-1, *([1] * (like.dim() - 1))) if v.dim() else v


def q_sample(schedule: DiffusionSchedule, y0: torch.Tensor, t, eps: torch.Tensor) -> torch.Tensor:
    """y_t = sqrt(ᾱ_t) y0 + sqrt(1 - ᾱ_t) eps; ``t`` is an int or a [B] tensor."""
    t_arr = np.asarray(t.cpu() if torch.is_tensor(t) else t)
    if np.any(t_arr < 0) or np.any(t_arr >= schedule.T_diff):
        raise ValueError(f"step out of range [0, {schedule.T_diff})")
    ab = schedule.alpha_bar[t_arr]
    return _bcast(np.sqrt(ab), y0) * y0 + _bcast(np.sqrt(1.0 - ab), y0) * eps


def cfg_combine(eps_cond: torch.Tensor, eps_uncond: torch.Tensor, w: float) -> torch.Tensor:
    if w == 1.0:
        return eps_cond
    return eps_uncond + w * (eps_cond - eps_uncond)


def ddim_step(schedule: DiffusionSchedule, y_t, eps_hat, t: int, t_prev: int, eta: float = 0.0, noise=None,
              clip_x0: float | None = None, return_x0: bool = False):
    """One DDIM update from step ``t`` to ``t_prev`` (``t_prev = -1`` lands on clean data).

    ``clip_x0`` bounds the clean-data estimate elementwise; near the end of the cosine
    schedule ᾱ is ~1e-9 and the unclipped estimate amplifies prediction error enormously.
    """
    if not (t > t_prev >= -1):
        raise ValueError(f"invalid DDIM step pair t={t}, t_prev={t_prev}")
    ab_t = schedule.alpha_bar_at(t)
    ab_prev = schedule.alpha_bar_at(t_prev)
    x0 = (y_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    if clip_x0 is not None:
        x0 = x0.clamp(-clip_x0, clip_x0)
    sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_prev)
    y_prev = np.sqrt(ab_prev) * x0 + np.sqrt(max(1.0 - ab_prev - sigma ** 2, 0.0)) * eps_hat
    if sigma > 0:
        if noise is None:
            raise ValueError("eta > 0 needs a noise tensor")
        y_prev = y_prev + sigma * noise
    return (y_prev, x0) if return_x0 else y_prev


# ---------------------------------------------------------------------------
# training objective

def diffusion_loss(model, schedule: DiffusionSchedule, y_full, cond, generator: torch.Generator,
                   p_uncond: float = 0.1, return_details: bool = False):
    """Mean squared noise-prediction error with random condition dropout.

    ``y_full`` [B, 3, N, L] is the DCT of the full padded-free sequence; ``cond``
    the fused condition or None. Each row independently loses its condition with
    probability ``p_uncond``.
    """
    B = y_full.shape[0]
    t = torch.randint(0, schedule.T_diff, (B,), generator=generator)
    eps = torch.randn(y_full.shape, generator=generator, dtype=y_full.dtype)
    uncond = torch.rand(B, generator=generator) < p_uncond
    cond_mask = (~uncond).to(y_full.dtype) if cond is not None else None
    y_t = q_sample(schedule, y_full, t, eps)
    eps_hat = model.predict_noise(y_t, t, cond, cond_mask)
    loss = torch.mean((eps - eps_hat) ** 2)
    if return_details:
        return loss, {"t": t, "uncond": uncond}
    return loss


def window_loss(model, schedule, batch: dict, generator, p_uncond: float = 0.1, return_details: bool = False):
    """Loss on a batch of windows: dict with obs_poses, obs_gaze, fut_poses, fut_gaze tensors."""
    obs_p, obs_g = batch["obs_poses"], batch["obs_gaze"]
    origin = model.origin(obs_p)
    full = model.to_grid(torch.cat([obs_p, batch["fut_poses"]], 1), torch.cat([obs_g, batch["fut_gaze"]], 1), origin)
    y_full = model.dct(full)
    cond = model.condition(obs_p, obs_g, origin)
    return diffusion_loss(model, schedule, y_full, cond, generator, p_uncond, return_details)


# ---------------------------------------------------------------------------
# sampling

@dataclass(frozen=True)
class SamplerConfig:
    num_samples: int = 10
    guidance: float = 1.0
    eta: float = 0.0
    seed: int = 0
    ddim_steps: int = 100
    clip_x0: float | None = 10.0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must be in [0, 1]")


def chain_generators(seed: int, chain_ids) -> list[torch.Generator]:
    gens = []
    for cid in chain_ids:
        state = np.random.SeedSequence([seed, int(cid)]).generate_state(2, dtype=np.uint64)
        gens.append(torch.Generator().manual_seed(int(state[0] >> np.uint64(1))))
    return gens


def _chain_randn(gens, shape, dtype):
    return torch.stack([torch.randn(shape, generator=g, dtype=dtype) for g in gens])


@torch.no_grad()
def sample_completion(model, schedule: DiffusionSchedule, obs_poses, obs_gaze, config: SamplerConfig = SamplerConfig(),
                      chain_offset: int = 0, return_composite: bool = False):
    """Draw K future completions per observed window.

    obs_poses [B, H, j, 3] and obs_gaze [B, H, 3] in world meters. Returns predictions
    [B, K, F, j, 3]. Chain (b, k) uses its own generator seeded from
    (seed, chain_offset + b * K + k), so results do not depend on batching.
    Observed frames are re-imposed in the time domain after every step, noised to
    the level of the next step; the last step lands on ᾱ = 1 so the final
    composite carries the raw observation.
    """
    obs_poses = torch.as_tensor(obs_poses, dtype=torch.float32)
    obs_gaze = torch.as_tensor(obs_gaze, dtype=torch.float32)
    if obs_poses.dim() == 3:
        obs_poses, obs_gaze = obs_poses[None], obs_gaze[None]
    c = model.config
    B, K = obs_poses.shape[0], config.num_samples
    if obs_poses.shape[1] != c.H:
        raise ValueError(f"expected {c.H} observed frames, got {obs_poses.shape[1]}")
    was_training = model.training
    model.eval()
    try:
        origin = model.origin(obs_poses)
        x_pad = model.padded_observation(obs_poses, obs_gaze, origin)
        cond = model.condition(obs_poses, obs_gaze, origin)
        rep = lambda x: x.repeat_interleave(K, dim=0)  # noqa: E731
        x_pad, cond, origin = rep(x_pad), rep(cond), rep(origin)
        shape = (3, c.n_nodes, c.L)
        gens = chain_generators(config.seed, range(chain_offset, chain_offset + B * K))
        y = _chain_randn(gens, shape, x_pad.dtype)

        steps = schedule.ddim_timesteps(config.ddim_steps)[::-1]
        pairs = list(zip(steps, steps[1:] + [-1]))
        composite = None
        for t, t_prev in pairs:
            tt = torch.full((B * K,), t, dtype=torch.long)
            w = config.guidance
            if w == 1.0:
                eps = model.predict_noise(y, tt, cond)
            elif w == 0.0:
                eps = model.predict_noise(y, tt, None)
            else:
                eps = cfg_combine(model.predict_noise(y, tt, cond), model.predict_noise(y, tt, None), w)
            z = _chain_randn(gens, shape, y.dtype) if config.eta > 0 else None
            y_cand = ddim_step(schedule, y, eps, t, t_prev, config.eta, z, config.clip_x0)
            m_hat = model.idct(y_cand)
            if t_prev >= 0:
                ab = schedule.alpha_bar_at(t_prev)
                eps_obs = _chain_randn(gens, shape, y.dtype)
                m_obs = np.sqrt(ab) * x_pad + np.sqrt(1.0 - ab) * model.idct(eps_obs)
            else:
                m_obs = x_pad
            composite = torch.cat([m_obs[..., :c.H], m_hat[..., c.H:]], dim=-1)
            y = model.dct(composite)
            if not torch.isfinite(y).all():
                raise NumericError(f"non-finite values in sampler at step {t}")
        preds = model.poses_from_grid(composite, origin)[:, c.H:]
        preds = preds.reshape(B, K, c.F, c.joint_count, 3)
    finally:
        model.train(was_training)
    if return_composite:
        return preds, composite.reshape(B, K, *composite.shape[1:])
    return preds


# ---------------------------------------------------------------------------
# GMDP prediction dump

def write_gmdp(preds, path, **extra) -> None:
    preds = np.ascontiguousarray(np.asarray(preds, dtype="<f4"))
    if preds.ndim != 4 or preds.shape[-1] != 3:
        raise ValueError(f"predictions must be [K, F, j, 3], got {preds.shape}")
    K, F, j, _ = preds.shape
    header = json.dumps({"K": K, "F": F, "j": j, **extra}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(GMDP_MAGIC)
        fh.write(struct.pack("<II", GMDP_VERSION, len(header)))
        fh.write(header)
        fh.write(preds.tobytes())


def read_gmdp(path) -> tuple[np.ndarray, dict]:
    header, payload = _read_container(path, GMDP_MAGIC)
    try:
        K, F, j = int(header["K"]), int(header["F"]), int(header["j"])
    except KeyError as exc:
        raise FormatError(f"{path}: header missing {exc}") from None
    n = K * F * j * 3 * 4
    if len(payload) != n:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {n}")
    return np.frombuffer(payload, dtype="<f4").reshape(K, F, j, 3).copy(), header


def gmdp_name(sequence_id: str, start: int) -> str:
    return f"{sequence_id}_{start:06d}.gmdp"


def list_gmdp(directory) -> list[Path]:
    return sorted(Path(directory).glob("*.gmdp"))
