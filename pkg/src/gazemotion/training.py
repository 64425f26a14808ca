"""Optimisation loop, learning-rate schedule and checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .data import Skeleton, Window, skeleton_from_dict, skeleton_to_dict
from .diffusion import DiffusionSchedule, NumericError, cosine_schedule, window_loss
from .model import VARIANTS, GazeMotionDiffusion, ModelConfig

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 3e-4
    lr_decay_epochs: tuple = (75, 150, 225, 275)
    lr_factor: float = 0.9
    seed: int = 0
    variant: str = "full"
    p_uncond: float = 0.1
    grad_clip: float | None = None
    max_steps: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "lr_decay_epochs", tuple(self.lr_decay_epochs))
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or not 0 < self.lr_factor <= 1:
            raise ValueError("epochs, batch_size, lr must be positive and lr_factor in (0, 1]")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


def lr_at(config: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    passed = sum(1 for m in config.lr_decay_epochs if m <= epoch)
    return config.lr * config.lr_factor ** passed


def stack_windows(windows: list[Window]) -> dict[str, torch.Tensor]:
    """Stack windows into float32 tensors obs_poses [N,H,j,3], obs_gaze [N,H,3], fut_poses, fut_gaze."""
    if not windows:
        raise ValueError("no windows to stack")
    fut_gaze = [w.future_gaze if w.future_gaze is not None
                else np.repeat(w.observed.gaze[-1:], w.F, axis=0) for w in windows]
    return {
        "obs_poses": torch.tensor(np.stack([w.observed.poses for w in windows])),
        "obs_gaze": torch.tensor(np.stack([w.observed.gaze for w in windows])),
        "fut_poses": torch.tensor(np.stack([w.future_gt for w in windows])),
        "fut_gaze": torch.tensor(np.stack(fut_gaze)),
    }


@dataclass
class Checkpoint:
    state_dict: dict
    sidecar: dict

    @property
    def epoch(self) -> int:
        return self.sidecar["epoch"]


def make_sidecar(model: GazeMotionDiffusion, config: TrainConfig, skeleton: Skeleton, schedule: DiffusionSchedule,
                 epoch: int, loss_history: list) -> dict:
    mc = model.config
    return {
        "format_version": CHECKPOINT_VERSION,
        "train_config": asdict(config),
        "model_config": mc.to_dict(),
        "skeleton": skeleton_to_dict(skeleton),
        "joint_count": mc.joint_count,
        "H": mc.H, "F": mc.F, "L": mc.L, "T_diff": mc.T_diff,
        "schedule": schedule.kind,
        "variant": mc.variant,
        "epoch": epoch,
        "loss_history": list(loss_history),
    }


def train(model: GazeMotionDiffusion, config: TrainConfig, data: dict, skeleton: Skeleton,
          schedule: DiffusionSchedule | None = None, start_epoch: int = 0, loss_history=None,
          optimizer: torch.optim.Optimizer | None = None):
    """Train in place, yielding a :class:`Checkpoint` after every epoch.

    ``data`` comes from :func:`stack_windows`. The loop is reproducible under a fixed
    seed: the shuffle order and all noise draws come from one seeded generator.
    """
    if config.variant != model.config.variant:
        raise ValueError(f"train config variant {config.variant!r} != model variant {model.config.variant!r}")
    schedule = schedule or cosine_schedule(model.config.T_diff)
    gen = torch.Generator().manual_seed(config.seed + start_epoch)
    opt = optimizer or torch.optim.Adam(model.parameters(), lr=config.lr, betas=(0.9, 0.999), weight_decay=0.0)
    n = data["obs_poses"].shape[0]
    history = list(loss_history or [])
    step = 0
    model.train()
    for epoch in range(start_epoch, config.epochs):
        for group in opt.param_groups:
            group["lr"] = lr_at(config, epoch)
        order = torch.randperm(n, generator=gen)
        total, count = 0.0, 0
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            batch = {k: v[idx] for k, v in data.items()}
            loss = window_loss(model, schedule, batch, gen, config.p_uncond)
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, step {step} (lr={lr_at(config, epoch):g})")
            opt.zero_grad()
            loss.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
            step += 1
            if config.max_steps is not None and step >= config.max_steps:
                break
        history.append(total / count)
        log.info("epoch %d loss %.5f lr %.3g", epoch, history[-1], lr_at(config, epoch))
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        yield Checkpoint(state, make_sidecar(model, config, skeleton, schedule, epoch, history))
        if config.max_steps is not None and step >= config.max_steps:
            break


def checkpoint_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    base = p.with_suffix("") if p.suffix in (".pt", ".json") else p
    return base.with_suffix(".pt"), base.with_suffix(".json")


def save_checkpoint(checkpoint: Checkpoint, path) -> tuple[Path, Path]:
    weights, sidecar = checkpoint_paths(path)
    weights.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"format_version": CHECKPOINT_VERSION, "model_config": checkpoint.sidecar["model_config"],
                "state_dict": checkpoint.state_dict}, weights)
    sidecar.write_text(json.dumps(checkpoint.sidecar, indent=2, sort_keys=True))
    return weights, sidecar


def model_from_sidecar(sidecar: dict) -> GazeMotionDiffusion:
    mc = dict(sidecar["model_config"])
    for key in ("joint_count", "H", "F", "L", "T_diff", "variant"):
        if key in sidecar and sidecar[key] != mc[key]:
            raise CheckpointError(f"sidecar field {key}={sidecar[key]!r} disagrees with model_config {mc[key]!r}")
    if len(sidecar["skeleton"]["joint_names"]) != mc["joint_count"]:
        raise CheckpointError("skeleton joint count disagrees with model_config")
    return GazeMotionDiffusion(ModelConfig(**mc))


def load_checkpoint(path) -> tuple[GazeMotionDiffusion, Checkpoint]:
    weights, sidecar_path = checkpoint_paths(path)
    if not sidecar_path.exists():
        raise CheckpointError(f"missing sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    if sidecar.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {sidecar.get('format_version')}")
    blob = torch.load(weights, map_location="cpu", weights_only=True)
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported weights version {blob.get('format_version')}")
    if blob["model_config"] != sidecar["model_config"]:
        raise CheckpointError("weights were saved with a different model_config than the sidecar declares")
    model = model_from_sidecar(sidecar)
    try:
        model.load_state_dict(blob["state_dict"])
    except RuntimeError as exc:
        raise CheckpointError(f"weights do not match sidecar shapes: {exc}") from None
    model.eval()
    return model, Checkpoint(blob["state_dict"], sidecar)


def checkpoint_skeleton(checkpoint: Checkpoint) -> Skeleton:
    return skeleton_from_dict(checkpoint.sidecar["skeleton"])


def train_config_from_sidecar(sidecar: dict) -> TrainConfig:
    return TrainConfig(**sidecar["train_config"])


def resume_epoch(checkpoint: Checkpoint) -> int:
    return checkpoint.epoch + 1


def steps_per_epoch(n_windows: int, batch_size: int) -> int:
    return math.ceil(n_windows / batch_size)
