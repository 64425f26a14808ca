"""The gaze-conditioned motion diffusion network and its input/output coordinate maps."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .data import Skeleton
from .dct import build_basis, pad_last_frame
from .gat import GATEncoder, fuse_inputs
from .gaze_encoder import GazeEncoder
from .predictor import NoisePredictor

VARIANTS = ("full", "no_gaze", "head_direction")


@dataclass(frozen=True)
class ModelConfig:
    joint_count: int
    H: int = 15
    F: int = 60
    L: int = 20
    T_diff: int = 1500
    variant: str = "full"
    d_model: int = 512
    n_heads: int = 8
    n_blocks: int = 4
    gat_hidden: int = 16
    gat_heads: int = 8
    gat_dropout: float = 0.3
    gaze_hidden: int = 32
    attn_dropout: float = 0.2
    mlp_dropout: float = 0.2
    halve: str = "first"
    coord_scale: float = 0.25
    root_index: int = 0
    neck_index: int | None = None
    head_index: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 1 <= self.L <= self.H + self.F:
            raise ValueError("need 1 <= L <= H + F")
        if self.variant == "head_direction" and (self.neck_index is None or self.head_index is None):
            raise ValueError("head_direction variant needs neck_index and head_index")

    @property
    def uses_gaze(self) -> bool:
        return self.variant != "no_gaze"

    @property
    def n_nodes(self) -> int:
        return self.joint_count + 1 if self.uses_gaze else self.joint_count

    @classmethod
    def for_skeleton(cls, skeleton: Skeleton, **kw) -> ModelConfig:
        roles = {"root_index": skeleton.root_index}
        if skeleton.neck and skeleton.head:
            roles.update(neck_index=skeleton.index(skeleton.neck), head_index=skeleton.index(skeleton.head))
        return cls(joint_count=skeleton.joint_count, **{**roles, **kw})

    def to_dict(self) -> dict:
        return asdict(self)


class GazeMotionDiffusion(nn.Module):
    """Encoders, fusion network and noise predictor operating on [B, 3, N, L] DCT grids.

    Poses are expressed relative to the root joint at the last observed frame and
    multiplied by ``coord_scale`` before the DCT; the gaze (or head-direction)
    channel rides along as a virtual joint in the last node slot.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        basis = build_basis(c.H + c.F, c.L)
        fwd, inv = basis.torch(torch.float32)
        self.register_buffer("dct_fwd", fwd, persistent=False)
        self.register_buffer("dct_inv", inv, persistent=False)
        self.motion_encoder = GATEncoder(c.joint_count, c.L, 1, c.gat_hidden, c.gat_dropout, c.halve, c.gat_heads)
        self.gaze_encoder = GazeEncoder(c.gaze_hidden) if c.uses_gaze else None
        self.fusion = GATEncoder(c.n_nodes, c.L, 4, c.gat_hidden, c.gat_dropout, c.halve, c.gat_heads)
        self.predictor = NoisePredictor(c.n_nodes, c.L, c.T_diff, c.d_model, c.n_heads, c.n_blocks,
                                        c.attn_dropout, c.mlp_dropout)

    # -- coordinate maps -------------------------------------------------

    def dct(self, x):
        return x @ self.dct_fwd.T.to(x.dtype)

    def idct(self, y):
        return y @ self.dct_inv.T.to(y.dtype)

    def gaze_channel(self, poses, gaze):
        """Direction channel for the virtual joint: gaze, or neck->head for the head variant."""
        c = self.config
        if c.variant == "head_direction":
            v = poses[..., c.head_index, :] - poses[..., c.neck_index, :]
            return v / v.norm(dim=-1, keepdim=True).clamp_min(1e-9)
        return gaze

    def origin(self, obs_poses):
        return obs_poses[:, -1, self.config.root_index, :]

    def to_grid(self, poses, gaze, origin):
        """poses [B, T, j, 3], gaze [B, T, 3] (meters, world) -> [B, 3, N, T] model space."""
        c = self.config
        x = ((poses - origin[:, None, None, :]) * c.coord_scale).permute(0, 3, 2, 1)
        if c.uses_gaze:
            g = (self.gaze_channel(poses, gaze) * c.coord_scale).permute(0, 2, 1).unsqueeze(2)
            x = torch.cat([x, g], dim=2)
        return x

    def poses_from_grid(self, x, origin):
        """[B, 3, N, T] -> pose [B, T, j, 3] in world meters (gaze node dropped)."""
        j = self.config.joint_count
        return x[:, :, :j, :].permute(0, 3, 2, 1) / self.config.coord_scale + origin[:, None, None, :]

    def padded_observation(self, obs_poses, obs_gaze, origin=None):
        origin = self.origin(obs_poses) if origin is None else origin
        return pad_last_frame(self.to_grid(obs_poses, obs_gaze, origin), self.config.F)

    # -- network ---------------------------------------------------------

    def condition(self, obs_poses, obs_gaze, origin=None):
        """Fused gaze-motion features [B, 3, N, L] from H observed frames."""
        j = self.config.joint_count
        y_obs = self.dct(self.padded_observation(obs_poses, obs_gaze, origin))
        f_motion = self.motion_encoder(y_obs[:, :, :j])
        if self.gaze_encoder is None:
            return self.fusion(f_motion)
        f_gaze = self.gaze_encoder(y_obs[:, :, j:])
        return self.fusion(fuse_inputs(f_gaze, f_motion))

    def predict_noise(self, y_t, t, cond=None, cond_mask=None):
        return self.predictor(y_t, t, cond, cond_mask)

    def forward(self, y_t, t, cond=None, cond_mask=None):
        return self.predictor(y_t, t, cond, cond_mask)
