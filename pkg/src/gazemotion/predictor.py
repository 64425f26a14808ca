"""Noise prediction network over DCT-coefficient tokens.

Each of the L DCT slots of a noisy ``[3, N, L]`` sequence becomes one token of
width ``3 * N`` projected to ``d_model``. Four stacked stages of
efficient self-attention, step hint, cross-attention on the fused gaze-motion
features and an MLP refine the tokens before projecting back to ``[3, N, L]``.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer diffusion steps, [B] -> [B, dim]."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


def _heads(x: torch.Tensor, n_heads: int) -> torch.Tensor:
    B, L, D = x.shape
    return x.view(B, L, n_heads, D // n_heads)


class EfficientSelfAttention(nn.Module):
    """Linear-complexity attention: softmax(Q) over features, softmax(K) over tokens."""

    def __init__(self, d_model: int, n_heads: int = 8):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.norm = nn.LayerNorm(d_model)
        self.query = nn.Linear(d_model, d_model)
        self.key = nn.Linear(d_model, d_model)
        self.value = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)

    def factors(self, x):
        h = self.norm(x)
        q = torch.softmax(_heads(self.query(h), self.n_heads), dim=-1)
        k = torch.softmax(_heads(self.key(h), self.n_heads), dim=1)
        v = _heads(self.value(h), self.n_heads)
        return q, k, v

    def forward(self, x):
        q, k, v = self.factors(x)
        context = torch.einsum("blhd,blhe->bhde", k, v)
        y = torch.einsum("blhd,bhde->blhe", q, context).reshape(x.shape)
        return x + self.out(y)


class StepHint(nn.Module):
    """e = e_t + W' flatten(c), broadcast-added to every token.

    ``cond_mask`` (per batch row, 0 or 1) drops the condition term for
    unconditional rows, leaving e = e_t.
    """

    def __init__(self, d_model: int, cond_dim: int, n_steps: int):
        super().__init__()
        self.d_model = d_model
        self.n_steps = n_steps
        self.time_proj = nn.Sequential(nn.Linear(d_model, d_model), nn.SiLU(), nn.Linear(d_model, d_model))
        self.cond_proj = nn.Linear(cond_dim, d_model)

    def embed(self, t, cond=None, cond_mask=None):
        if torch.any(t < 0) or torch.any(t >= self.n_steps):
            raise ValueError(f"diffusion step out of range [0, {self.n_steps})")
        dtype = self.cond_proj.weight.dtype
        e = self.time_proj(timestep_embedding(t, self.d_model).to(dtype))
        if cond is not None:
            c = self.cond_proj(cond.flatten(1))
            if cond_mask is not None:
                c = c * cond_mask[:, None]
            e = e + c
        return e

    def forward(self, tokens, e):
        return tokens + e[:, None, :]


class CrossAttention(nn.Module):
    """Queries and values from the condition tokens, keys from the noisy stream.

    Y_c = Dropout(softmax_feat(Q_c) softmax_tok(K_c)^T) LN(V_c) + Y', computed per head.
    """

    def __init__(self, d_model: int, n_heads: int = 8, dropout: float = 0.2):
        super().__init__()
        self.n_heads = n_heads
        self.norm = nn.LayerNorm(d_model)
        self.query = nn.Linear(d_model, d_model)
        self.key = nn.Linear(d_model, d_model)
        self.value = nn.Linear(d_model, d_model)
        self.value_norm = nn.LayerNorm(d_model)
        self.drop = nn.Dropout(dropout)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, y, c_tokens, cond_mask=None):
        if c_tokens is None:
            return y
        q = torch.softmax(_heads(self.query(c_tokens), self.n_heads), dim=-1)
        k = torch.softmax(_heads(self.key(self.norm(y)), self.n_heads), dim=1)
        v = _heads(self.value_norm(self.value(c_tokens)), self.n_heads)
        attn = self.drop(torch.einsum("bihd,bjhd->bhij", q, k))
        out = self.out(torch.einsum("bhij,bjhe->bihe", attn, v).reshape(y.shape))
        if cond_mask is not None:
            out = out * cond_mask[:, None, None]
        return y + out


class MLPBlock(nn.Module):
    def __init__(self, d_model: int, dropout: float = 0.2, ratio: int = 4):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.fc1 = nn.Linear(d_model, ratio * d_model)
        self.drop = nn.Dropout(dropout)
        self.fc2 = nn.Linear(ratio * d_model, d_model)

    def forward(self, x):
        return x + self.fc2(self.drop(F.gelu(self.fc1(self.norm(x)))))


class NoisePredictor(nn.Module):
    def __init__(self, n_nodes: int, n_slots: int, n_steps: int, d_model: int = 512, n_heads: int = 8,
                 n_blocks: int = 4, attn_dropout: float = 0.2, mlp_dropout: float = 0.2):
        super().__init__()
        self.n_nodes = n_nodes
        self.n_slots = n_slots
        feat = 3 * n_nodes
        self.input_proj = nn.Linear(feat, d_model)
        self.cond_token_proj = nn.Linear(feat, d_model)
        self.cond_token_norm = nn.LayerNorm(d_model)
        self.pos = nn.Parameter(0.02 * torch.randn(n_slots, d_model))
        self.step_hint = StepHint(d_model, feat * n_slots, n_steps)
        self.self_attn = nn.ModuleList(EfficientSelfAttention(d_model, n_heads) for _ in range(n_blocks))
        self.cross_attn = nn.ModuleList(CrossAttention(d_model, n_heads, attn_dropout) for _ in range(n_blocks))
        self.mlp = nn.ModuleList(MLPBlock(d_model, mlp_dropout) for _ in range(n_blocks))
        self.out_norm = nn.LayerNorm(d_model)
        self.output_proj = nn.Linear(d_model, feat)

    def tokenize(self, y):
        """[B, 3, N, L] -> [B, L, 3N] (features of one DCT slot per token)."""
        if tuple(y.shape[1:]) != (3, self.n_nodes, self.n_slots):
            raise ValueError(f"expected [B, 3, {self.n_nodes}, {self.n_slots}], got {tuple(y.shape)}")
        B = y.shape[0]
        return y.permute(0, 3, 1, 2).reshape(B, self.n_slots, 3 * self.n_nodes)

    def untokenize(self, tokens):
        B = tokens.shape[0]
        return tokens.reshape(B, self.n_slots, 3, self.n_nodes).permute(0, 2, 3, 1)

    def tokenize_project(self, y):
        return self.input_proj(self.tokenize(y))

    def forward(self, y_t, t, cond=None, cond_mask=None):
        """Predict the noise in ``y_t`` [B, 3, N, L] at integer steps ``t`` [B].

        ``cond`` is the fused feature grid [B, 3, N, L] or None (unconditional);
        ``cond_mask`` switches the condition off row by row.
        """
        squeeze = y_t.dim() == 3
        if squeeze:
            y_t = y_t.unsqueeze(0)
            cond = cond.unsqueeze(0) if cond is not None else None
        if not torch.is_tensor(t):
            t = torch.tensor([t])
        t = t.reshape(-1).expand(y_t.shape[0]) if t.numel() == 1 else t
        x = self.tokenize_project(y_t) + self.pos
        c_tokens = None
        if cond is not None:
            c_tokens = self.cond_token_norm(self.cond_token_proj(self.tokenize(cond)) + self.pos)
        e = self.step_hint.embed(t, cond, cond_mask)
        for sa, ca, mlp in zip(self.self_attn, self.cross_attn, self.mlp):
            x = sa(x)
            x = self.step_hint(x, e)
            x = ca(x, c_tokens, cond_mask)
            x = mlp(x)
        eps = self.untokenize(self.output_proj(self.out_norm(x)))
        return eps.squeeze(0) if squeeze else eps
