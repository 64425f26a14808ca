"""Spatio-temporal graph attention over [C, N, M] feature grids.

Tensors are laid out ``[B, C, N, M]``: channels, graph nodes (joints, with gaze as
an optional virtual joint), and temporal/DCT slots. Unbatched ``[C, N, M]`` inputs
are accepted everywhere and returned unbatched.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

N_HEAD = 8
LEAKY_SLOPE = 0.2


def _batched(x: torch.Tensor):
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() != 4:
        raise ValueError(f"expected [B, C, N, M] or [C, N, M], got shape {tuple(x.shape)}")
    return x, False


class GATLayer(nn.Module):
    """Fully connected multi-head graph attention along one axis of the grid.

    ``axis="temporal"`` treats the M slots as nodes with features flattened from
    ``[C, N]``; ``axis="spatial"`` treats the N joints as nodes with ``[C, M]``
    features. Heads share the input features and are averaged, so the layer has
    no value projection: h_i' = LeakyReLU(mean_n sum_k alpha^n_ik h_k).
    """

    def __init__(self, axis: str, channels: int, other: int, n_head: int = N_HEAD, slope: float = LEAKY_SLOPE):
        super().__init__()
        if axis not in ("temporal", "spatial"):
            raise ValueError(f"axis must be 'temporal' or 'spatial', got {axis!r}")
        self.axis = axis
        self.channels = channels
        self.other = other
        self.slope = slope
        self.feat = channels * other
        self.a = nn.Parameter(torch.randn(n_head, 2 * self.feat) / self.feat ** 0.5)

    def _nodes(self, x: torch.Tensor) -> torch.Tensor:
        B, C, N, M = x.shape
        if self.axis == "temporal":
            return x.reshape(B, C * N, M).transpose(1, 2)
        return x.permute(0, 2, 1, 3).reshape(B, N, C * M)

    def _grid(self, h: torch.Tensor, shape) -> torch.Tensor:
        B, C, N, M = shape
        if self.axis == "temporal":
            return h.transpose(1, 2).reshape(B, C, N, M)
        return h.reshape(B, N, C, M).permute(0, 2, 1, 3)

    def _check(self, x):
        other = x.shape[2] if self.axis == "temporal" else x.shape[3]
        if x.shape[1] != self.channels or other != self.other:
            raise ValueError(f"{self.axis} GAT expects per-node features of size {self.channels}x{self.other}, "
                             f"got input shape {tuple(x.shape)}")

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """Attention weights [B, n_head, nodes, nodes]; each row sums to one."""
        x, _ = _batched(x)
        self._check(x)
        h = self._nodes(x)
        a_src, a_dst = self.a[:, :self.feat], self.a[:, self.feat:]
        s_i = torch.einsum("bif,nf->bni", h, a_src)
        s_k = torch.einsum("bkf,nf->bnk", h, a_dst)
        e = F.leaky_relu(s_i[..., :, None] + s_k[..., None, :], self.slope)
        return torch.softmax(e, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x, squeeze = _batched(x)
        self._check(x)
        h = self._nodes(x)
        attn = self.attention(x).mean(dim=1)
        out = F.leaky_relu(attn @ h, self.slope)
        out = self._grid(out, x.shape)
        return out.squeeze(0) if squeeze else out


class ChannelLinear(nn.Module):
    """Linear map on the channel axis, shared over nodes and slots."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.lin = nn.Linear(c_in, c_out)

    def forward(self, x):
        return self.lin(x.movedim(1, -1)).movedim(-1, 1)


class ChannelNorm(nn.Module):
    """LayerNorm over channels for every (node, slot)."""

    def __init__(self, channels: int):
        super().__init__()
        self.ln = nn.LayerNorm(channels)

    def forward(self, x):
        return self.ln(x.movedim(1, -1)).movedim(-1, 1)


class StartBlock(nn.Module):
    def __init__(self, n_nodes: int, n_slots: int, c_in: int = 3, c_out: int = 16, n_head: int = N_HEAD):
        super().__init__()
        self.c_in = c_in
        self.temporal = GATLayer("temporal", c_in, n_nodes, n_head)
        self.linear = ChannelLinear(c_in, c_out)
        self.spatial = GATLayer("spatial", c_out, n_slots, n_head)

    def forward(self, x):
        x, squeeze = _batched(x)
        if x.shape[1] != self.c_in:
            raise ValueError(f"start block expects {self.c_in} channels, got {x.shape[1]}")
        y = self.spatial(self.linear(self.temporal(x)))
        return y.squeeze(0) if squeeze else y


class MiddleBlock(nn.Module):
    """Duplicate slots (L -> 2L), GAT path with residual, then halve back to L.

    ``halve="first"`` keeps the first half of the slot axis; ``"mean"`` averages the halves.
    """

    def __init__(self, n_nodes: int, n_slots: int, channels: int = 16, dropout: float = 0.3,
                 halve: str = "first", n_head: int = N_HEAD):
        super().__init__()
        if halve not in ("first", "mean"):
            raise ValueError(f"halve must be 'first' or 'mean', got {halve!r}")
        self.channels = channels
        self.halve = halve
        self.temporal = GATLayer("temporal", channels, n_nodes, n_head)
        self.linear = ChannelLinear(channels, channels)
        self.spatial = GATLayer("spatial", channels, 2 * n_slots, n_head)
        self.norm = ChannelNorm(channels)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        x, squeeze = _batched(x)
        if x.shape[1] != self.channels:
            raise ValueError(f"middle block expects {self.channels} channels, got {x.shape[1]}")
        L = x.shape[-1]
        x2 = torch.cat([x, x], dim=-1)
        y = self.spatial(self.linear(self.temporal(x2)))
        y = self.drop(torch.tanh(self.norm(y))) + x2
        y = y[..., :L] if self.halve == "first" else 0.5 * (y[..., :L] + y[..., L:])
        return y.squeeze(0) if squeeze else y


class EndBlock(nn.Module):
    def __init__(self, n_nodes: int, n_slots: int, c_in: int = 16, c_out: int = 3, dropout: float = 0.3,
                 n_head: int = N_HEAD):
        super().__init__()
        self.c_in = c_in
        self.temporal = GATLayer("temporal", c_in, n_nodes, n_head)
        self.linear = ChannelLinear(c_in, c_out)
        self.spatial = GATLayer("spatial", c_out, n_slots, n_head)
        self.norm = ChannelNorm(c_out)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        x, squeeze = _batched(x)
        if x.shape[1] != self.c_in:
            raise ValueError(f"end block expects {self.c_in} channels, got {x.shape[1]}")
        y = self.drop(torch.tanh(self.norm(self.spatial(self.linear(self.temporal(x))))))
        return y.squeeze(0) if squeeze else y


class GATEncoder(nn.Module):
    """start -> ``n_middle`` x middle -> end, mapping [3, N, L] to [3, N, L].

    The motion encoder uses one middle block over j nodes; the gaze-motion fusion
    network uses four over j + 1 nodes.
    """

    def __init__(self, n_nodes: int, n_slots: int, n_middle: int = 1, hidden: int = 16, dropout: float = 0.3,
                 halve: str = "first", n_head: int = N_HEAD):
        super().__init__()
        self.n_nodes = n_nodes
        self.n_slots = n_slots
        self.blocks = nn.Sequential(
            StartBlock(n_nodes, n_slots, 3, hidden, n_head),
            *[MiddleBlock(n_nodes, n_slots, hidden, dropout, halve, n_head) for _ in range(n_middle)],
            EndBlock(n_nodes, n_slots, hidden, 3, dropout, n_head),
        )

    def forward(self, x):
        return self.blocks(x)


def motion_encoder(n_joints: int, n_slots: int, **kw) -> GATEncoder:
    return GATEncoder(n_joints, n_slots, n_middle=1, **kw)


def fusion_network(n_nodes: int, n_slots: int, **kw) -> GATEncoder:
    return GATEncoder(n_nodes, n_slots, n_middle=4, **kw)


def fuse_inputs(f_gaze: torch.Tensor, f_motion: torch.Tensor) -> torch.Tensor:
    """Append the gaze feature as a virtual joint: [.., 3, 1, L] + [.., 3, j, L] -> [.., 3, j+1, L]."""
    if f_gaze.shape[-1] != f_motion.shape[-1]:
        raise ValueError(f"slot count mismatch: gaze {f_gaze.shape[-1]} vs motion {f_motion.shape[-1]}")
    return torch.cat([f_motion, f_gaze], dim=-2)
