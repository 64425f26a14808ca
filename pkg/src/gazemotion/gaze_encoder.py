"""1D convolutional encoder for DCT-coded gaze."""

import torch
from torch import nn


class GazeEncoder(nn.Module):
    """Four same-padded kernel-3 convolutions over DCT slots: 3 -> 32 -> 32 -> 32 -> 3.

    Input and output are [B, 3, 1, L] (or unbatched [3, 1, L]).
    """

    def __init__(self, hidden: int = 32, channels: int = 3):
        super().__init__()
        self.channels = channels
        dims = [channels, hidden, hidden, hidden, channels]
        self.convs = nn.ModuleList(nn.Conv1d(dims[i], dims[i + 1], 3, stride=1, padding=1) for i in range(4))
        self.norms = nn.ModuleList(nn.LayerNorm(hidden) for _ in range(3))

    def forward(self, g):
        squeeze = g.dim() == 3
        if squeeze:
            g = g.unsqueeze(0)
        if g.dim() != 4 or g.shape[1] != self.channels or g.shape[2] != 1:
            raise ValueError(f"gaze encoder expects [B, {self.channels}, 1, L], got {tuple(g.shape)}")
        h = g[:, :, 0, :]
        for conv, norm in zip(self.convs[:3], self.norms):
            h = torch.tanh(norm(conv(h).transpose(1, 2)).transpose(1, 2))
        h = torch.tanh(self.convs[3](h)).unsqueeze(2)
        return h.squeeze(0) if squeeze else h
