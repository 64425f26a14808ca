"""Truncated orthonormal DCT-II along the time axis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class DctBasis:
    T: int
    L: int
    forward: np.ndarray   # [L, T]
    inverse: np.ndarray   # [T, L]

    def torch(self, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
        return torch.tensor(self.forward, dtype=dtype), torch.tensor(self.inverse, dtype=dtype)


def dct_matrix(T: int) -> np.ndarray:
    """Full orthonormal DCT-II matrix, rows indexed by frequency."""
    l = np.arange(T)[:, None]
    t = np.arange(T)[None, :]
    m = np.sqrt(2.0 / T) * np.cos(np.pi * (2 * t + 1) * l / (2 * T))
    m[0] /= np.sqrt(2.0)
    return m


def build_basis(T: int, L: int) -> DctBasis:
    if not 1 <= L <= T:
        raise ValueError(f"need 1 <= L <= T, got L={L}, T={T}")
    full = dct_matrix(T)
    fwd = full[:L].copy()
    inv = full.T[:, :L].copy()
    fwd.flags.writeable = False
    inv.flags.writeable = False
    return DctBasis(T, L, fwd, inv)


def _apply(mat: np.ndarray, x, n_in: int):
    if x.shape[-1] != n_in:
        raise ValueError(f"trailing axis must have length {n_in}, got {x.shape[-1]}")
    if isinstance(x, torch.Tensor):
        m = torch.tensor(mat, dtype=x.dtype, device=x.device)
        return x @ m.T
    x = np.asarray(x)
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    return (x @ mat.T.astype(dtype)).astype(dtype)


def dct_forward(basis: DctBasis, x):
    """[..., T] -> [..., L]; works on numpy arrays and torch tensors."""
    return _apply(basis.forward, x, basis.T)


def dct_inverse(basis: DctBasis, y):
    """[..., L] -> [..., T]."""
    return _apply(basis.inverse, y, basis.L)


def pad_last_frame(observed, F: int):
    """Repeat the last frame of the trailing time axis ``F`` more times."""
    if observed.shape[-1] < 1:
        raise ValueError("need at least one observed frame")
    if F == 0:
        return observed
    if isinstance(observed, torch.Tensor):
        tail = observed[..., -1:].expand(*observed.shape[:-1], F)
        return torch.cat([observed, tail], dim=-1)
    tail = np.repeat(observed[..., -1:], F, axis=-1)
    return np.concatenate([observed, tail], axis=-1)
