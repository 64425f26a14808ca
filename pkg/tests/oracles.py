"""Independent reference implementations used by the tests."""

import numpy as np
import torch


def fd_gradient_error(module: torch.nn.Module, loss_fn, eps: float = 1e-6, max_params: int | None = None,
                      seed: int = 0) -> float:
    """Relative error between autodiff and central finite differences of ``loss_fn()``.

    ``module`` must be float64. Every parameter element is perturbed, or a random
    subset of ``max_params`` elements when given.
    """
    params = [p for p in module.parameters() if p.requires_grad]
    module.zero_grad()
    loss_fn().backward()
    auto = torch.cat([p.grad.reshape(-1) for p in params]).clone()
    flat = [(pi, i) for pi, p in enumerate(params) for i in range(p.numel())]
    if max_params is not None and len(flat) > max_params:
        pick = np.random.default_rng(seed).choice(len(flat), max_params, replace=False)
        flat = [flat[k] for k in sorted(pick)]
    offsets = np.cumsum([0] + [p.numel() for p in params])
    num, ref = [], []
    with torch.no_grad():
        for pi, i in flat:
            view = params[pi].view(-1)
            old = view[i].item()
            view[i] = old + eps
            up = loss_fn().item()
            view[i] = old - eps
            down = loss_fn().item()
            view[i] = old
            num.append((up - down) / (2 * eps))
            ref.append(auto[offsets[pi] + i].item())
    num, ref = np.array(num), np.array(ref)
    return float(np.linalg.norm(num - ref) / max(np.linalg.norm(num), np.linalg.norm(ref), 1e-12))


def leaky(x, slope=0.2):
    return np.where(x >= 0, x, slope * x)


def gat_reference(nodes: np.ndarray, a: np.ndarray, slope: float = 0.2):
    """Brute-force multi-head GAT on node features [n, f] with attention vectors a [heads, 2f].

    Returns (output [n, f], attention [heads, n, n]).
    """
    n, f = nodes.shape
    heads = a.shape[0]
    attn = np.zeros((heads, n, n))
    for h in range(heads):
        for i in range(n):
            scores = np.array([leaky(a[h] @ np.concatenate([nodes[i], nodes[k]]), slope) for k in range(n)])
            w = np.exp(scores - scores.max())
            attn[h, i] = w / w.sum()
    out = np.zeros_like(nodes)
    for i in range(n):
        acc = np.zeros(f)
        for h in range(heads):
            for k in range(n):
                acc += attn[h, i, k] * nodes[k]
        out[i] = leaky(acc / heads, slope)
    return out, attn
