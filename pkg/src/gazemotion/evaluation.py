"""Best-of-K displacement metrics, multimodal ground truth, diversity and significance."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from .data import Window

MM_THRESHOLD = 0.4


def frame_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean norm of the flattened [j, 3] difference, over any leading axes."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return np.sqrt((d.reshape(*d.shape[:-2], -1) ** 2).sum(-1))


def _check(preds, gt):
    preds = np.asarray(preds, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if preds.ndim != 4 or preds.shape[1:] != gt.shape or preds.shape[0] < 1:
        raise ValueError(f"preds must be [K, F, j, 3] matching gt {gt.shape}, got {preds.shape}")
    return preds, gt


def ade(preds, gt) -> float:
    preds, gt = _check(preds, gt)
    return float(frame_dist(preds, gt[None]).mean(axis=1).min())


def fde(preds, gt) -> float:
    preds, gt = _check(preds, gt)
    return float(frame_dist(preds[:, -1], gt[None, -1]).min())


def last_observed(windows: list[Window], align_root: bool = True) -> np.ndarray:
    last = np.stack([w.observed.poses[-1] for w in windows]).astype(np.float64)
    if align_root:
        r = windows[0].observed.skeleton.root_index
        last = last - last[:, r:r + 1]
    return last


def aligned_futures(windows: list[Window], align_root: bool = True) -> np.ndarray:
    """Ground-truth futures [N, F, j, 3], translated so each window's last observed root is the origin."""
    fut = np.stack([w.future_gt for w in windows]).astype(np.float64)
    if align_root:
        r = windows[0].observed.skeleton.root_index
        origin = np.stack([w.observed.poses[-1, r] for w in windows]).astype(np.float64)
        fut = fut - origin[:, None, None, :]
    return fut


def build_mm_groups(windows: list[Window], threshold: float = MM_THRESHOLD, mode: str = "last",
                    align_root: bool = True) -> list[np.ndarray]:
    """For each window, indices of windows whose observed pose lies within ``threshold`` meters.

    ``mode="last"`` compares the last observed frame; ``"window"`` the mean per-frame
    distance over the whole observed window.
    """
    if mode == "last":
        obs = last_observed(windows, align_root)
        dist = frame_dist(obs[:, None], obs[None, :])
    elif mode == "window":
        obs = np.stack([w.observed.poses for w in windows]).astype(np.float64)
        if align_root:
            r = windows[0].observed.skeleton.root_index
            obs = obs - obs[:, -1:, r:r + 1]
        dist = frame_dist(obs[:, None], obs[None, :]).mean(-1)
    else:
        raise ValueError(f"mode must be 'last' or 'window', got {mode!r}")
    return [np.flatnonzero(row <= threshold) for row in dist]


def _mm(preds_list, groups, futures, final: bool) -> np.ndarray:
    per_window = np.empty(len(groups))
    for i, (preds, group) in enumerate(zip(preds_list, groups)):
        preds = np.asarray(preds, dtype=np.float64)
        gts = futures[group]
        if final:
            d = frame_dist(preds[None, :, -1], gts[:, None, -1])
        else:
            d = frame_dist(preds[None], gts[:, None]).mean(-1)
        per_window[i] = d.min(axis=1).mean()
    return per_window


def mmade(preds_list, groups, futures) -> float:
    """``preds_list[i]`` [K, F, j, 3] for window i; ``futures`` [N, F, j, 3] in the same frame."""
    return float(_mm(preds_list, groups, np.asarray(futures, dtype=np.float64), final=False).mean())


def mmfde(preds_list, groups, futures) -> float:
    return float(_mm(preds_list, groups, np.asarray(futures, dtype=np.float64), final=True).mean())


def apd(preds) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    K = preds.shape[0]
    if K < 2:
        raise ValueError("APD needs at least two samples")
    flat = preds.reshape(K, -1)
    d = np.sqrt(((flat[:, None] - flat[None]) ** 2).sum(-1))
    return float(d[np.triu_indices(K, 1)].mean())


def zero_velocity_baseline(window: Window) -> np.ndarray:
    last = np.asarray(window.observed.poses[-1], dtype=np.float32)
    return np.broadcast_to(last, (1, window.F, *last.shape)).copy()


def wilcoxon_signed_rank(a, b, zero_result: float | None = None) -> float:
    """Two-sided Wilcoxon signed-rank p-value (normal approximation).

    Zero differences are dropped, tied magnitudes get average ranks and the
    variance is tie-corrected. If every pair is tied the statistic is undefined:
    ``zero_result`` is returned when given, otherwise ValueError is raised.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if d.ndim != 1 or len(d) < 6:
        raise ValueError("need at least 6 paired samples")
    d = d[d != 0]
    n = len(d)
    if n == 0:
        if zero_result is not None:
            return zero_result
        raise ValueError("all paired differences are zero")
    mag = np.abs(d)
    order = np.argsort(mag, kind="mergesort")
    ranks = np.empty(n)
    sorted_mag = mag[order]
    i = 0
    tie_term = 0.0
    while i < n:
        j = i
        while j + 1 < n and sorted_mag[j + 1] == sorted_mag[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        c = j - i + 1
        tie_term += c ** 3 - c
        i = j + 1
    w_plus = ranks[d > 0].sum()
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0
    if var <= 0:
        return 1.0
    z = (w_plus - mean) / math.sqrt(var)
    return float(min(1.0, 2.0 * ndtr(-abs(z))))


@dataclass
class MetricsReport:
    ade: float
    fde: float
    mmade: float
    mmfde: float
    apd: float | None
    n_windows: int
    K: int
    config_hash: str = ""
    label: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:12]


@dataclass
class WindowScores:
    ade: np.ndarray
    fde: np.ndarray
    mmade: np.ndarray
    mmfde: np.ndarray
    apd: np.ndarray | None


def score_windows(preds_list, windows: list[Window], threshold: float = MM_THRESHOLD, mm_mode: str = "last",
                  align_root: bool = True) -> WindowScores:
    """Per-window metrics; ``preds_list[i]`` are world-frame predictions [K, F, j, 3] for window i."""
    if len(preds_list) != len(windows):
        raise ValueError("one prediction set per window required")
    r = windows[0].observed.skeleton.root_index
    aligned = []
    for preds, w in zip(preds_list, windows):
        p = np.asarray(preds, dtype=np.float64)
        if align_root:
            p = p - np.asarray(w.observed.poses[-1, r], dtype=np.float64)
        aligned.append(p)
    futures = aligned_futures(windows, align_root)
    groups = build_mm_groups(windows, threshold, mm_mode, align_root)
    ade_w = np.array([ade(p, f) for p, f in zip(aligned, futures)])
    fde_w = np.array([fde(p, f) for p, f in zip(aligned, futures)])
    K = min(len(p) for p in aligned)
    apd_w = np.array([apd(p) for p in aligned]) if K >= 2 else None
    return WindowScores(ade_w, fde_w, _mm(aligned, groups, futures, False), _mm(aligned, groups, futures, True), apd_w)


def report(scores: WindowScores, K: int, config: dict | None = None, label: str = "") -> MetricsReport:
    return MetricsReport(
        ade=float(scores.ade.mean()), fde=float(scores.fde.mean()),
        mmade=float(scores.mmade.mean()), mmfde=float(scores.mmfde.mean()),
        apd=float(scores.apd.mean()) if scores.apd is not None else None,
        n_windows=len(scores.ade), K=K, config_hash=config_hash(config or {}), label=label,
    )


def format_table(reports: list[MetricsReport]) -> str:
    """Aligned text table: one row per method, columns ADE FDE MMADE MMFDE APD."""
    cols = ("ADE", "FDE", "MMADE", "MMFDE", "APD")
    name_w = max([len("Method")] + [len(r.label or "-") for r in reports])
    lines = [f"{'Method':<{name_w}}  " + "  ".join(f"{c:>7}" for c in cols)]
    for r in reports:
        vals = (r.ade, r.fde, r.mmade, r.mmfde, r.apd)
        cells = ["    n/a" if v is None else f"{v:7.3f}" for v in vals]
        lines.append(f"{(r.label or '-'):<{name_w}}  " + "  ".join(cells))
    return "\n".join(lines)
