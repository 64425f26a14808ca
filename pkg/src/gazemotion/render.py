"""Deterministic SVG stick-figure strips for observed, ground-truth and predicted motion."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import Skeleton

PLANES = {"xz": (0, 2), "yz": (1, 2), "xy": (0, 1)}
OBSERVED = "#9a9a9a"
GROUND_TRUTH = "#111111"
BEST = "#1a9e3a"
PALETTE = ("#1f77b4", "#ff7f0e", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#17becf", "#bcbd22", "#7f7f7f", "#aec7e8")


class RenderError(ValueError):
    pass


def _f(v: float) -> str:
    return f"{v:.2f}"


def _frame_indices(n: int, count: int) -> list[int]:
    if n <= count:
        return list(range(n))
    return sorted(set(np.linspace(0, n - 1, count).round().astype(int).tolist()))


class _Canvas:
    def __init__(self, width: float, height: float):
        self.width, self.height = width, height
        self.items: list[str] = []

    def line(self, x1, y1, x2, y2, color, width=1.5):
        self.items.append(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                          f'stroke="{color}" stroke-width="{width}" stroke-linecap="round"/>')

    def circle(self, x, y, r, color):
        self.items.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(r)}" fill="{color}"/>')

    def rect(self, x, y, w, h, color, width=2.0):
        self.items.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
                          f'fill="none" stroke="{color}" stroke-width="{width}"/>')

    def text(self, x, y, s, color="#000000", size=12):
        s = s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        self.items.append(f'<text x="{_f(x)}" y="{_f(y)}" font-family="sans-serif" font-size="{size}" '
                          f'fill="{color}">{s}</text>')

    def svg(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(self.width)}" height="{_f(self.height)}" '
                f'viewBox="0 0 {_f(self.width)} {_f(self.height)}">')
        return "\n".join([head, '<rect width="100%" height="100%" fill="#ffffff"/>', *self.items, "</svg>"]) + "\n"


def _draw_pose(canvas, pose2d, bones, cx, base_y, scale, color):
    for a, b in bones:
        canvas.line(cx + scale * pose2d[a, 0], base_y - scale * pose2d[a, 1],
                    cx + scale * pose2d[b, 0], base_y - scale * pose2d[b, 1], color)
    for p in pose2d:
        canvas.circle(cx + scale * p[0], base_y - scale * p[1], 1.6, color)


def render_rows(rows, skeleton: Skeleton, plane: str = "xz", frames_per_row: int = 8, scale: float = 60.0,
                cell: float = 70.0, boxed: int | None = None, title: str = "") -> str:
    """Render ``rows`` of (label, poses [T, j, 3], per-frame colors) into an SVG string.

    Each displayed pose is centred on its own root so the strip reads left to right
    as time; vertical placement keeps the true height above the floor.
    """
    if not skeleton.bones:
        raise RenderError("skeleton has no bone graph; cannot draw stick figures")
    if plane not in PLANES:
        raise RenderError(f"plane must be one of {sorted(PLANES)}")
    bones = skeleton.bone_indices()
    ax_h, ax_v = PLANES[plane]
    r = skeleton.root_index
    all_poses = np.concatenate([np.asarray(p, dtype=np.float64).reshape(-1, skeleton.joint_count, 3)
                                for _, p, _ in rows])
    if plane == "xy":
        height_m = float(np.ptp(all_poses[..., ax_v] - all_poses[:, r:r + 1, ax_v]))
    else:
        height_m = float(all_poses[..., ax_v].max())
    height_m = max(height_m, 1e-6)
    row_h = scale * height_m + 30.0
    label_w = 110.0
    n_cols = max(min(frames_per_row, len(p)) for _, p, _ in rows)
    canvas = _Canvas(label_w + cell * n_cols + 20.0, 40.0 + row_h * len(rows) + 40.0)
    if title:
        canvas.text(10, 20, title, size=14)
    for ri, (label, poses, colors) in enumerate(rows):
        poses = np.asarray(poses, dtype=np.float64)
        top = 40.0 + ri * row_h
        base_y = top + row_h - 15.0
        if plane == "xy":
            base_y = top + row_h / 2
        canvas.text(10, top + row_h / 2, label, colors[-1] if colors else "#000000")
        for ci, fi in enumerate(_frame_indices(len(poses), frames_per_row)):
            pose = poses[fi]
            p2 = np.stack([pose[:, ax_h] - pose[r, ax_h], pose[:, ax_v]], axis=1)
            if plane == "xy":
                p2[:, 1] -= pose[r, ax_v]
            _draw_pose(canvas, p2, bones, label_w + cell * (ci + 0.5), base_y, scale, colors[fi])
        if boxed is not None and ri == boxed:
            canvas.rect(label_w - 6, top + 2, cell * n_cols + 12, row_h - 6, BEST, 2.5)
    legend_y = canvas.height - 14
    for i, (name, color) in enumerate((("observed", OBSERVED), ("ground truth", GROUND_TRUTH),
                                       ("prediction", PALETTE[0]), ("best of K", BEST))):
        canvas.circle(14 + 130 * i, legend_y - 4, 4, color)
        canvas.text(22 + 130 * i, legend_y, name, size=11)
    return canvas.svg()


def render_stick_figure(motion, skeleton: Skeleton, out_path, observed=None, gt=None, plane: str = "xz",
                        frames_per_row: int = 8, best: int | None = None, title: str = "") -> Path:
    """Write an SVG of a pose sequence [T, j, 3] or a prediction fan [K, F, j, 3].

    For a fan, the first row shows observation + ground truth (when ``gt`` is given)
    and each following row observation + one sample; the best sample (lowest average
    displacement to ``gt``, or ``best``) is drawn in green and boxed.
    """
    motion = np.asarray(motion, dtype=np.float64)
    obs = None if observed is None else np.asarray(observed, dtype=np.float64)
    H = 0 if obs is None else len(obs)
    rows = []
    boxed = None
    if motion.ndim == 2:
        motion = motion[None]
    if motion.ndim == 3:
        seq = motion if obs is None else np.concatenate([obs, motion])
        rows.append(("sequence", seq, [OBSERVED] * H + [GROUND_TRUTH] * len(motion)))
    elif motion.ndim == 4:
        if gt is not None:
            gt = np.asarray(gt, dtype=np.float64)
            seq = gt if obs is None else np.concatenate([obs, gt])
            rows.append(("ground truth", seq, [OBSERVED] * H + [GROUND_TRUTH] * len(gt)))
            if best is None:
                d = np.sqrt(((motion - gt[None]) ** 2).sum(-1).sum(-1)).mean(-1)
                best = int(np.argmin(d))
        for k, pred in enumerate(motion):
            seq = pred if obs is None else np.concatenate([obs, pred])
            color = BEST if k == best else PALETTE[k % len(PALETTE)]
            rows.append((f"sample {k}", seq, [OBSERVED] * H + [color] * len(pred)))
        if best is not None:
            boxed = best + (1 if gt is not None else 0)
    else:
        raise RenderError(f"expected [T, j, 3] or [K, F, j, 3], got shape {motion.shape}")
    svg = render_rows(rows, skeleton, plane, frames_per_row, boxed=boxed, title=title)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(svg)
    return out_path
