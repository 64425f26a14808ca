"""Synthetic pick-and-place style walker whose gaze anticipates the next turn.

Each sequence is a piecewise-linear walk through random waypoints with smoothed
corners and sinusoidal limb swing. Gaze fixates the upcoming waypoint and jumps
to the one after it ``lead_s`` seconds before each turn, so the observed gaze
carries information about where the walker goes next.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .data import InvariantError, MotionSample, Skeleton

# body-frame rest offsets (forward, left, height above ground) and swing group
_REST = {
    # MoGaze
    "base": (0.0, 0.0, 0.95, None), "pelvis": (0.0, 0.0, 1.0, None), "torso": (0.0, 0.0, 1.25, None),
    "neck": (0.0, 0.0, 1.5, None), "head": (0.0, 0.0, 1.68, None),
    "linnerShoulder": (0.0, 0.08, 1.45, None), "lShoulder": (0.0, 0.18, 1.45, None),
    "lElbow": (0.0, 0.2, 1.17, "arm_l_mid"), "lWrist": (0.0, 0.2, 0.92, "arm_l"),
    "rinnerShoulder": (0.0, -0.08, 1.45, None), "rShoulder": (0.0, -0.18, 1.45, None),
    "rElbow": (0.0, -0.2, 1.17, "arm_r_mid"), "rWrist": (0.0, -0.2, 0.92, "arm_r"),
    "lHip": (0.0, 0.1, 0.92, None), "lKnee": (0.0, 0.1, 0.5, "leg_l_mid"),
    "lAnkle": (0.0, 0.1, 0.08, "leg_l"), "lToe": (0.12, 0.1, 0.02, "leg_l"),
    "rHip": (0.0, -0.1, 0.92, None), "rKnee": (0.0, -0.1, 0.5, "leg_r_mid"),
    "rAnkle": (0.0, -0.1, 0.08, "leg_r"), "rToe": (0.12, -0.1, 0.02, "leg_r"),
    # SMPL-X body
    "left_hip": (0.0, 0.09, 0.88, None), "right_hip": (0.0, -0.09, 0.88, None),
    "spine1": (0.0, 0.0, 1.05, None), "spine2": (0.0, 0.0, 1.18, None), "spine3": (0.0, 0.0, 1.3, None),
    "left_knee": (0.0, 0.1, 0.5, "leg_l_mid"), "right_knee": (0.0, -0.1, 0.5, "leg_r_mid"),
    "left_ankle": (0.0, 0.1, 0.08, "leg_l"), "right_ankle": (0.0, -0.1, 0.08, "leg_r"),
    "left_foot": (0.12, 0.1, 0.02, "leg_l"), "right_foot": (0.12, -0.1, 0.02, "leg_r"),
    "left_collar": (0.0, 0.07, 1.43, None), "right_collar": (0.0, -0.07, 1.43, None),
    "left_shoulder": (0.0, 0.18, 1.42, None), "right_shoulder": (0.0, -0.18, 1.42, None),
    "left_elbow": (0.0, 0.2, 1.15, "arm_l_mid"), "right_elbow": (0.0, -0.2, 1.15, "arm_r_mid"),
    "left_wrist": (0.0, 0.2, 0.9, "arm_l"), "right_wrist": (0.0, -0.2, 0.9, "arm_r"),
    "jaw": (0.05, 0.0, 1.6, None),
    # stick figure
    "spine": (0.0, 0.0, 1.25, None),
    "left_hand": (0.0, 0.22, 0.9, "arm_l"), "right_hand": (0.0, -0.22, 0.9, "arm_r"),
}
_SWING = {
    "leg_l": 0.3, "leg_l_mid": 0.15, "leg_r": -0.3, "leg_r_mid": -0.15,
    "arm_l": -0.2, "arm_l_mid": -0.08, "arm_r": 0.2, "arm_r_mid": 0.08,
}
_HEAD_JOINTS = ("head", "jaw")
HEAD_LEAN = 0.06
STRIDE_LEN = 1.4


@dataclass(frozen=True)
class WalkPlan:
    waypoints: np.ndarray     # [n, 2] ground-plane positions
    turn_times: np.ndarray    # [n-2] time (s) at which waypoint k+1 is reached
    speed: float
    target_height: float
    lead_s: float


@dataclass(frozen=True)
class WalkerConfig:
    segment_s: tuple = (1.8, 3.2)
    turn_deg: tuple = (60.0, 150.0)
    speed: tuple = (0.9, 1.3)
    lead_s: float = 1.0
    target_height: float = 0.9
    corner_sigma_s: float = 0.12
    gaze_noise_deg: float = 0.0
    arena: float = 2.0


def plan_walks(seed: int, n_sequences: int, duration_s: float, config: WalkerConfig = WalkerConfig()) -> list[WalkPlan]:
    if n_sequences < 1 or duration_s <= 0:
        raise ValueError("need n_sequences >= 1 and duration_s > 0")
    if config.lead_s < 0.5 or config.lead_s >= config.segment_s[0]:
        raise ValueError("lead_s must be in [0.5, shortest segment)")
    plans = []
    for i in range(n_sequences):
        rng = np.random.default_rng([seed, i])
        speed = rng.uniform(*config.speed)
        pos = rng.uniform(-config.arena, config.arena, size=2)
        heading = rng.uniform(-np.pi, np.pi)
        waypoints = [pos]
        total = 0.0
        # margin covers the final segment so the walk never runs off the polyline
        while total < speed * (duration_s + config.segment_s[1] + 1.0):
            length = speed * rng.uniform(*config.segment_s)
            pos = pos + length * np.array([np.cos(heading), np.sin(heading)])
            waypoints.append(pos)
            total += length
            heading += rng.choice([-1.0, 1.0]) * np.deg2rad(rng.uniform(*config.turn_deg))
        waypoints = np.array(waypoints)
        seg = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
        turn_times = np.cumsum(seg)[:-1] / speed
        plans.append(WalkPlan(waypoints, turn_times, float(speed), config.target_height, config.lead_s))
    return plans


def gaze_target_index(plan: WalkPlan, t: np.ndarray) -> np.ndarray:
    """Index of the waypoint fixated at time ``t``."""
    return 1 + np.searchsorted(plan.turn_times - plan.lead_s, t, side="right")


def render_walk(plan: WalkPlan, skeleton: Skeleton, duration_s: float, config: WalkerConfig = WalkerConfig(),
                seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    missing = [n for n in skeleton.joint_names if n not in _REST]
    if missing:
        raise InvariantError(f"no rest pose for joints {missing}")
    fps = skeleton.fps
    T = int(round(duration_s * fps))
    t = np.arange(T) / fps

    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(plan.waypoints, axis=0), axis=1))])
    s = plan.speed * t
    root = np.stack([np.interp(s, cum, plan.waypoints[:, d]) for d in range(2)], axis=1)
    root = gaussian_filter1d(root, config.corner_sigma_s * fps, axis=0, mode="nearest")
    vel = np.gradient(root, axis=0)
    heading = np.arctan2(vel[:, 1], vel[:, 0])
    fwd = np.stack([np.cos(heading), np.sin(heading), np.zeros(T)], axis=1)
    left = np.stack([-np.sin(heading), np.cos(heading), np.zeros(T)], axis=1)
    up = np.array([0.0, 0.0, 1.0])
    phase = 2 * np.pi * s / STRIDE_LEN

    ground = np.concatenate([root, np.zeros((T, 1))], axis=1)
    neck_pos = ground + _REST["neck"][2] * up
    target_idx = gaze_target_index(plan, t)
    target = np.concatenate([plan.waypoints[target_idx], np.full((T, 1), plan.target_height)], axis=1)
    to_target = target[:, :2] - neck_pos[:, :2]
    lean = to_target / np.maximum(np.linalg.norm(to_target, axis=1, keepdims=True), 1e-9)
    lean = np.concatenate([lean, np.zeros((T, 1))], axis=1)

    poses = np.empty((T, skeleton.joint_count, 3))
    for ji, name in enumerate(skeleton.joint_names):
        f, l, h, group = _REST[name]
        fwd_off = f + _SWING.get(group, 0.0) * np.sin(phase)
        p = ground + fwd_off[:, None] * fwd + l * left + h * up
        if group in ("leg_l", "leg_r"):
            lift = np.maximum(0.0, np.sign(_SWING[group]) * np.cos(phase))
            p = p + 0.05 * lift[:, None] * up
        if name in _HEAD_JOINTS:
            p = p + HEAD_LEAN * lean
        poses[:, ji] = p

    eye = poses[:, skeleton.index(skeleton.head)] if skeleton.head else ground + _REST["head"][2] * up + HEAD_LEAN * lean
    gaze = target - eye
    gaze /= np.linalg.norm(gaze, axis=1, keepdims=True)
    if config.gaze_noise_deg > 0:
        rng = np.random.default_rng([seed, 7919])
        noise = rng.normal(scale=np.tan(np.deg2rad(config.gaze_noise_deg)), size=gaze.shape)
        gaze = gaze + gaussian_filter1d(noise, 0.1 * fps, axis=0, mode="nearest")
        gaze /= np.linalg.norm(gaze, axis=1, keepdims=True)
    return poses.astype(np.float32), gaze.astype(np.float32)


def synth_walker(seed: int, n_sequences: int, duration_s: float, skeleton: Skeleton,
                 config: WalkerConfig = WalkerConfig(), subject_prefix: str = "synth") -> list[MotionSample]:
    """Generate ``n_sequences`` deterministic walks; a pure function of its arguments."""
    if skeleton.joint_count < 5 or skeleton.head is None:
        raise InvariantError("synth_walker needs a skeleton with >= 5 joints and a designated head joint")
    out = []
    for i, plan in enumerate(plan_walks(seed, n_sequences, duration_s, config)):
        poses, gaze = render_walk(plan, skeleton, duration_s, config, seed=seed * 100003 + i)
        out.append(MotionSample(skeleton, poses, gaze, subject_id=f"{subject_prefix}{seed}",
                                sequence_id=f"{subject_prefix}{seed}_{i:04d}"))
    return out
