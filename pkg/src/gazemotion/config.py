"""Run configuration: built-in defaults, overlaid by a JSON file, overlaid by CLI flags."""

from __future__ import annotations

import copy
import json
from pathlib import Path

DEFAULTS = {
    "skeleton": "mogaze",
    "fps": 30.0,
    "H": 15,
    "F": 60,
    "L": 20,
    "T_diff": 1500,
    "variant": "full",
    "seed": 0,
    "out": "runs",
    "model": {
        "d_model": 512, "n_heads": 8, "n_blocks": 4, "gat_hidden": 16, "gat_heads": 8,
        "gat_dropout": 0.3, "attn_dropout": 0.2, "mlp_dropout": 0.2, "halve": "first", "coord_scale": 0.25,
    },
    "train": {
        "epochs": 300, "batch_size": 32, "lr": 3e-4, "lr_decay_epochs": [75, 150, 225, 275],
        "lr_factor": 0.9, "p_uncond": 0.1, "grad_clip": None, "max_steps": None, "stride": 1,
    },
    "sampler": {"num_samples": 50, "guidance": 1.0, "eta": 0.0, "ddim_steps": 100, "clip_x0": 10.0},
    "eval": {"stride": 15, "mm_threshold": 0.4, "mm_mode": "last", "align_root": True},
    "synth": {"n_sequences": 20, "duration_s": 20.0, "gaze_noise_deg": 0.0, "lead_s": 1.0},
    "train_subjects": None,
    "test_subjects": None,
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _validate(cfg: dict, ref: dict = DEFAULTS, where: str = "") -> None:
    for key, value in cfg.items():
        if key not in ref:
            raise ValueError(f"unknown config key {where + key!r}")
        if isinstance(ref[key], dict):
            if not isinstance(value, dict):
                raise ValueError(f"config key {where + key!r} must be an object")
            _validate(value, ref[key], f"{where}{key}.")


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults < JSON file at ``path`` < ``overrides`` (flag values that are not None)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(file_cfg, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        _validate(file_cfg)
        cfg = deep_merge(cfg, file_cfg)
    if overrides:
        cfg = deep_merge(cfg, prune_none(overrides))
    return cfg


def prune_none(d: dict) -> dict:
    out = {}
    for key, value in d.items():
        if isinstance(value, dict):
            value = prune_none(value)
            if value:
                out[key] = value
        elif value is not None:
            out[key] = value
    return out
