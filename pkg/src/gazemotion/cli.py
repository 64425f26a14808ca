"""Command-line entry point: synth, convert, train, sample, eval, render.

Exit codes: 0 success, 1 validation error, 2 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import torch

from .config import load_config
from .data import (FormatError, InvariantError, MotionSample, convert_csv, make_windows, preset_skeleton, read_gmds,
                   write_gmds)
from .diffusion import (NumericError, SamplerConfig, cosine_schedule, gmdp_name, list_gmdp, read_gmdp,
                        sample_completion, write_gmdp)
from .evaluation import format_table, report, score_windows, zero_velocity_baseline
from .model import GazeMotionDiffusion, ModelConfig
from .render import RenderError, render_stick_figure
from .synth import WalkerConfig, synth_walker
from .training import (CheckpointError, TrainConfig, checkpoint_skeleton, load_checkpoint, lr_at,
                       save_checkpoint, stack_windows, train)

log = logging.getLogger("gazemotion")

VALIDATION_ERRORS = (ValueError, FormatError, InvariantError, CheckpointError, RenderError, FileNotFoundError,
                     KeyError)


class UsageError(ValueError):
    pass


def deterministic_mode() -> bool:
    return os.environ.get("GMD_DETERMINISTIC", "") == "1"


def _setup_determinism():
    if deterministic_mode():
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def load_dataset(paths, subjects=None) -> list[MotionSample]:
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(p.glob("*.gmds")))
        elif p.exists():
            files.append(p)
        else:
            raise FileNotFoundError(f"no such file or directory: {p}")
    if not files:
        raise UsageError(f"no .gmds files found in {', '.join(map(str, paths))}")
    samples = [read_gmds(f) for f in files]
    if subjects:
        samples = [s for s in samples if s.subject_id in set(subjects)]
        if not samples:
            raise UsageError(f"no sequences for subjects {subjects}")
    return samples


def _windows(samples, H, F, stride):
    return [w for s in samples for w in make_windows(s, H, F, stride)]


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args, cfg) -> int:
    sk = preset_skeleton(cfg["skeleton"], cfg["fps"])
    sc = cfg["synth"]
    walker = WalkerConfig(gaze_noise_deg=sc["gaze_noise_deg"], lead_s=sc["lead_s"])
    samples = synth_walker(cfg["seed"], sc["n_sequences"], sc["duration_s"], sk, walker)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_gmds(s, out / f"{s.sequence_id}.gmds")
    print(f"wrote {len(samples)} sequences to {out}")
    return 0


def cmd_convert(args, cfg) -> int:
    sk = preset_skeleton(cfg["skeleton"], cfg["fps"])
    sample = convert_csv(args.csv, sk, subject_id=args.subject or "", sequence_id=args.sequence, scale=args.scale)
    out = Path(args.output) if args.output else Path(cfg["out"]) / f"{sample.sequence_id}.gmds"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_gmds(sample, out)
    print(f"wrote {out} ({sample.num_frames} frames)")
    return 0


def build_model(cfg, skeleton) -> GazeMotionDiffusion:
    return GazeMotionDiffusion(ModelConfig.for_skeleton(
        skeleton, H=cfg["H"], F=cfg["F"], L=cfg["L"], T_diff=cfg["T_diff"], variant=cfg["variant"], **cfg["model"]))


def cmd_train(args, cfg) -> int:
    samples = load_dataset(args.data, cfg["train_subjects"])
    skeleton = samples[0].skeleton
    if skeleton.joint_count != preset_skeleton(cfg["skeleton"]).joint_count:
        raise UsageError(f"data has {skeleton.joint_count} joints but config skeleton is {cfg['skeleton']!r}")
    skeleton = preset_skeleton(cfg["skeleton"], cfg["fps"])
    windows = _windows(samples, cfg["H"], cfg["F"], cfg["train"]["stride"])
    if not windows:
        raise UsageError("no training windows; sequences shorter than H + F")
    tc = {k: v for k, v in cfg["train"].items() if k != "stride"}
    config = TrainConfig(seed=cfg["seed"], variant=cfg["variant"], **tc)
    torch.manual_seed(cfg["seed"])
    model = build_model(cfg, skeleton)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    data = stack_windows(windows)
    schedule = cosine_schedule(cfg["T_diff"])
    with open(out / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "lr"])
        for ck in train(model, config, data, skeleton, schedule):
            writer.writerow([ck.epoch, f"{ck.sidecar['loss_history'][-1]:.6f}", f"{lr_at(config, ck.epoch):.6g}"])
            fh.flush()
            if args.save_every and (ck.epoch + 1) % args.save_every == 0:
                save_checkpoint(ck, out / f"epoch_{ck.epoch:04d}")
            save_checkpoint(ck, out / "last")
    print(f"trained {len(windows)} windows; checkpoint at {out / 'last.pt'}")
    return 0


def cmd_sample(args, cfg) -> int:
    samples = load_dataset(args.data, cfg["test_subjects"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    sc = SamplerConfig(seed=cfg["seed"], **cfg["sampler"])
    if args.baseline == "zero_velocity":
        windows = _windows(samples, cfg["H"], cfg["F"], cfg["eval"]["stride"])
        for w in windows:
            write_gmdp(zero_velocity_baseline(w), out / gmdp_name(w.observed.sequence_id, w.start),
                       sequence_id=w.observed.sequence_id, start=w.start, H=w.H, method="zero_velocity")
        print(f"wrote {len(windows)} baseline prediction files to {out}")
        return 0
    if not args.checkpoint:
        raise UsageError("sample needs --checkpoint (or --baseline zero_velocity)")
    model, ck = load_checkpoint(args.checkpoint)
    mc = model.config
    if checkpoint_skeleton(ck).joint_count != samples[0].skeleton.joint_count:
        raise UsageError("checkpoint skeleton does not match the data")
    windows = _windows(samples, mc.H, mc.F, cfg["eval"]["stride"])
    if not windows:
        raise UsageError("no windows; sequences shorter than H + F")
    schedule = cosine_schedule(mc.T_diff)
    chunk = max(1, args.chunk)
    for i in range(0, len(windows), chunk):
        part = windows[i:i + chunk]
        data = stack_windows(part)
        preds = sample_completion(model, schedule, data["obs_poses"], data["obs_gaze"], sc,
                                  chain_offset=i * sc.num_samples).numpy()
        for w, p in zip(part, preds):
            write_gmdp(p, out / gmdp_name(w.observed.sequence_id, w.start), sequence_id=w.observed.sequence_id,
                       start=w.start, H=w.H, method=mc.variant, seed=sc.seed)
    print(f"wrote {len(windows)} prediction files to {out}")
    return 0


def _match_windows(pred_files, samples):
    by_id = {s.sequence_id: s for s in samples}
    preds, windows = [], []
    for f in pred_files:
        p, header = read_gmdp(f)
        seq = by_id.get(header.get("sequence_id"))
        if seq is None:
            raise UsageError(f"{f}: sequence {header.get('sequence_id')!r} not in data")
        H, F, start = int(header["H"]), int(header["F"]), int(header["start"])
        w = make_windows(seq.slice(start, start + H + F), H, F, 1)
        if len(w) != 1:
            raise UsageError(f"{f}: window [{start}, {start + H + F}) outside sequence")
        preds.append(p)
        windows.append(w[0])
    return preds, windows


def cmd_eval(args, cfg) -> int:
    samples = load_dataset(args.data, cfg["test_subjects"])
    files = list_gmdp(args.pred)
    if not files:
        raise UsageError(f"no .gmdp files in {args.pred}")
    preds, windows = _match_windows(files, samples)
    ec = cfg["eval"]
    scores = score_windows(preds, windows, ec["mm_threshold"], ec["mm_mode"], ec["align_root"])
    K = min(len(p) for p in preds)
    rep = report(scores, K, cfg, label=args.label or Path(args.pred).name)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    with open(out / "per_window.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "ade", "fde", "mmade", "mmfde"])
        for f, a, b, c, d in zip(files, scores.ade, scores.fde, scores.mmade, scores.mmfde):
            writer.writerow([f.name, f"{a:.6f}", f"{b:.6f}", f"{c:.6f}", f"{d:.6f}"])
    table = format_table([rep])
    (out / "metrics.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_render(args, cfg) -> int:
    out = Path(args.output) if args.output else Path(cfg["out"]) / "figure.svg"
    if args.gmds:
        sample = read_gmds(args.gmds)
        sk = sample.skeleton if sample.skeleton.bones else preset_skeleton(cfg["skeleton"], cfg["fps"])
        poses = sample.poses[args.start:args.start + args.frames] if args.frames else sample.poses[args.start:]
        render_stick_figure(poses, sk, out, plane=args.plane, frames_per_row=args.columns)
    elif args.pred:
        preds, header = read_gmdp(args.pred)
        observed = gt = None
        sk = preset_skeleton(cfg["skeleton"], cfg["fps"])
        if args.data:
            _, windows = _match_windows([Path(args.pred)], load_dataset(args.data))
            w = windows[0]
            observed, gt = w.observed.poses, w.future_gt
            sk = w.observed.skeleton if w.observed.skeleton.bones else sk
        render_stick_figure(preds, sk, out, observed=observed, gt=gt, plane=args.plane,
                            frames_per_row=args.columns, title=f"{header.get('sequence_id', '')} @ {header.get('start', '')}")
    else:
        raise UsageError("render needs --gmds FILE or --pred FILE")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--skeleton", choices=["mogaze", "gimo", "stick8"])
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gazemotion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic walker sequences")
    p.add_argument("--n", type=int, dest="n_sequences")
    p.add_argument("--duration", type=float, dest="duration_s")
    p.add_argument("--gaze-noise-deg", type=float)

    p = sub.add_parser("convert", parents=[common], help="convert a CSV export to GMDS")
    p.add_argument("--csv", required=True)
    p.add_argument("--output", help="output .gmds path")
    p.add_argument("--subject")
    p.add_argument("--sequence")
    p.add_argument("--scale", type=float, default=1.0, help="multiply pose coordinates (e.g. 0.001 for mm)")

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--variant", choices=["full", "no_gaze", "head_direction"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--save-every", type=int, default=0)

    p = sub.add_parser("sample", parents=[common], help="sample predictions for every test window")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=["zero_velocity"])
    p.add_argument("--num-samples", type=int)
    p.add_argument("--guidance", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--ddim-steps", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--chunk", type=int, default=64, help="windows per sampling batch")

    p = sub.add_parser("eval", parents=[common], help="score prediction files against ground truth")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--pred", required=True, help="directory of .gmdp files")
    p.add_argument("--label")
    p.add_argument("--mm-threshold", type=float)

    p = sub.add_parser("render", parents=[common], help="draw stick figures to SVG")
    p.add_argument("--gmds")
    p.add_argument("--pred")
    p.add_argument("--data", nargs="+")
    p.add_argument("--output")
    p.add_argument("--plane", choices=["xz", "yz", "xy"], default="xz")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--frames", type=int, default=0)
    p.add_argument("--columns", type=int, default=8)
    return parser


def overrides_from_args(args) -> dict:
    g = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "seed": g("seed"), "out": g("out"), "skeleton": g("skeleton"), "variant": g("variant"),
        "train": {"epochs": g("epochs"), "batch_size": g("batch_size"), "lr": g("lr"), "max_steps": g("max_steps")},
        "sampler": {"num_samples": g("num_samples"), "guidance": g("guidance"), "eta": g("eta"),
                    "ddim_steps": g("ddim_steps")},
        "eval": {"stride": g("stride"), "mm_threshold": g("mm_threshold")},
        "synth": {"n_sequences": g("n_sequences"), "duration_s": g("duration_s"),
                  "gaze_noise_deg": g("gaze_noise_deg")},
    }


COMMANDS = {"synth": cmd_synth, "convert": cmd_convert, "train": cmd_train, "sample": cmd_sample,
            "eval": cmd_eval, "render": cmd_render}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, overrides_from_args(args))
        _setup_determinism()
        return COMMANDS[args.command](args, cfg)
    except (NumericError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
