import json

import pytest
import torch

from gazemotion.data import make_windows
from gazemotion.diffusion import NumericError
from gazemotion.model import GazeMotionDiffusion, ModelConfig
from gazemotion.synth import synth_walker
from gazemotion.training import (CheckpointError, TrainConfig, checkpoint_paths, checkpoint_skeleton, load_checkpoint,
                                 lr_at, resume_epoch, save_checkpoint, stack_windows, steps_per_epoch, train)

KW = {"H": 6, "F": 9, "L": 6, "T_diff": 50, "d_model": 16, "n_heads": 4, "n_blocks": 1}


def setup(skeleton, variant="full", n=10):
    torch.manual_seed(0)
    m = GazeMotionDiffusion(ModelConfig.for_skeleton(skeleton, variant=variant, **KW))
    ws = make_windows(synth_walker(0, 1, 4.0, skeleton)[0], 6, 9, 10)[:n]
    return m, stack_windows(ws)


def test_lr_schedule_examples():
    c = TrainConfig()
    assert lr_at(c, 0) == 3e-4
    assert lr_at(c, 74) == 3e-4
    assert lr_at(c, 75) == pytest.approx(3e-4 * 0.9)
    assert lr_at(c, 150) == pytest.approx(3e-4 * 0.81)
    assert lr_at(c, 300) == pytest.approx(3e-4 * 0.9 ** 4)
    lrs = [lr_at(c, e) for e in range(400)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert len(set(lrs)) == 5
    with pytest.raises(ValueError):
        lr_at(c, -1)


def test_train_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.epochs, c.batch_size, c.lr, c.lr_decay_epochs, c.lr_factor) == (300, 32, 3e-4, (75, 150, 225, 275), 0.9)
    for bad in ({"epochs": 0}, {"batch_size": 0}, {"lr": 0}, {"lr_factor": 1.5}, {"variant": "x"}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_stack_windows(stick8):
    ws = make_windows(synth_walker(0, 1, 2.0, stick8)[0], 5, 7, 10)
    d = stack_windows(ws)
    assert d["obs_poses"].shape == (len(ws), 5, 8, 3) and d["fut_gaze"].shape == (len(ws), 7, 3)
    with pytest.raises(ValueError):
        stack_windows([])


def test_training_is_reproducible(stick8):
    runs = []
    for _ in range(2):
        m, data = setup(stick8)
        cks = list(train(m, TrainConfig(epochs=2, batch_size=4, seed=5), data, stick8))
        runs.append((cks[-1].sidecar["loss_history"], cks[-1].state_dict))
    assert runs[0][0] == runs[1][0]
    assert all(torch.equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1])


def test_train_yields_per_epoch_and_honours_max_steps(stick8):
    m, data = setup(stick8)
    assert steps_per_epoch(10, 4) == 3
    cks = list(train(m, TrainConfig(epochs=5, batch_size=4, max_steps=7), data, stick8))
    assert [c.epoch for c in cks] == [0, 1, 2]
    assert len(cks[-1].sidecar["loss_history"]) == 3
    side = cks[-1].sidecar
    for key in ("format_version", "train_config", "model_config", "skeleton", "H", "F", "L", "T_diff", "schedule",
                "variant", "epoch", "loss_history"):
        assert key in side
    assert side["schedule"] == "cosine"


def test_variant_mismatch_and_nan(stick8):
    m, data = setup(stick8)
    with pytest.raises(ValueError):
        next(train(m, TrainConfig(variant="no_gaze"), data, stick8))
    with torch.no_grad():
        m.predictor.output_proj.bias.fill_(float("nan"))
    with pytest.raises(NumericError, match="non-finite loss"):
        next(train(m, TrainConfig(epochs=1, batch_size=4), data, stick8))


def test_no_gaze_variant_uses_j_nodes(stick8):
    m, data = setup(stick8, "no_gaze")
    ck = next(train(m, TrainConfig(epochs=1, batch_size=4, variant="no_gaze"), data, stick8))
    assert ck.sidecar["variant"] == "no_gaze"
    assert m.predictor.n_nodes == 8


def test_checkpoint_roundtrip(tmp_path, stick8):
    m, data = setup(stick8)
    ck = list(train(m, TrainConfig(epochs=1, batch_size=4), data, stick8))[-1]
    weights, side = save_checkpoint(ck, tmp_path / "ck")
    assert (weights, side) == checkpoint_paths(tmp_path / "ck.pt")
    loaded, ck2 = load_checkpoint(weights)
    assert all(torch.equal(ck.state_dict[k], ck2.state_dict[k]) for k in ck.state_dict)
    assert ck2.sidecar == json.loads(json.dumps(ck.sidecar))
    assert checkpoint_skeleton(ck2) == stick8
    m.load_state_dict(ck.state_dict)
    m.eval()
    y, t = torch.randn(2, 3, 9, 6), torch.tensor([1, 2])
    c = m.condition(data["obs_poses"][:2], data["obs_gaze"][:2])
    assert torch.equal(m(y, t, c), loaded(y, t, loaded.condition(data["obs_poses"][:2], data["obs_gaze"][:2])))


def test_sidecar_alone_rebuilds_model(tmp_path, stick8):
    from gazemotion.training import model_from_sidecar
    m, data = setup(stick8)
    ck = next(train(m, TrainConfig(epochs=1, batch_size=4), data, stick8))
    rebuilt = model_from_sidecar(ck.sidecar)
    assert {k: v.shape for k, v in rebuilt.state_dict().items()} == {k: v.shape for k, v in m.state_dict().items()}


def test_tampered_sidecar_rejected(tmp_path, stick8):
    m, data = setup(stick8)
    ck = next(train(m, TrainConfig(epochs=1, batch_size=4), data, stick8))
    weights, side = save_checkpoint(ck, tmp_path / "ck")
    meta = json.loads(side.read_text())
    meta["joint_count"] = 21
    side.write_text(json.dumps(meta))
    with pytest.raises(CheckpointError):
        load_checkpoint(weights)
    meta["joint_count"] = 8
    meta["model_config"]["joint_count"] = 21
    side.write_text(json.dumps(meta))
    with pytest.raises(CheckpointError):
        load_checkpoint(weights)
    meta = json.loads(json.dumps(ck.sidecar))
    meta["format_version"] = 99
    side.write_text(json.dumps(meta))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(weights)
    side.unlink()
    with pytest.raises(CheckpointError, match="sidecar"):
        load_checkpoint(weights)


def test_resume_continues_lr_schedule(stick8):
    m, data = setup(stick8)
    cfg = TrainConfig(epochs=4, batch_size=4, lr=1e-3, lr_decay_epochs=(2,), lr_factor=0.5)
    opt = torch.optim.Adam(m.parameters(), lr=cfg.lr)
    first = list(train(m, TrainConfig(**{**cfg.__dict__, "epochs": 2}), data, stick8, optimizer=opt))
    assert resume_epoch(first[-1]) == 2
    rest = list(train(m, cfg, data, stick8, start_epoch=2, loss_history=first[-1].sidecar["loss_history"],
                      optimizer=opt))
    assert [c.epoch for c in rest] == [2, 3]
    assert len(rest[-1].sidecar["loss_history"]) == 4
    assert opt.param_groups[0]["lr"] == pytest.approx(5e-4)
