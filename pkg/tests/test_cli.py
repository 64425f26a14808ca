import json

import numpy as np
import pytest

from gazemotion.cli import main
from gazemotion.data import read_gmds
from gazemotion.diffusion import read_gmdp
from gazemotion.evaluation import report, score_windows, zero_velocity_baseline
from gazemotion.data import make_windows

TINY = {
    "skeleton": "stick8", "H": 6, "F": 9, "L": 6, "T_diff": 30,
    "model": {"d_model": 16, "n_heads": 4, "n_blocks": 1},
    "train": {"epochs": 2, "batch_size": 8, "max_steps": 3, "stride": 10},
    "sampler": {"num_samples": 2, "ddim_steps": 4},
    "eval": {"stride": 10},
    "synth": {"n_sequences": 2, "duration_s": 2.0},
}


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.setenv("GMD_DETERMINISTIC", "1")
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "data")]) == 0
    return tmp_path, cfg


@pytest.fixture
def trained(workspace):
    tmp, cfg = workspace
    assert main(["train", "--config", str(cfg), "--data", str(tmp / "data"), "--out", str(tmp / "run")]) == 0
    return tmp, cfg


def test_synth_writes_gmds(workspace):
    tmp, _ = workspace
    files = sorted((tmp / "data").glob("*.gmds"))
    assert len(files) == 2
    assert read_gmds(files[0]).num_frames == 60


def test_train_outputs(trained):
    tmp, _ = trained
    run = tmp / "run"
    assert (run / "last.pt").exists() and (run / "last.json").exists()
    lines = (run / "loss.csv").read_text().splitlines()
    # 10 windows at batch 8 is 2 steps per epoch, so 3 steps end partway through epoch 1
    assert lines[0] == "epoch,loss,lr" and len(lines) == 3
    side = json.loads((run / "last.json").read_text())
    assert side["variant"] == "full" and side["H"] == 6


def test_train_no_gaze_sidecar(workspace):
    tmp, cfg = workspace
    assert main(["train", "--config", str(cfg), "--data", str(tmp / "data"), "--out", str(tmp / "ng"),
                 "--variant", "no_gaze"]) == 0
    assert json.loads((tmp / "ng" / "last.json").read_text())["variant"] == "no_gaze"


def test_sample_is_byte_identical(trained):
    tmp, cfg = trained
    args = ["sample", "--config", str(cfg), "--data", str(tmp / "data"), "--checkpoint", str(tmp / "run" / "last.pt")]
    assert main(args + ["--seed", "7", "--out", str(tmp / "p1")]) == 0
    assert main(args + ["--seed", "7", "--out", str(tmp / "p2")]) == 0
    assert main(args + ["--seed", "8", "--out", str(tmp / "p3")]) == 0
    f1 = sorted((tmp / "p1").glob("*.gmdp"))
    assert f1 and [f.name for f in f1] == [f.name for f in sorted((tmp / "p2").glob("*.gmdp"))]
    assert all(f.read_bytes() == (tmp / "p2" / f.name).read_bytes() for f in f1)
    assert any(f.read_bytes() != (tmp / "p3" / f.name).read_bytes() for f in f1)
    preds, header = read_gmdp(f1[0])
    assert preds.shape == (2, 9, 8, 3)
    assert {"sequence_id", "start", "H"} <= set(header)


def test_eval_reproduces_zero_velocity_numbers(workspace):
    tmp, cfg = workspace
    assert main(["sample", "--config", str(cfg), "--data", str(tmp / "data"), "--baseline", "zero_velocity",
                 "--out", str(tmp / "zv")]) == 0
    assert main(["eval", "--config", str(cfg), "--data", str(tmp / "data"), "--pred", str(tmp / "zv"),
                 "--out", str(tmp / "ev")]) == 0
    metrics = json.loads((tmp / "ev" / "metrics.json").read_text())
    ws = [w for f in sorted((tmp / "data").glob("*.gmds")) for w in make_windows(read_gmds(f), 6, 9, 10)]
    direct = report(score_windows([zero_velocity_baseline(w) for w in ws], ws), 1)
    for key in ("ade", "fde", "mmade", "mmfde"):
        assert metrics[key] == pytest.approx(getattr(direct, key), abs=1e-9)
    assert metrics["n_windows"] == len(ws)
    assert (tmp / "ev" / "metrics.txt").read_text().startswith("Method")


def test_render_outputs(trained):
    tmp, cfg = trained
    main(["sample", "--config", str(cfg), "--data", str(tmp / "data"), "--checkpoint", str(tmp / "run" / "last.pt"),
          "--out", str(tmp / "p")])
    pred = sorted((tmp / "p").glob("*.gmdp"))[0]
    assert main(["render", "--config", str(cfg), "--pred", str(pred), "--data", str(tmp / "data"),
                 "--output", str(tmp / "fan.svg")]) == 0
    assert "ground truth" in (tmp / "fan.svg").read_text()
    gmds = sorted((tmp / "data").glob("*.gmds"))[0]
    assert main(["render", "--config", str(cfg), "--gmds", str(gmds), "--frames", "10",
                 "--output", str(tmp / "seq.svg")]) == 0


def test_convert(tmp_path):
    rows = ["frame," + ",".join(f"c{i}" for i in range(27))]
    rng = np.random.default_rng(0)
    for t in range(5):
        rows.append(",".join(map(str, [t, *rng.normal(size=24), 0, 0, 3])))
    (tmp_path / "x.csv").write_text("\n".join(rows))
    assert main(["convert", "--csv", str(tmp_path / "x.csv"), "--skeleton", "stick8", "--subject", "p1",
                 "--output", str(tmp_path / "x.gmds")]) == 0
    s = read_gmds(tmp_path / "x.gmds")
    assert s.subject_id == "p1" and s.num_frames == 5 and np.allclose(s.gaze, [0, 0, 1])


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": 1}))
    assert main(["synth", "--config", str(bad)]) == 1
    assert "unknown config key" in capsys.readouterr().err
    assert main(["eval", "--data", str(tmp_path / "missing"), "--pred", str(tmp_path)]) == 1
    (tmp_path / "x.csv").write_text("1,2,3\n")
    assert main(["convert", "--csv", str(tmp_path / "x.csv"), "--skeleton", "stick8"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["sample"])
    assert exc.value.code == 2


def test_numeric_failure_exit_code(trained):
    import torch
    tmp, cfg = trained
    blob = torch.load(tmp / "run" / "last.pt", weights_only=True)
    blob["state_dict"]["predictor.output_proj.bias"].fill_(float("nan"))
    torch.save(blob, tmp / "run" / "last.pt")
    assert main(["sample", "--config", str(cfg), "--data", str(tmp / "data"),
                 "--checkpoint", str(tmp / "run" / "last.pt"), "--out", str(tmp / "p")]) == 2


def test_flag_overrides_config(workspace):
    tmp, cfg = workspace
    assert main(["synth", "--config", str(cfg), "--n", "1", "--duration", "1", "--seed", "4",
                 "--out", str(tmp / "d2")]) == 0
    files = list((tmp / "d2").glob("*.gmds"))
    assert len(files) == 1 and read_gmds(files[0]).num_frames == 30
    assert read_gmds(files[0]).subject_id == "synth4"
