import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import random_sample
from gazemotion.data import MotionSample, Skeleton, make_windows
from gazemotion.evaluation import (MetricsReport, ade, apd, build_mm_groups, config_hash, fde, format_table, mmade,
                                   mmfde, report, score_windows, wilcoxon_signed_rank, zero_velocity_baseline)


# -- brute-force references (plain loops, no vectorisation) -------------------

def bf_dist(a, b):
    return np.sqrt(sum((a[j][c] - b[j][c]) ** 2 for j in range(len(a)) for c in range(3)))


def bf_ade(preds, gt):
    return min(sum(bf_dist(p[f], gt[f]) for f in range(len(gt))) / len(gt) for p in preds)


def bf_fde(preds, gt):
    return min(bf_dist(p[-1], gt[-1]) for p in preds)


def bf_mm(preds_list, groups, futures, final):
    vals = []
    for preds, group in zip(preds_list, groups):
        per = [bf_fde(preds, futures[g]) if final else bf_ade(preds, futures[g]) for g in group]
        vals.append(sum(per) / len(per))
    return sum(vals) / len(vals)


def bf_apd(preds):
    K = len(preds)
    total = 0.0
    for a, b in itertools.combinations(range(K), 2):
        total += np.sqrt(sum((x - y) ** 2 for x, y in zip(preds[a].ravel(), preds[b].ravel())))
    return 2 * total / (K * (K - 1))


instances = st.tuples(st.integers(1, 5), st.integers(1, 6), st.integers(1, 4), st.integers(0, 10 ** 6))


@settings(max_examples=40, deadline=None)
@given(instances)
def test_metrics_match_brute_force(shape):
    K, F, j, seed = shape
    rng = np.random.default_rng(seed)
    preds, gt = rng.normal(size=(K, F, j, 3)), rng.normal(size=(F, j, 3))
    assert abs(ade(preds, gt) - bf_ade(preds, gt)) < 1e-6
    assert abs(fde(preds, gt) - bf_fde(preds, gt)) < 1e-6
    if K >= 2:
        assert abs(apd(preds) - bf_apd(preds)) < 1e-6


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 5), K=st.integers(1, 5), F=st.integers(1, 6), j=st.integers(1, 4), seed=st.integers(0, 10 ** 6))
def test_mm_metrics_match_brute_force(n, K, F, j, seed):
    rng = np.random.default_rng(seed)
    preds_list = [rng.normal(size=(K, F, j, 3)) for _ in range(n)]
    futures = rng.normal(size=(n, F, j, 3))
    groups = [np.array(sorted({i} | set(rng.choice(n, rng.integers(0, n + 1), replace=True).tolist())))
              for i in range(n)]
    assert abs(mmade(preds_list, groups, futures) - bf_mm(preds_list, groups, futures, False)) < 1e-6
    assert abs(mmfde(preds_list, groups, futures) - bf_mm(preds_list, groups, futures, True)) < 1e-6


def test_degenerate_identities():
    rng = np.random.default_rng(0)
    gt = rng.normal(size=(6, 4, 3))
    assert ade(gt[None], gt) == 0 and fde(gt[None], gt) == 0
    offset = rng.normal(size=(4, 3))
    r = np.linalg.norm(offset)
    assert ade((gt + offset)[None], gt) == pytest.approx(r, abs=1e-12)
    assert fde((gt + offset)[None], gt) == pytest.approx(r, abs=1e-12)
    final_only = gt.copy()
    final_only[-1] += offset
    assert fde(final_only[None], gt) == pytest.approx(r, abs=1e-12)
    same = np.repeat(gt[None], 3, 0)
    assert apd(same) == 0
    assert apd(np.stack([gt, gt + offset])) == pytest.approx(np.sqrt(6) * r, abs=1e-12)
    pair_offset = np.full(gt.shape, 1.0) / np.sqrt(gt.size)
    assert apd(np.stack([gt, gt + pair_offset])) == pytest.approx(1.0, abs=1e-12)


def test_min_invariance_and_zero_iff():
    rng = np.random.default_rng(1)
    preds, gt = rng.normal(size=(4, 5, 3, 3)), rng.normal(size=(5, 3, 3))
    best = np.argmin([ade(p[None], gt) for p in preds])
    assert ade(np.concatenate([preds, preds[best:best + 1]]), gt) == ade(preds, gt)
    assert fde(np.concatenate([preds, preds[:1]]), gt) == fde(preds, gt)
    assert ade(preds, gt) > 0
    assert ade(np.concatenate([preds, gt[None]]), gt) == 0


def test_metric_errors():
    with pytest.raises(ValueError):
        ade(np.zeros((2, 3, 4, 3)), np.zeros((3, 5, 3)))
    with pytest.raises(ValueError):
        apd(np.zeros((1, 3, 4, 3)))


def _windows_from_last_poses(last_poses, F=3):
    sk = Skeleton(tuple(f"j{i}" for i in range(last_poses.shape[1])))
    out = []
    for i, p in enumerate(last_poses):
        poses = np.concatenate([np.repeat(p[None], 2, 0), np.repeat(p[None] + i, F, 0)])
        s = MotionSample(sk, poses, np.tile([1.0, 0, 0], (len(poses), 1)), sequence_id=str(i))
        out.extend(make_windows(s, 2, F, 1))
    return out


def test_mm_groups():
    base = np.zeros((2, 3))
    lasts = np.stack([base, base, base + 0.1, base + 5.0])
    ws = _windows_from_last_poses(lasts)
    groups = build_mm_groups(ws, 0.4, align_root=False)
    assert [g.tolist() for g in groups] == [[0, 1, 2], [0, 1, 2], [0, 1, 2], [3]]
    groups0 = build_mm_groups(ws, 0.0, align_root=False)
    assert [g.tolist() for g in groups0] == [[0, 1], [0, 1], [2], [3]]
    assert all(i in g for i, g in enumerate(build_mm_groups(ws, 0.4)))
    with pytest.raises(ValueError):
        build_mm_groups(ws, mode="other")


def test_mm_reduces_to_single_ground_truth():
    rng = np.random.default_rng(3)
    preds_list = [rng.normal(size=(3, 4, 2, 3)) for _ in range(5)]
    futures = rng.normal(size=(5, 4, 2, 3))
    groups = [np.array([i]) for i in range(5)]
    assert mmade(preds_list, groups, futures) == pytest.approx(np.mean([ade(p, f) for p, f in zip(preds_list, futures)]))
    assert mmfde(preds_list, groups, futures) == pytest.approx(np.mean([fde(p, f) for p, f in zip(preds_list, futures)]))


def test_mm_lower_bound():
    rng = np.random.default_rng(4)
    preds_list = [rng.normal(size=(3, 4, 2, 3)) for _ in range(4)]
    futures = rng.normal(size=(4, 4, 2, 3))
    groups = [np.arange(4)] * 4
    per_member = [min(ade(p, futures[g]) for g in range(4)) for p in preds_list]
    assert mmade(preds_list, groups, futures) >= np.mean(per_member) - 1e-12


def test_zero_velocity_baseline():
    sk = Skeleton(("a", "b"))
    still = np.ones((10, 2, 3))
    s = MotionSample(sk, still, np.tile([0, 0, 1.0], (10, 1)))
    w = make_windows(s, 4, 6)[0]
    zv = zero_velocity_baseline(w)
    assert zv.shape == (1, 6, 2, 3)
    assert ade(zv, w.future_gt) == 0
    v, fps, F = 1.2, 30.0, 60
    t = np.arange(75) / fps
    poses = np.zeros((75, 1, 3))
    poses[:, 0, 0] = v * t
    w = make_windows(MotionSample(Skeleton(("a",)), poses, np.tile([1.0, 0, 0], (75, 1))), 15, F)[0]
    assert fde(zero_velocity_baseline(w), w.future_gt) == pytest.approx(v * F / fps, rel=1e-5)


# -- Wilcoxon ----------------------------------------------------------------

def test_wilcoxon_matches_scipy_normal_approximation():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = rng.integers(6, 60)
        a = np.round(rng.normal(size=n), 1)
        b = np.round(rng.normal(size=n) + rng.normal() * 0.3, 1)
        ours = wilcoxon_signed_rank(a, b)
        ref = stats.wilcoxon(a, b, zero_method="wilcox", correction=False, method="approx").pvalue
        assert ours == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_wilcoxon_constant_shift_closed_form():
    a = np.arange(20.0)
    p = wilcoxon_signed_rank(a, a + 0.5)
    n = 20
    z = (0 - n * (n + 1) / 4) / np.sqrt(n * (n + 1) * (2 * n + 1) / 24 - (n ** 3 - n) / 48)
    assert p == pytest.approx(2 * stats.norm.cdf(z))
    assert p < 0.01


def test_wilcoxon_conventions():
    a = np.arange(10.0)
    with pytest.raises(ValueError, match="zero"):
        wilcoxon_signed_rank(a, a)
    assert wilcoxon_signed_rank(a, a, zero_result=1.0) == 1.0
    with pytest.raises(ValueError, match="6"):
        wilcoxon_signed_rank(a[:5], a[:5] + 1)


def test_wilcoxon_calibration():
    rng = np.random.default_rng(42)
    ps = np.array([wilcoxon_signed_rank(rng.normal(size=40), rng.normal(size=40)) for _ in range(2000)])
    assert abs(np.mean(ps < 0.05) - 0.05) < 0.02
    assert stats.kstest(ps, "uniform").pvalue > 0.001


# -- reports -----------------------------------------------------------------

def test_score_windows_and_report():
    ws = [w for i in range(3) for w in make_windows(random_sample(T=12, j=2, seed=i, sequence=str(i)), 4, 5, 3)]
    rng = np.random.default_rng(0)
    preds = [w.future_gt[None] + rng.normal(scale=0.1, size=(3, 5, 2, 3)) for w in ws]
    sc = score_windows(preds, ws)
    for i, (p, w) in enumerate(zip(preds, ws)):
        assert sc.ade[i] == pytest.approx(ade(p, w.future_gt))
        assert sc.fde[i] == pytest.approx(fde(p, w.future_gt))
    rep = report(sc, 3, {"a": 1}, "m")
    assert rep.n_windows == len(ws) and rep.K == 3 and rep.config_hash == config_hash({"a": 1})
    assert min(rep.ade, rep.fde, rep.mmade, rep.mmfde, rep.apd) >= 0
    table = format_table([rep, MetricsReport(1, 2, 3, 4, None, 1, 1, label="zero_velocity")])
    lines = table.splitlines()
    assert lines[0].split() == ["Method", "ADE", "FDE", "MMADE", "MMFDE", "APD"]
    assert "n/a" in lines[2] and len({len(l) for l in lines}) == 1
    with pytest.raises(ValueError):
        score_windows(preds[:-1], ws)
