import numpy as np
import pytest
import torch

from gazemotion.data import MotionSample, Skeleton, preset_skeleton

torch.set_num_threads(1)

# criterion number -> (passed, detail); filled by test_acceptance, printed at the end of the run
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def unit_rows(rng, n):
    g = rng.normal(size=(n, 3))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def random_sample(T=20, j=4, seed=0, skeleton=None, subject="s", sequence="q"):
    rng = np.random.default_rng(seed)
    sk = skeleton or Skeleton(tuple(f"j{i}" for i in range(j)))
    return MotionSample(sk, rng.normal(size=(T, sk.joint_count, 3)), unit_rows(rng, T), subject, sequence)


@pytest.fixture
def stick8():
    return preset_skeleton("stick8")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
