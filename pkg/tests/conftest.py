import time

import numpy as np
import pytest
import torch

from igcl.config import TrainConfig
from igcl.dataio import SynthSpec, synth_generate

ACCEPTANCE: dict[int, str] = {}

OVERFIT_SPEC = SynthSpec(num_identities=4, images_per_identity=8, clothes_per_identity=2,
                         image_size=(64, 32), seed=7)


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


@pytest.fixture(scope="session")
def synth_splits():
    return synth_generate(OVERFIT_SPEC)


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    synth_generate(OVERFIT_SPEC, root)
    return root


def tiny_config(**kw) -> TrainConfig:
    base = dict(variant="tiny", P=4, K=4, steps=20, seed=0, threads=1)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def overfit_run(synth_splits, tmp_path_factory):
    """The 200-step tiny training run shared by the overfit and localisation checks."""
    from igcl.trainer import run_training

    out = tmp_path_factory.mktemp("overfit")
    t0 = time.perf_counter()
    state = run_training(tiny_config(steps=200), synth_splits["train"], out)
    return state, out, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
