"""Shared fixtures. The toy-system fixtures train once per session and are
reused by the acceptance suite and the evaluation tests."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rntk import toy
from rntk.synthdata import make_dataset, make_languages
from rntk.training import train_endpointer, train_stage1, train_stage2_eou

settings.register_profile("rntk", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("rntk")


@pytest.fixture(scope="session")
def small_specs():
    return make_languages(2, 6, 8, 0)


@pytest.fixture(scope="session")
def small_corpus(small_specs):
    """600 short utterances over 2 languages and 12 tokens."""
    return make_dataset(small_specs, [300, 300], seed=0, tokens_range=(1, 4))


@pytest.fixture(scope="session")
def toy_splits():
    return toy.splits(0)[1]


@pytest.fixture(scope="session")
def stage1(toy_splits):
    ckpt, log = train_stage1(toy_splits["train"], toy.model_config(), toy.stage1_optimizer())
    return ckpt


@pytest.fixture(scope="session")
def eou_stage(stage1, toy_splits):
    ckpt, log = train_stage2_eou(stage1, toy_splits["train"], toy.eou_optimizer())
    return ckpt, log


@pytest.fixture(scope="session")
def endpointed(eou_stage, toy_splits):
    """EOU checkpoint with a trained conformer endpointer branch: (ckpt, dev accuracy)."""
    ckpt, _, acc = train_endpointer(
        eou_stage[0], toy_splits["train"], toy.ep_optimizer(), "conformer_branch", toy_splits["dev"]
    )
    return ckpt, acc


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; printed in the summary."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
