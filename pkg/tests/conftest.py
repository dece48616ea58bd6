from __future__ import annotations

import pytest
import torch

from mpssl.foundation import FoundationSpec, TaskSpec, make_foundation_domain, make_generator, make_target_task
from mpssl.trainer import TrainLoopConfig

# lines emitted by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def domain():
    return make_foundation_domain(FoundationSpec())


@pytest.fixture(scope="session")
def G(domain):
    return make_generator(domain)


@pytest.fixture
def task(domain):
    # fresh per test: the unlabeled pool carries a read counter
    return make_target_task(domain, TaskSpec())


def quick_cfg(method="mpssl", **kw) -> TrainLoopConfig:
    base = dict(method=method, epochs=4, steps_per_epoch=3, milestones=(2, 3), seed=0)
    base.update(kw)
    return TrainLoopConfig(**base)


def params_equal(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)
