import numpy as np
import pytest
from hypothesis import settings

from llmr.harness.verify import random_instance, random_policy, toy_vocab  # noqa: F401
from llmr.policy import TabularPolicy, Vocab

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def ab():
    """Two-token vocabulary with no BOS/EOS: a=0, b=1."""
    return Vocab(("a", "b"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def order0(vocab, logits, trainable=True):
    p = TabularPolicy(vocab, 0, trainable=trainable)
    p.set_row((), logits)
    return p


def two_step_teacher(ab):
    """logits(empty) = (1, 0), logits(after a) = (0.5, 2)."""
    return TabularPolicy(ab, 1, table={(ab.pad_id,): (1.0, 0.0), (0,): (0.5, 2.0)}, trainable=False)


# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE_LINES = []


def record_criterion(name, passed, detail=""):
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'} {name}" + (f": {detail}" if detail else ""))
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
