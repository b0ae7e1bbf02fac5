import itertools

import numpy as np
import pytest

from massseg.core import LabelMask, ModelWeights, PotentialStack, energy

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_stack(rng, h, w, k=2, l=2, low=-1.0, high=1.0):
    return PotentialStack(
        rng.uniform(low, high, (k, h, w)),
        rng.uniform(low, high, (k, h, w)),
        rng.uniform(0, 1, (l, h, w - 1)),
        rng.uniform(0, 1, (l, h - 1, w)),
    )


def random_weights(rng, k=2, l=2):
    return ModelWeights(rng.uniform(0, 1, k), rng.uniform(0, 1, l))


def all_labelings(h, w):
    for bits in itertools.product((-1, 1), repeat=h * w):
        yield LabelMask(np.array(bits).reshape(h, w))


def exhaustive_min(stack, w, loss_reference=None):
    """Minimum of E(y) - hamming(ref, y) over every labeling, via the plain energy function."""
    best = np.inf
    for y in all_labelings(*stack.shape):
        e = energy(y, stack, w)
        if loss_reference is not None:
            e -= np.count_nonzero(y.labels != loss_reference.labels)
        best = min(best, e)
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
