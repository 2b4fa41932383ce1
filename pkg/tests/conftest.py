import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent / "reference"))

from instances import GAMMA3, P3, R3, XI3  # noqa: E402

from minibatch_ac.generators import two_state_chain  # noqa: E402
from minibatch_ac.mdp import FiniteMdp  # noqa: E402


@pytest.fixture
def chain2():
    return two_state_chain()


@pytest.fixture
def mdp3():
    return FiniteMdp(P3, R3, XI3, GAMMA3, 1.0)


def stay_table():
    """Always-stay policy table for the two-state chain."""
    return np.array([[1.0, 0.0], [1.0, 0.0]])
