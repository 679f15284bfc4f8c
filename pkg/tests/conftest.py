import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from hyperdec.config import validate_config  # noqa: E402
from hyperdec.data import make_samples  # noqa: E402

torch.set_num_threads(1)


@pytest.fixture
def tiny_cfg():
    return validate_config({"profile": "tiny"})


@pytest.fixture
def desk_cfg():
    return validate_config({"profile": "desk"})


@pytest.fixture(scope="session")
def desk_samples():
    return make_samples(12, np.random.default_rng(123), prefix="fx")


@pytest.fixture(scope="session")
def tiny_samples():
    return make_samples(6, np.random.default_rng(5), targets=(1, 1), size=(16, 16), prefix="t")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
