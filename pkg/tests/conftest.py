import numpy as np
import pytest

from sehilo.fsq import QuantizerConfig
from sehilo.hilo import HiLoConfig, init_weights

_ACCEPTANCE = []


def record_acceptance(name, passed, detail=""):
    _ACCEPTANCE.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {name}: {detail}")


@pytest.fixture
def default_q():
    return QuantizerConfig((5, 5, 5, 5, 5), alpha=2.0, epsilon=1e-3)


@pytest.fixture(scope="session")
def desk_model():
    cfg = HiLoConfig()
    return cfg, init_weights(cfg, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
