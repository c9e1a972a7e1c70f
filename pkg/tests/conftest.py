import numpy as np
import pytest

from egb.lm.base import EOS
from egb.lm.scripted import TableModel


@pytest.fixture
def xeq2_model():
    """Deterministic table model that writes ``x = 2.`` and then stops."""
    vocab = ["Q", "\n", "x", " ", "=", " 2", ".\n", EOS]
    table = {
        "": {"x": 1.0},
        "x": {" ": 1.0},
        "x ": {"=": 1.0},
        "=": {" 2": 1.0},
        " 2": {".\n": 1.0},
        "x = 2.\n": {EOS: 1.0},
    }
    return TableModel(vocab, table)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def acceptance():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
