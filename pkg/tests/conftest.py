from pathlib import Path

import numpy as np
import pytest

from unconfound.data import Dataset, Source

CONFIGS = Path(__file__).resolve().parents[1] / "src" / "unconfound" / "configs"
DATA = Path(__file__).resolve().parents[1] / "src" / "unconfound" / "data"


@pytest.fixture
def configs_dir():
    return CONFIGS


@pytest.fixture
def data_dir():
    return DATA


def make_dataset(a, y, x=None, source=Source.OBS):
    a = np.asarray(a)
    if x is None:
        x = np.zeros((len(a), 0))
    return Dataset(a=a, x=np.asarray(x, dtype=float), y=np.asarray(y, dtype=float), source=source)


# ------------------------------------------------------------------ acceptance report

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report(request):
    """Record one pass/fail line for an acceptance criterion.

    Call the returned function with the criterion label, the boolean outcome
    and a detail string; the lines are printed in the terminal summary.
    """

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'} - {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
