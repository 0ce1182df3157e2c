import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"
sys.path.insert(0, str(Path(__file__).resolve().parent))

from tapdecomp.tntp import parse_network, parse_trips  # noqa: E402


@pytest.fixture(scope="session")
def sioux_falls():
    net = parse_network(DATA / "SiouxFalls_net.tntp")
    return net, parse_trips(DATA / "SiouxFalls_trips.tntp", net)


@pytest.fixture(scope="session")
def sf_paths():
    return DATA / "SiouxFalls_net.tntp", DATA / "SiouxFalls_trips.tntp"


_CRITERIA = {}


@pytest.fixture
def criterion():
    """``criterion(number, ok, detail)`` records a pass/fail line for the
    terminal summary and returns ``ok``."""
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        _CRITERIA[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
