import math
from pathlib import Path

import pytest

from hypnet import netvor
from hypnet.quotient import build_surface, ingest_manifold, systole

FIXTURES = Path(__file__).parent / "fixtures"
BOLZA_SYS = 2 * math.acosh(1 + math.sqrt(2))

# lines collected by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def bolza():
    return build_surface(2)


@pytest.fixture(scope="session")
def genus3():
    return build_surface(3)


@pytest.fixture(scope="session")
def seifert_weber():
    return ingest_manifold(FIXTURES / "seifert_weber.json")


@pytest.fixture(scope="session")
def bolza_inj(bolza):
    return systole(bolza, L=12).inj


@pytest.fixture(scope="session")
def bolza_runs(bolza, bolza_inj):
    """Free-regime pipeline runs at h = R/20 for the three radii used throughout."""
    out = {}
    for R in (0.2, 0.3, 0.5):
        out[R] = netvor.jt_pipeline(bolza, netvor.PipelineConfig(regime="free", R=R, a0=bolza_inj))
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
