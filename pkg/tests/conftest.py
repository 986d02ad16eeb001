import pytest

from reflectdim.scenario import Scenario, SessionSpec

GBPS = (0.5e9, 1.5e9)
MBPS = (0.05e9, 0.15e9)
TRAIN = 17
PACKET_BITS = 1500 * 8


def session(rates=GBPS, lam=1.0):
    return SessionSpec(lam, TRAIN, PACKET_BITS, *rates)


def pure(rho, rates=GBPS):
    return Scenario((session(rates),)).with_rho(rho)


def mixed(rho):
    """Slow and fast groups carrying equal train intensity."""
    return Scenario((session(MBPS), session(GBPS))).with_rho(rho)


def gbps_4000(scale=1):
    """lambda = 4000 trains/s at 0.5-1.5 Gbps; ``scale`` divides rates and lambda."""
    return Scenario((session((GBPS[0] / scale, GBPS[1] / scale), 4000.0 / scale),))


# -- acceptance summary --------------------------------------------------------

ACCEPTANCE_LINES = []


def record_acceptance(name, ok, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
