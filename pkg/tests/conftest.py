import numpy as np
import pytest

from psps_lab.grid import Bus, Line, Network, validate_network
from psps_lab.scenario import load_scenario


def two_bus(demand=1.0, f_max=5.0, c_energy=10.0, c_load_loss=100.0, horizon=1, r=0.01, x=0.02,
            sub_demand=0.0, c_switch=0.0):
    buses = (Bus(1, "substation", 0.9, 1.1, 10.0, -10.0, 10.0), Bus(2, "load", 0.81, 1.21))
    lines = (Line(1, 1, 2, r=r, x=x, f_max=f_max),)
    dp = np.array([[sub_demand] * horizon, [demand] * horizon], dtype=float)
    return validate_network(Network(buses, lines, horizon, dp, np.zeros_like(dp), c_energy,
                                    c_switch, c_load_loss))


@pytest.fixture(scope="session")
def toy():
    return load_scenario("toy6")


@pytest.fixture(scope="session")
def synth54():
    return load_scenario("synth54")


@pytest.fixture(scope="session")
def synth54x():
    return load_scenario("synth54_extreme")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from test_acceptance import ACCEPTANCE_KEY
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
