import numpy as np
import pytest

from swarm_isac.model import ChannelParams, Scenario


def make_scenario(n=3, m=2, seed=0, omega=1.0, r_max=20.0, spread=50.0):
    """Random scenario in the default geometry: user at the origin, UAVs in a cube."""
    rng = np.random.default_rng(seed)
    q0 = rng.uniform(-spread, spread, (n, 3))
    offsets = rng.uniform(-0.5, 0.5, (m, 3))
    return Scenario(np.zeros(3), offsets, q0, r_max=r_max, omega=omega)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture
def scenario():
    return make_scenario()


@pytest.fixture
def params():
    return ChannelParams()


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    """Remember one acceptance verdict; all of them are printed at the end of the run."""
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
