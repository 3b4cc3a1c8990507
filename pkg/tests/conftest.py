import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from concealed import eref, qlag
from concealed.scenarios import GaussianPacket, coherent_width

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def evolve(params, grid, traj, conc, n_steps, every=None):
    """Step ``n_steps`` times; ``every(k, traj, conc)`` is called after each step."""
    for k in range(1, n_steps + 1):
        traj, conc = qlag.step(params, grid, traj, conc)
        traj.t = k * params.dt
        if every is not None:
            every(k, traj, conc)
    return traj, conc


@pytest.fixture(scope="session")
def free_packet():
    return GaussianPacket()


@pytest.fixture(scope="session")
def coherent_packet():
    return GaussianPacket(sigma0=coherent_width(1.0, 1.0, 1.0), x0=1.0, omega=1.0)


@pytest.fixture(scope="session")
def free_run(free_packet):
    """Free Gaussian, N=1024, dt=1e-3 to t=2, with snapshots every 0.1."""
    params = qlag.PhysicalParams(dt=1e-3, t_final=2.0)
    grid, traj, conc = qlag.init_scenario(params, qlag.LabelGridSpec(n_labels=1024), free_packet)
    snaps = [(0, traj, conc)]

    def keep(k, tr, c):
        if k % 100 == 0:
            snaps.append((k, tr, c))

    evolve(params, grid, traj, conc, params.n_steps, keep)
    return params, grid, snaps


@pytest.fixture(scope="session")
def free_eulerian(free_packet):
    """Crank-Nicolson reference for the free Gaussian on the default grid, t = 0 and t = 2."""
    lo, hi = free_packet.support(2.0)
    x = eref.make_grid(lo, hi, 2048)
    f0 = eref.init_fields(free_packet, x)
    cn = eref.CrankNicolson(x, 1.0, 1.0, 1e-3)
    f = f0
    for _ in range(2000):
        f = cn.step(f, refresh=False)
    f = eref.polar_fields(f)
    return x, f0, f


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
