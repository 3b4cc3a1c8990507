import numpy as np
import pytest
from dataclasses import replace

from concealed import eref, qlag
from concealed.errors import ConfigError, StabilityError
from concealed.runner import continuity_error
from concealed.scenarios import GaussianPacket

from conftest import evolve


def grid_for(packet, t_final, m=2048):
    lo, hi = packet.support(t_final)
    return eref.make_grid(lo, hi, m)


# ---------------------------------------------------------------- solver

def test_free_gaussian_peak_density(free_eulerian):
    x, f0, f = free_eulerian
    i = np.argmin(np.abs(x))
    exact = (2 * np.pi) ** -0.5 / np.sqrt(2.0)
    assert exact == pytest.approx(0.2821, abs=1e-4)
    assert np.interp(0.0, x, f.rho) == pytest.approx(exact, abs=1e-5)


def test_free_gaussian_density_profile(free_eulerian, free_packet):
    x, f0, f = free_eulerian
    dx = x[1] - x[0]
    assert np.sqrt(np.sum((f.rho - free_packet.density_at(x, 2.0)) ** 2) * dx) < 1e-5


def test_unitarity_per_step(free_packet):
    x = grid_for(free_packet, 1.0, 512)
    f = eref.init_fields(free_packet, x)
    cn = eref.CrankNicolson(x, 1.0, 1.0, 1e-2)
    for _ in range(20):
        n0 = f.norm()
        f = cn.step(f, refresh=False)
        assert abs(f.norm() - n0) < 1e-10


def test_coherent_state_translates(coherent_packet):
    x = grid_for(coherent_packet, 2 * np.pi)
    pot = qlag.Potential.harmonic(1.0, 1.0)
    f = eref.init_fields(coherent_packet, x)
    cn = eref.CrankNicolson(x, 1.0, 1.0, 1e-3, pot.value)
    for _ in range(1500):
        f = cn.step(f, refresh=False)
    t = 1.5
    shifted = coherent_packet.rho(x - (np.cos(t) - 1.0))
    assert np.max(np.abs(np.abs(f.psi) ** 2 - shifted)) < 1e-4


def test_parity_preserved():
    packet = GaussianPacket(sigma0=0.8)
    x = eref.make_grid(-12.0, 12.0, 801)
    f = eref.init_fields(packet, x)
    cn = eref.CrankNicolson(x, 1.0, 1.0, 1e-2)
    for _ in range(100):
        f = cn.step(f, refresh=False)
    np.testing.assert_allclose(f.psi, f.psi[::-1], atol=1e-13)


def test_cn_step_function_matches_class(free_packet):
    x = grid_for(free_packet, 0.1, 256)
    f = eref.init_fields(free_packet, x)
    params = qlag.PhysicalParams(dt=1e-2)
    a = eref.cn_step(f, None, params)
    b = eref.CrankNicolson(x, 1.0, 1.0, 1e-2).step(f)
    np.testing.assert_allclose(a.psi, b.psi, atol=1e-15)
    assert a.t == pytest.approx(0.01)


def test_walls_must_be_clear(free_packet):
    with pytest.raises(ConfigError, match="walls"):
        eref.init_fields(free_packet, eref.make_grid(-3.0, 3.0, 256))
    with pytest.raises(ConfigError):
        eref.make_grid(1.0, 0.0, 256)


# ---------------------------------------------------------- polar fields

def test_real_psi_has_no_velocity(free_eulerian):
    x, f0, f = free_eulerian
    np.testing.assert_allclose(f0.v, 0.0, atol=1e-12)


def test_boosted_velocity():
    packet = GaussianPacket(p0=3.0, mass=2.0)
    x = grid_for(packet, 0.0, 2048)
    f = eref.init_fields(packet, x, 1.0, 2.0)
    keep = ~f.masked
    np.testing.assert_allclose(f.v[keep], 1.5, atol=1e-6)
    np.testing.assert_allclose(f.u[keep], -x[keep], atol=1e-6)


def test_spreading_velocity_field(free_eulerian, free_packet):
    x, f0, f = free_eulerian
    core = np.abs(x) < 6
    expected = x * free_packet.width_rate(2.0) / free_packet.width(2.0)
    assert free_packet.width_rate(2.0) / free_packet.width(2.0) == pytest.approx(0.25)
    # second-order Crank-Nicolson dispersion
    np.testing.assert_allclose(f.v[core], expected[core], rtol=5e-4, atol=1e-8)


def test_phase_reconstruction():
    packet = GaussianPacket(p0=2.0)
    x = grid_for(packet, 0.0, 1024)
    f = eref.init_fields(packet, x)
    S = eref.phase(f, mass=1.0)
    core = np.abs(x) < 5
    np.testing.assert_allclose(S[core], 2.0 * x[core] - 2.0 * x[np.argmax(f.rho)], atol=1e-6)


# ----------------------------------------------------------------- tracer

def test_trace_zero_and_constant_velocity():
    x = np.linspace(-10, 10, 201)
    t = np.linspace(0, 1, 11)
    labels = np.array([-2.0, 0.3, 4.0])
    paths, exited = eref.advect_trace(t, np.zeros((11, 201)), x, labels)
    np.testing.assert_array_equal(paths[-1], labels)
    paths, exited = eref.advect_trace(t, np.full((11, 201), 2.5), x, labels)
    np.testing.assert_allclose(paths[-1], labels + 2.5, atol=1e-13)
    assert not exited.any()


def test_trace_spreading_field(free_packet):
    x = np.linspace(-20, 20, 2001)
    t = np.linspace(0, 2, 2001)
    v = x[None, :] * (free_packet.width_rate(t) / free_packet.width(t))[:, None]
    paths, exited = eref.advect_trace(t, v, x, np.array([1.0, -3.0]))
    np.testing.assert_allclose(paths[-1], [np.sqrt(2), -3 * np.sqrt(2)], atol=1e-6)


def test_trace_flags_exits():
    x = np.linspace(0, 1, 101)
    t = np.linspace(0, 1, 11)
    paths, exited = eref.advect_trace(t, np.full((11, 101), 2.0), x, np.array([0.5, 0.01]))
    assert exited.all()


# ------------------------------------------------------------- continuity

def test_continuity_without_flow_is_static(free_eulerian):
    x, f0, f = free_eulerian
    conc = eref.init_concealed_eulerian(f0)
    still = replace(f0, v=np.zeros_like(f0.v))
    for _ in range(10):
        conc = eref.concealed_continuity_step(conc, still, 1e-2)
    np.testing.assert_array_equal(conc.W, eref.init_concealed_eulerian(f0).W)


def test_continuity_cfl_guard(free_eulerian):
    x, f0, f = free_eulerian
    conc = eref.init_concealed_eulerian(f0)
    fast = replace(f0, v=np.full_like(f0.v, 1.0))
    with pytest.raises(StabilityError, match="CFL"):
        eref.concealed_continuity_step(conc, fast, 0.95 * (x[1] - x[0]))
    assert eref.continuity_substeps(fast, 2 * (x[1] - x[0])) == 3


def test_continuity_initial_velocity(free_eulerian):
    x, f0, f = free_eulerian
    conc = eref.init_concealed_eulerian(f0)
    keep = ~conc.u_masked & (np.abs(x) < 6)
    np.testing.assert_allclose(conc.V[keep], -0.5 * x[keep], atol=1e-8)
    np.testing.assert_allclose(conc.W[keep] * f0.u[keep] ** 2, conc.V[keep], rtol=1e-12)


def _lockstep(packet, n, m, dt, steps, potential=None):
    params = qlag.PhysicalParams(dt=dt, t_final=steps * dt, external_potential=potential)
    grid, traj, conc = qlag.init_scenario(params, qlag.LabelGridSpec(n_labels=n), packet)
    x = grid_for(packet, steps * dt, m)
    f = eref.init_fields(packet, x)
    cn = eref.CrankNicolson(x, 1.0, 1.0, dt, potential.value if potential else None)
    ce = eref.init_concealed_eulerian(f)

    def both(k, tr, c):
        nonlocal f, ce
        f = cn.step(f)
        ce = eref.concealed_continuity_step(ce, f, dt)

    traj, conc = evolve(params, grid, traj, conc, steps, both)
    return grid, traj, conc, x, f, ce




def test_free_continuity_invariant_first_order(free_packet):
    results = []
    for k in (1, 2):
        grid, traj, conc, x, f, ce = _lockstep(free_packet, 256 * k, 512 * k, 4e-3 / k, 250 * k)
        results.append(continuity_error(grid, traj, conc, ce, x))
    assert results[0] < 0.05
    assert 0.8 < np.log2(results[0] / results[1]) < 1.3


def test_coherent_W_translates(coherent_packet):
    grid, traj, conc, x, f, ce = _lockstep(coherent_packet, 512, 2048, 1e-3, 500,
                                           qlag.Potential.harmonic(1.0, 1.0))
    t = 0.5
    shift = np.cos(t) - 1.0
    W0 = eref.init_concealed_eulerian(eref.init_fields(coherent_packet, x)).W
    expected = np.interp(x - shift, x, W0)
    core = (np.abs(x - 1 - shift) < 2.0) & (np.abs(x - 1 - shift) > 0.3)
    rel = np.abs(ce.W[core] - expected[core]) / np.abs(expected[core])
    assert np.median(rel) < 0.02


# ---------------------------------------------------------------- bridge

def test_bridge_identity_at_start(free_packet):
    params = qlag.PhysicalParams()
    grid, traj, conc = qlag.init_scenario(params, qlag.LabelGridSpec(n_labels=512), free_packet)
    x = np.linspace(-5, 5, 101)
    V, rho = eref.lagrangian_to_eulerian(grid, traj, conc, x)
    np.testing.assert_allclose(rho, free_packet.rho(x), rtol=1e-8)
    np.testing.assert_allclose(V, -0.5 * x, atol=1e-8)


def test_bridge_free_gaussian_at_t2(free_run, free_packet):
    params, grid, snaps = free_run
    k, traj, conc = snaps[-1]
    V, rho = eref.lagrangian_to_eulerian(grid, traj, conc, np.array([np.sqrt(2.0), 100.0]))
    assert rho[0] == pytest.approx(free_packet.rho(1.0) / np.sqrt(2.0), rel=1e-6)
    assert np.isnan(rho[1]) and np.isnan(V[1])


def test_bridge_dilation(free_packet):
    params = qlag.PhysicalParams()
    grid, traj, conc = qlag.init_scenario(params, qlag.LabelGridSpec(n_labels=512), free_packet)
    q = 2 * grid.a
    J, u = qlag.jacobian_and_u(grid, replace(traj, q=q))
    x = np.linspace(-8, 8, 33)
    V, rho = eref.lagrangian_to_eulerian(grid, replace(traj, q=q, J=J, u=u), conc, x)
    np.testing.assert_allclose(rho, free_packet.rho(x / 2) / 2, rtol=1e-7)
