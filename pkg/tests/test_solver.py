import math

import numpy as np
import pytest

from wavefront_lab import model
from wavefront_lab.errors import BlowUp, DomainError
from wavefront_lab.solver import (
    Boundary,
    Constant,
    ExponentialTail,
    Grid1D,
    Heaviside,
    Sampled,
    SolverConfig,
    Stepper,
    delay_steps,
    init_history,
    scalar_reference,
    simulate,
    snap_grid,
    step,
    write_snapshots,
)


class Linear:
    """g(u) = a u, enough of the BirthFunction interface for the stepper."""

    def __init__(self, a):
        self.a = a
        self.kappa = 1.0
        self.lg = abs(a)

    def __call__(self, u):
        return self.a * np.asarray(u)


def test_delay_steps():
    assert delay_steps(0.0, 0.01) == (0, 0.01)
    m, dt = delay_steps(0.5, 0.011)
    assert m == 45 and m * dt == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(DomainError):
        delay_steps(-1.0, 0.1)


def test_grid_and_snap():
    g = Grid1D.from_spacing(-10.0, 10.0, 0.05)
    assert g.n == 401 and g.dx == pytest.approx(0.05)
    s = snap_grid(-10.0, 10.0, 0.05, 1.2 * 0.5 * 1.7379)
    ratio = 1.2 * 0.5 * 1.7379 / s.dx
    assert abs(ratio - round(ratio)) < 1e-9
    with pytest.raises(DomainError):
        Grid1D(0.0, -1.0, 10)


def test_history_ring_buffer():
    grid = Grid1D(0.0, 1.0, 5)
    st = init_history(ExponentialTail(1.0, 1.0, 1.0, 10.0), grid, 0.5, 0.1)
    assert st.m == 5 and st.data.shape == (6, 5)
    # oldest slice is s = -h
    assert np.allclose(st.delayed, np.exp(grid.x - 0.5))
    assert np.allclose(st.current, np.exp(grid.x))
    assert np.allclose(st.ordered()[0], st.delayed)
    with pytest.raises(DomainError):
        init_history(Sampled(np.zeros(4)), grid, 0.5, 0.1)


def test_step_does_not_mutate():
    grid = Grid1D(-5.0, 5.0, 101)
    g = model.make_beverton_holt(2.0, 1.0)
    st = init_history(Heaviside(1.0), grid, 0.2, 0.01)
    cfg = SolverConfig(dt=st.dt, t_end=1.0)
    before = st.data.copy()
    new = step(st, cfg, g)
    assert np.array_equal(st.data, before)
    assert new.t == pytest.approx(st.dt)
    assert np.allclose(new.ordered()[:-1], st.ordered()[1:])


def _heat_error(dt):
    # g(u) = u cancels the decay term: u_t = u_xx from Gaussian data
    grid = Grid1D.from_spacing(-30.0, 30.0, 0.05)
    st = init_history(Sampled(np.exp(-grid.x**2)), grid, 0.0, dt)
    cfg = SolverConfig(dt=dt, t_end=1.0, boundary=Boundary("dirichlet", 0.0, right="dirichlet"), snapshot_every=10**6)
    traj = simulate(st, cfg, Linear(1.0))
    t = traj.times[-1]
    exact = np.exp(-grid.x**2 / (1 + 4 * t)) / math.sqrt(1 + 4 * t)
    return np.max(np.abs(traj.fields[-1] - exact))


def test_heat_equation_first_order_in_time():
    # the explicit reaction makes the IMEX split first order in dt
    e1, e2 = _heat_error(0.01), _heat_error(0.005)
    assert e1 < 2e-3
    assert 1.8 < e1 / e2 < 2.2


def _exp_error(dt):
    # e^{lam(x + c t)}, c = (lam^2 + a - 1) / lam, solves u_t = u_xx - u + a u
    lam, a = 0.5, 2.0
    c = (lam**2 + a - 1) / lam
    grid = Grid1D.from_spacing(-20.0, 0.0, 0.02)
    st = init_history(ExponentialTail(1.0, lam, c, 1e9), grid, 0.0, dt)
    cfg = SolverConfig(dt=dt, t_end=0.2, boundary=Boundary("robin", left_rate=lam, right="neumann"), snapshot_every=10**6)
    traj = simulate(st, cfg, Linear(a))
    exact = np.exp(lam * (grid.x + c * traj.times[-1]))
    far = grid.x < -10  # away from the (inexact) Neumann end
    return np.max(np.abs(traj.fields[-1][far] / exact[far] - 1))


def test_exponential_solution_with_robin_left_end():
    e1, e2 = _exp_error(0.002), _exp_error(0.001)
    assert e1 < 1e-3
    assert 1.8 < e1 / e2 < 2.2


def test_uniform_fields_match_scalar_reference():
    g = model.make_nicholson(5.0)
    grid = Grid1D(-5.0, 5.0, 51)
    for frame in ("lab", "comoving"):
        st = init_history(Constant(0.3), grid, 0.5, 0.01)
        cfg = SolverConfig(dt=st.dt, t_end=5.0, frame=frame, c=2.0, boundary=Boundary("robin", left_rate=0.0), snapshot_every=1)
        traj = simulate(st, cfg, g)
        ref = scalar_reference([0.3] * (st.m + 1), g, 0.5, st.dt, len(traj.times) - 1)
        assert np.max(np.abs(np.asarray(traj.fields) - ref[:, None])) < 1e-12


def test_comoving_shift_interpolation():
    g = model.make_beverton_holt(2.0, 1.0)
    c, h = 1.5, 0.5
    grid = snap_grid(-10.0, 10.0, 0.05, c * h)
    st = init_history(Constant(0.0), grid, h, 0.05)
    cfg = SolverConfig(dt=st.dt, t_end=1.0, frame="comoving", c=c, boundary=Boundary("robin", left_rate=0.3))
    sp = Stepper(st, cfg, g)
    assert sp.theta == 0.0 and sp.k == round(c * h / grid.dx)
    u = np.exp(0.3 * grid.x)
    assert np.allclose(sp.shifted(u), np.exp(0.3 * (grid.x - c * h)), rtol=1e-12)
    # non-integer shift: linear data is interpolated exactly
    grid2 = Grid1D.from_spacing(-10.0, 10.0, 0.07)
    sp2 = Stepper(init_history(Constant(0.0), grid2, h, 0.05), cfg, g)
    assert sp2.theta > 0
    lin = 2.0 + 0.1 * grid2.x
    inner = grid2.x - c * h >= grid2.x_min
    assert np.allclose(sp2.shifted(lin)[inner], (2.0 + 0.1 * (grid2.x - c * h))[inner])


def test_scheme_flags():
    g = model.make_beverton_holt(2.0, 1.0)
    grid = Grid1D.from_spacing(-10.0, 10.0, 1.0)
    st = init_history(Constant(0.0), grid, 0.0, 0.01)
    sp = Stepper(st, SolverConfig(dt=0.01, t_end=1.0, frame="comoving", c=5.0), g)
    assert sp.upwind and sp.flags["peclet_ok"]
    st = init_history(Constant(0.0), grid, 0.0, 0.9)
    sp = Stepper(st, SolverConfig(dt=0.9, t_end=1.0, frame="comoving", c=5.0, advection="centered"), g)
    assert not sp.flags["peclet_ok"] and not sp.flags["explicit_reaction_ok"]


def test_blowup_attaches_trajectory():
    grid = Grid1D(-1.0, 1.0, 21)
    st = init_history(Constant(1.0), grid, 0.0, 0.01)
    cfg = SolverConfig(dt=0.01, t_end=10.0, boundary=Boundary("robin"), blowup_threshold=100.0, snapshot_every=10)
    with pytest.raises(BlowUp) as info:
        simulate(st, cfg, Linear(50.0))
    traj = info.value.trajectory
    assert traj is not None and traj.failed and len(traj.times) >= 1


def test_simulation_is_deterministic_and_snapshot_format(tmp_path):
    g = model.make_beverton_holt(2.0, 1.0)
    grid = Grid1D.from_spacing(-20.0, 5.0, 0.1)
    runs = []
    for _ in range(2):
        st = init_history(Heaviside(1.0), grid, 0.3, 0.01)
        runs.append(simulate(st, SolverConfig(dt=st.dt, t_end=2.0, snapshot_every=50), g))
    assert all(np.array_equal(a, b) for a, b in zip(runs[0].fields, runs[1].fields))
    path = tmp_path / "snap.csv"
    write_snapshots(runs[0], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x,u"
    assert len(lines) == 1 + len(runs[0].times) * grid.n
    t, x, u = lines[-1].split(",")
    assert float(x) == pytest.approx(grid.x_max)
    assert repr(float(u)) == repr(float(runs[0].fields[-1][-1]))
