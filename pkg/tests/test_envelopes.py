import math

import numpy as np
import pytest

from wavefront_lab import dispersion, envelopes, waves
from wavefront_lab.errors import CertificationFailed, InitialDataOutsideEnvelope, ParameterOutOfBudget
from wavefront_lab.solver import Grid1D, SolverConfig


def test_kappa_params(bh, bh_profile, bh_kp):
    kp = bh_kp
    assert 0 < kp.delta_star < bh.kappa
    assert 0 < kp.gamma_star < 1
    assert 0 < kp.q_star_minus < bh.kappa and 0 < kp.q_star_plus <= bh.kappa
    # b sits to the right of the point where phi reaches kappa - delta*/2
    zb = waves.first_crossing(bh_profile.values, bh_profile.z, bh.kappa - kp.delta_star / 2)
    assert kp.b >= zb
    # the box conditions hold at the returned constants
    assert envelopes.box_holds(bh, 0.0, kp.delta_star, kp.gamma_star, kp.q_star_minus, -1)
    assert envelopes.box_holds(bh, 0.0, kp.delta_star, kp.gamma_star, kp.q_star_plus, +1)


def test_sttg_certifies(bh, bh_profile, bh_kp):
    gmax = dispersion.gamma_max(2.5, 1.0, 0.0, 2.0)
    env = envelopes.build_sttg_envelope(bh_profile, 1.0, min(0.5 * gmax, 0.99 * bh_kp.gamma_star), bh_kp, 0.04)
    cert = envelopes.certify(env, bh, 2.5, 0.0, [0.0, 2.0, 10.0])
    assert cert.passed
    ja, jl = env.corner_jump(0.0)
    assert ja == pytest.approx(0.04) and jl == pytest.approx(-0.04)
    assert all(r[4] in ("upper", "lower") for r in cert.rows[:10])


def test_budget_checks(bh_profile, bh_kp):
    gmax = dispersion.gamma_max(2.5, 1.0, 0.0, 2.0)
    with pytest.raises(ParameterOutOfBudget):
        envelopes.build_sttg_envelope(bh_profile, 1.0, 1.5 * gmax, bh_kp, 0.01)
    with pytest.raises(ParameterOutOfBudget):
        envelopes.build_sttg_envelope(bh_profile, 2.5, 0.01, bh_kp, 0.01)
    with pytest.raises(ParameterOutOfBudget):
        envelopes.build_sttg_envelope(bh_profile, 1.0, 0.01, bh_kp, 10.0)


def test_inadmissible_gamma_fails(bh, bh_profile, bh_kp):
    gmax = dispersion.gamma_max(2.5, 1.0, 0.0, 2.0)
    env = envelopes.build_sttg_envelope(bh_profile, 1.0, 2.0 * gmax, bh_kp, 0.04, check=False)
    cert = envelopes.certify(env, bh, 2.5, 0.0, [0.0, 1.0])
    assert not cert.passed and cert.min_upper < -1e-3


def test_xi_weight_and_zero_gamma(bh, bh_profile, bh_kp):
    lam1 = bh_profile.lambda1
    env = envelopes.build_sttg_envelope(bh_profile, lam1, 0.0, bh_kp, 5.0, weight="xi")
    assert env.corner is None
    assert envelopes.certify(env, bh, 2.5, 0.0, [0.0, 5.0]).passed


def test_uls_certifies(bh, bh_profile, bh_kp):
    q = min(0.05, bh_kp.q_star_minus)
    env = envelopes.build_uls_envelope(bh_profile, bh_kp, q)
    assert env.alpha > 0 and env.d > 0
    assert env.gamma < envelopes.uls_gamma_cap(bh_profile, bh_kp)
    assert env.eps_plus(0.0) == 0.0 and env.eps_plus(1.0) > 0 and env.eps_minus(0.0) < 0
    assert envelopes.certify(env, bh, 2.5, 0.0, [0.0, 1.0, 5.0]).passed
    with pytest.raises(ParameterOutOfBudget):
        envelopes.build_uls_envelope(bh_profile, bh_kp, q, c_star=3.0)


def test_squeeze_rejects_data_outside(bh, bh_profile, bh_kp):
    from wavefront_lab.solver import Boundary, Sampled, init_history, simulate

    env = envelopes.build_sttg_envelope(bh_profile, 1.0, 0.05, bh_kp, 0.04)
    z = bh_profile.z
    grid = Grid1D(float(z[0]), float(z[-1]), z.size)
    bc = Boundary("dirichlet", float(bh_profile.values[0]), right="dirichlet", right_value=1.0)
    w0 = bh_profile.values + 0.02 * waves.eta(z - bh_kp.b, 1.0)
    st = init_history(Sampled(w0), grid, 0.0, 0.005)
    traj = simulate(st, SolverConfig(dt=0.005, t_end=2.0, frame="comoving", c=2.5, boundary=bc, snapshot_every=40), bh)
    rep = envelopes.squeeze_check(traj, env)
    assert rep.passed and rep.max_violation <= 1e-3 * env.q
    st = init_history(Sampled(bh_profile.values + 0.1), grid, 0.0, 0.005)
    traj = simulate(st, SolverConfig(dt=0.005, t_end=0.1, frame="comoving", c=2.5, boundary=bc), bh)
    with pytest.raises(InitialDataOutsideEnvelope):
        envelopes.squeeze_check(traj, env)


def test_static_residual_and_plateau(bh, bh_profile):
    res = envelopes.static_residual(bh_profile.values, bh_profile.dx, 2.5, 0.0, bh, bh_profile.meta.get("ext_rate", 0.0))
    assert np.max(np.abs(res[1:-1])) < 1e-10
    w = envelopes.plateau_supersolution(bh_profile, bh_profile.z, 1.0, 0.05, 1.0, 1.5)
    assert np.all(w >= bh_profile.values - 1e-15) and np.max(w) <= 1.5


def test_monotone_evolution_rejects_non_supersolution(bh, bh_profile):
    z = bh_profile.z
    grid = Grid1D(float(z[0]), float(z[-1]), z.size)
    cfg = SolverConfig(dt=0.01, t_end=1.0, frame="comoving", c=2.5)
    # phi shifted left is a sub-solution shape, not a super-solution of the c = 2.5 equation at 0.5 kappa
    w = 0.5 * np.ones_like(z)
    with pytest.raises(CertificationFailed):
        envelopes.monotone_evolution_check(w, grid, cfg, bh, 0.0, side="super")


def test_stability_radius(bh_profile, bh_kp):
    env = envelopes.build_uls_envelope(bh_profile, bh_kp, 0.04)
    r = envelopes.stability_radius(0.1, env.gamma, env.alpha, bh_profile.lambda1, bh_kp, bh_profile)
    assert 0 < r < 0.1
    assert envelopes.stability_radius(0.01, env.gamma, env.alpha, bh_profile.lambda1, bh_kp, bh_profile) < r
