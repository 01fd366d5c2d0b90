import math
from types import SimpleNamespace

import numpy as np
import pytest

from wavefront_lab import dispersion, model, waves
from wavefront_lab.errors import (
    InsufficientData,
    NoCrossing,
    NoMinimumInBracket,
    NonPositiveValues,
    SpeedMismatch,
    TailFitUnreliable,
)
from wavefront_lab.solver import Grid1D


def test_fit_tail_exact_exponential():
    x = np.linspace(-30, 0, 301)
    lam, amp, r2 = waves.fit_tail(3.0 * np.exp(0.7 * x), x, (-25.0, -5.0))
    assert lam == pytest.approx(0.7, rel=1e-10) and amp == pytest.approx(3.0, rel=1e-9) and r2 > 0.999999
    assert waves.tail_amplitude(3.0 * np.exp(0.7 * x), x, 0.7, (-25.0, -5.0)) == pytest.approx(3.0, rel=1e-10)


def test_first_crossing_and_eta():
    x = np.linspace(-1, 1, 21)
    assert waves.first_crossing(x, x, 0.05) == pytest.approx(0.05)
    with pytest.raises(NoCrossing):
        waves.first_crossing(x, x, 5.0)
    assert np.allclose(waves.eta(np.array([-1.0, 0.0, 3.0]), 2.0), [math.exp(-2.0), 1.0, 1.0])
    val, loc = waves.weighted_norm(np.array([0.1, 0.1]), np.array([-1.0, 1.0]), 1.0)
    assert val == pytest.approx(0.1 * math.e) and loc == -1.0


def test_profile_of_beverton_holt(bh, bh_profile):
    p = bh_profile
    assert p.monotone and p.overshoot <= 1e-12
    assert p.lambda1 == pytest.approx(0.5, abs=1e-12)
    assert float(p(np.array(0.0))) == pytest.approx(0.5, abs=1e-12)
    assert p.ep_residual < 1e-10
    defect = waves.profile_defect(p.values, p.dx, 2.5, 0.0, bh, p.meta.get("ext_rate", 0.0))
    assert np.max(np.abs(defect[1:-1])) < 1e-10
    norm, amp = waves.normalize_profile(p)
    # normalization moves the tail to exactly exp(lam1 z)
    zt = norm.z[norm.values < 1e-4][-5]
    assert float(norm(np.array(zt))) == pytest.approx(math.exp(0.5 * zt), rel=1e-3)
    assert amp > 0


def test_profile_with_delay_tail_rate():
    g = model.make_beverton_holt(2.0, 1.0)
    c, h = 2.0, 0.5
    p = waves.compute_profile(c, g, h)
    lam1 = dispersion.char_roots(c, h, g.gp0).lambda1
    window = waves.default_tail_window(p.z, p.values, 1.0)
    lam, _, r2 = waves.fit_tail(p.values, p.z, window)
    assert lam == pytest.approx(lam1, rel=2e-3) and r2 > 0.9999
    assert p.monotone


def test_speed_below_critical_is_rejected(bh):
    with pytest.raises(SpeedMismatch):
        waves.compute_profile(1.0, bh, 0.0, relax_time=100.0)


def test_critical_tail_fit_flagged(bh):
    p = waves.compute_profile(2.0, bh, 0.0)
    with pytest.raises(TailFitUnreliable):
        waves.normalize_profile(p)


def test_nicholson_overshoot_detected_when_linearization_oscillates():
    # p = 5, h = 1: nu^2 - c nu - 1 + g'(kappa) e^{-nu c h} has no negative real root
    g = model.make_nicholson(5.0)
    c = 1.2 * dispersion.critical_speed(1.0, g.gp0)[0]
    p = waves.compute_profile(c, g, 1.0)
    d = waves.profile_overshoot(p)
    assert not p.monotone and d["overshoot"] > 1e-3 and d["kappa_crossings"] >= 2


def test_align_shift_recovers_translation(bh_profile):
    z = bh_profile.z
    u = bh_profile(z + 1.3)
    keep = z > -20
    a = waves.align_shift(u[keep], z[keep], bh_profile, 0.5, bracket=(-5.0, 5.0))
    assert a == pytest.approx(1.3, abs=1e-5)
    with pytest.raises(NoMinimumInBracket):
        waves.align_shift(u[keep], z[keep], bh_profile, 0.5, bracket=(2.0, 5.0))


def test_convergence_rate_and_monotonicity():
    t = np.linspace(0, 20, 81)
    v = 0.3 * np.exp(-0.4 * t)
    rate, r2 = waves.convergence_rate((t, v))
    assert rate == pytest.approx(0.4, rel=1e-10) and r2 == pytest.approx(1.0)
    rate, _ = waves.convergence_rate((t, v), floor=1e-2)
    assert rate == pytest.approx(0.4, rel=1e-10)
    assert waves.is_monotone_decreasing(v) and not waves.is_monotone_decreasing(v[::-1])
    with pytest.raises(InsufficientData):
        waves.convergence_rate((t[:5], v[:5]))
    with pytest.raises(NonPositiveValues):
        waves.convergence_rate((t, np.where(t > 10, 0.0, v)))


def test_track_front_synthetic():
    grid = Grid1D(-100.0, 10.0, 1101)
    times = np.arange(0.0, 40.0, 1.0)
    fields = [1.0 / (1.0 + np.exp(-(grid.x + 2.5 * t))) for t in times]
    traj = SimpleNamespace(grid=grid, times=list(times), fields=fields, c=0.0)
    tr = waves.track_front(traj, 0.5)
    assert tr.c_est == pytest.approx(2.5, rel=1e-3)
    assert tr.running[-1] == pytest.approx(2.5, rel=1e-3)


def test_chen_guo_norm():
    phi = np.array([1e-310, 1e-3, 0.5])
    u = phi * np.array([5.0, 1.1, 0.9])
    val, excluded = waves.chen_guo_norm(u, phi, return_excluded=True)
    assert val == pytest.approx(0.1) and excluded == 1


def test_norm_window(bh_profile):
    zlo = waves.norm_window(bh_profile, 1.0, 0.0, limit=1e4)
    ratio = bh_profile.values * np.exp(np.maximum(-(bh_profile.z), 0.0))
    assert np.all(ratio[bh_profile.z >= zlo] <= 1e4 + 1e-9)
