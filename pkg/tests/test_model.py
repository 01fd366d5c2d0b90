import math

import numpy as np
import pytest

from wavefront_lab import model
from wavefront_lab.errors import ConstructionError, DomainError


def test_beverton_holt_constants():
    g = model.make_beverton_holt(2.0, 1.5)
    assert g.gp0 == 2.0 and g.lg == 2.0 and g.kappa == 1.5
    assert float(g(np.array(1.5))) == pytest.approx(1.5, abs=1e-14)
    assert float(g.prime(np.array(1.5))) == pytest.approx(g.gp_kappa)
    assert float(g.prime(np.array(0.0))) == pytest.approx(2.0)
    assert g.monotone


def test_linear_extension_below_zero():
    g = model.make_nicholson(5.0)
    u = np.array([-2.0, -0.1])
    assert np.allclose(g(u), 5.0 * u)
    assert np.allclose(g.prime(u), 5.0)


def test_nicholson_flags():
    assert model.make_nicholson(2.0).monotone
    assert model.make_nicholson(math.e).monotone
    g = model.make_nicholson(5.0)
    assert not g.monotone and g.unimodal.x_m == 1.0
    assert g.kappa == pytest.approx(math.log(5.0))
    assert g.gp_kappa == pytest.approx(1.0 - math.log(5.0))
    with pytest.raises(DomainError):
        model.make_nicholson(1.0)


def test_analytic_derivative_matches_differences():
    for g in (model.make_beverton_holt(3.0, 2.0), model.make_nicholson(5.0), model.make_pushed_candidate(2.0, 4.0, 1.5)):
        u = np.linspace(0.1, 2.0 * g.kappa, 50)
        fd = (g(u + 1e-6) - g(u - 1e-6)) / 2e-6
        assert np.allclose(g.prime(u), fd, rtol=1e-6, atol=1e-8)


def test_pushed_candidate():
    g = model.make_pushed_candidate(2.0, 4.0, 1.0)
    assert g.lg > g.gp0
    assert model.max_difference_quotient(g, 0.0, 1.0) > g.gp0
    assert float(g(np.array(1.0))) == pytest.approx(1.0)
    assert g.gp_kappa == pytest.approx(1.0 / 6.0)
    assert model.verify_hypothesis_H(g, check_monotone=True).passed
    bh = model.make_beverton_holt(2.0, 1.0)
    g0 = model.make_pushed_candidate(2.0, 0.0, 1.0)
    u = np.linspace(0, 2, 11)
    assert np.allclose(g0(u), bh(u))
    assert g0.lg == pytest.approx(2.0, rel=1e-6)
    with pytest.raises(DomainError):
        model.make_pushed_candidate(0.5, 1.0, 1.0)


def test_pushed_candidate_rejects_bad_shapes():
    # 0 < s < r (r - 1) keeps the slope below g'(0): no pushed-ness witness
    with pytest.raises(ConstructionError):
        model.make_pushed_candidate(2.0, 1.0, 1.0)


def test_hypothesis_checker():
    rep = model.verify_hypothesis_H(model.make_beverton_holt(2.0, 1.0), check_monotone=True)
    assert rep.passed and rep.monotone
    rep = model.verify_hypothesis_H(model.make_nicholson(5.0), check_monotone=True)
    assert rep.two_fixed_points and rep.gp0_gt_1 and rep.gp_kappa_lt_1
    assert rep.monotone is False and not rep.passed
    assert model.verify_hypothesis_H(model.make_nicholson(5.0)).passed


def test_hypothesis_checker_finds_counterexample():
    good = model.make_beverton_holt(2.0, 1.0)
    bad = model.BirthFunction(
        func=lambda u: 2.0 * u / (1.0 + u) + 0.3 * np.sin(6 * u) * u * (1 - u) ** 2,
        gp0=2.0, lg=2.0, kappa=1.0, gp_kappa=0.5, monotone=True, name="bad",
    )
    assert model.verify_hypothesis_H(good).passed
    rep = model.verify_hypothesis_H(bad)
    assert not rep.passed


def test_unimodal_contraction():
    uc = model.unimodal_contraction_check(model.make_nicholson(5.0))
    lo, hi = uc["interval"]
    assert hi == pytest.approx(5.0 / math.e)
    assert lo == pytest.approx(5.0 * hi * math.exp(-hi))
    assert uc["passed"] and uc["max_abs_slope"] < 1
    # beyond e^2 the contraction fails: kappa = ln p > 2 gives |g'(kappa)| > 1
    assert not model.unimodal_contraction_check(model.make_nicholson(9.0))["passed"]
    with pytest.raises(DomainError):
        model.unimodal_contraction_check(model.make_beverton_holt(2.0, 1.0))


def test_initial_condition_checks():
    x = np.linspace(-40, 10, 1001)
    w = np.minimum(np.exp(0.5 * x), 0.9)
    rep = model.check_initial_condition(w, x, 1.0, fit_tail=True)
    assert rep.nonnegative and rep.separated
    assert rep.tail_lambda == pytest.approx(0.5, rel=1e-8)
    rep = model.check_initial_condition(np.where(x < 0, w, 0.0), x, 1.0)
    assert not rep.separated


def test_from_spec():
    assert model.from_spec("beverton_holt", r=2.0, kappa=1.0).name == "beverton-holt"
    assert model.from_spec("nicholson", p_over_delta=5.0).kappa == pytest.approx(math.log(5))
    with pytest.raises(DomainError):
        model.from_spec("logistic")
