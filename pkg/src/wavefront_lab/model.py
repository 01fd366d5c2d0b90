"""Birth functions g and checkers for the standing hypotheses on g and w0.

A birth function is stored together with the structural constants the rest
of the package needs (g'(0), the Lipschitz constant, the positive fixed point
kappa).  Every g is extended linearly, ``g(u) = g'(0) u`` for ``u < 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConstructionError, DomainError

FIXED_POINT_TOL = 1e-12
LIPSCHITZ_SLACK = 1e-9


@dataclass(frozen=True)
class Unimodal:
    x_m: float


@dataclass(frozen=True)
class Holder:
    C: float
    theta: float
    delta0: float


@dataclass(frozen=True)
class BirthFunction:
    """Reaction term g with its metadata.

    ``func`` and ``deriv`` act on nonnegative arrays; ``__call__`` and
    :meth:`prime` add the linear extension to negative arguments.
    """

    func: Callable[[np.ndarray], np.ndarray]
    gp0: float
    lg: float
    kappa: float
    gp_kappa: float
    monotone: bool
    name: str
    deriv: Optional[Callable[[np.ndarray], np.ndarray]] = None
    unimodal: Optional[Unimodal] = None
    holder: Optional[Holder] = None
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        pos = np.maximum(u, 0.0)
        return np.where(u < 0.0, self.gp0 * u, self.func(pos))

    def prime(self, u):
        u = np.asarray(u, dtype=float)
        pos = np.maximum(u, 0.0)
        if self.deriv is not None:
            d = self.deriv(pos)
        else:
            step = 1e-6 * np.maximum(1.0, np.abs(pos))
            d = (self.func(pos + step) - self.func(np.maximum(pos - step, 0.0))) / (
                pos + step - np.maximum(pos - step, 0.0)
            )
        return np.where(u < 0.0, self.gp0, d)

    def eval(self, u):
        return self(u)


def make_nicholson(p_over_delta: float) -> BirthFunction:
    """g(u) = (p/delta) u e^{-u}, the rescaled Nicholson blowflies birth term."""
    p = float(p_over_delta)
    if not p > 1.0:
        raise DomainError(f"p/delta must exceed 1 for a positive equilibrium, got {p}")
    kappa = math.log(p)
    monotone = p <= math.e
    return BirthFunction(
        func=lambda u: p * u * np.exp(-u),
        deriv=lambda u: p * np.exp(-u) * (1.0 - u),
        gp0=p,
        lg=p,
        kappa=kappa,
        gp_kappa=1.0 - kappa,  # p e^{-kappa} = 1
        monotone=monotone,
        unimodal=None if monotone else Unimodal(1.0),
        holder=Holder(C=2.0 * p, theta=1.0, delta0=1.0),
        name="nicholson",
        params={"p_over_delta": p},
    )


def make_beverton_holt(r: float, kappa: float) -> BirthFunction:
    """g(u) = r u / (1 + (r-1) u / kappa); fixed points 0 and kappa, L_g = r."""
    r = float(r)
    kappa = float(kappa)
    if not (r > 1.0 and kappa > 0.0):
        raise DomainError(f"Beverton-Holt needs r > 1 and kappa > 0, got r={r}, kappa={kappa}")
    a = (r - 1.0) / kappa
    return BirthFunction(
        func=lambda u: r * u / (1.0 + a * u),
        deriv=lambda u: r / (1.0 + a * u) ** 2,
        gp0=r,
        lg=r,
        kappa=kappa,
        gp_kappa=1.0 / r,
        monotone=True,
        holder=Holder(C=2.0 * r * a, theta=1.0, delta0=kappa),
        name="beverton-holt",
        params={"r": r, "kappa": kappa},
    )


def make_pushed_candidate(r: float, s: float, kappa: float, grid_n: int = 20001) -> BirthFunction:
    """g(u) = kappa H(u / kappa), H(v) = v (r + s v) / (1 + (r - 1) v + s v^2).

    s = 0 is Beverton-Holt.  H(1) = 1, H'(1) = 1 / (r + s), and H is
    increasing on [0, 1 + sqrt(1 + r / s)], which contains [0, 2].  For
    s > r (r - 1) the slope near 0 exceeds g'(0), so subtangency fails and
    minimal fronts may be pushed.  Validity, including that pushed-ness
    witness when s > 0, is established by sampling.
    """
    r, s, kappa = float(r), float(s), float(kappa)
    if not (r > 1.0 and s >= 0.0 and kappa > 0.0):
        raise DomainError(f"invalid pushed-candidate parameters r={r}, s={s}, kappa={kappa}")
    b = r - 1.0

    def func(u):
        v = u / kappa
        return kappa * v * (r + s * v) / (1.0 + b * v + s * v * v)

    def deriv(u):
        v = u / kappa
        den = 1.0 + b * v + s * v * v
        return (r + 2.0 * s * v - s * v * v) / den**2

    grid = np.linspace(0.0, 2.0 * kappa, grid_n)
    vals = func(grid)
    if not np.all(np.diff(vals) > 0.0):
        raise ConstructionError(f"pushed candidate (r={r}, s={s}, kappa={kappa}) is not strictly increasing on [0, 2 kappa]")
    if abs(func(np.array(kappa)) - kappa) > FIXED_POINT_TOL * max(1.0, kappa):
        raise ConstructionError("pushed candidate fails g(kappa) = kappa")
    inner = grid[1:-1]
    excess = vals[1:-1] - inner
    left = inner < kappa
    if not (np.all(excess[left & (inner > 0)] > 0.0) and np.all(excess[inner > kappa * (1 + 1e-9)] < 0.0)):
        raise ConstructionError("pushed candidate has extra fixed points in (0, 2 kappa]")
    gpk = float(deriv(np.array(kappa)))
    if not gpk < 1.0:
        raise ConstructionError(f"pushed candidate has g'(kappa) = {gpk} >= 1")
    lg = float(np.max(np.abs(np.diff(vals)) / np.diff(grid))) * (1.0 + LIPSCHITZ_SLACK)
    if s > 0.0 and not lg > r * (1.0 + 2.0 * LIPSCHITZ_SLACK):
        raise ConstructionError(f"s={s} does not break subtangency (max slope {lg:.6g} <= g'(0) = {r}); need s > r (r - 1)")
    lg = max(lg, r)
    return BirthFunction(
        func=func,
        deriv=deriv,
        gp0=r,
        lg=lg,
        kappa=kappa,
        gp_kappa=gpk,
        monotone=True,
        name="pushed",
        params={"r": r, "s": s, "kappa": kappa},
    )


def max_difference_quotient(g: BirthFunction, lo: float, hi: float, grid_n: int = 20001) -> float:
    u = np.linspace(lo, hi, grid_n)
    v = g(u)
    return float(np.max(np.abs(np.diff(v)) / np.diff(u)))


@dataclass
class HypothesisReport:
    fixed_point_zero: bool
    fixed_point_kappa: bool
    two_fixed_points: bool
    gp0_gt_1: bool
    gp_kappa_lt_1: bool
    lipschitz: bool
    monotone: Optional[bool]
    strict: Optional[bool]
    lipschitz_estimate: float
    residual_zero: float
    residual_kappa: float

    @property
    def passed(self) -> bool:
        clauses = [
            self.fixed_point_zero,
            self.fixed_point_kappa,
            self.two_fixed_points,
            self.gp0_gt_1,
            self.gp_kappa_lt_1,
            self.lipschitz,
        ]
        if self.monotone is not None:
            clauses.append(self.monotone)
        return all(clauses)


def verify_hypothesis_H(g: BirthFunction, grid_n: int = 2001, check_monotone: bool = False) -> HypothesisReport:
    """Sample every clause of (H) on [0, 2 kappa].

    A passing report only means no counterexample was found on the grid.
    The monotonicity clause, when requested, is sampled on [0, kappa].
    """
    if grid_n < 100:
        raise DomainError("grid_n must be at least 100")
    kappa = g.kappa
    u = np.linspace(0.0, 2.0 * kappa, grid_n)
    vals = g(u)
    res0 = float(abs(g(np.array(0.0))))
    resk = float(abs(g(np.array(kappa)) - kappa))
    excess = vals - u
    interior_left = (u > 0.0) & (u < kappa * (1 - 1e-9))
    interior_right = u > kappa * (1 + 1e-9)
    two = bool(np.all(excess[interior_left] > 0.0) and np.all(excess[interior_right] < 0.0))
    lip = float(np.max(np.abs(np.diff(vals)) / np.diff(u)))
    mono = strict = None
    if check_monotone:
        uk = np.linspace(0.0, kappa, grid_n)
        dv = np.diff(g(uk))
        mono = bool(np.all(dv >= 0.0))
        strict = bool(np.all(dv > 0.0))
    return HypothesisReport(
        fixed_point_zero=res0 <= FIXED_POINT_TOL,
        fixed_point_kappa=resk <= FIXED_POINT_TOL * max(1.0, kappa),
        two_fixed_points=two,
        gp0_gt_1=g.gp0 > 1.0,
        gp_kappa_lt_1=g.gp_kappa < 1.0,
        lipschitz=lip <= g.lg * (1.0 + LIPSCHITZ_SLACK),
        monotone=mono if mono is None else (mono and strict),
        strict=strict,
        lipschitz_estimate=lip,
        residual_zero=res0,
        residual_kappa=resk,
    )


def unimodal_contraction_check(g: BirthFunction, grid_n: int = 2001) -> dict:
    """|g'| < 1 on [g(g(x_m)), g(x_m)], the extra condition for unimodal g."""
    if g.unimodal is None:
        raise DomainError(f"{g.name} carries no unimodal record")
    xm = g.unimodal.x_m
    hi = float(g(np.array(xm)))
    lo = float(g(np.array(hi)))
    u = np.linspace(lo, hi, grid_n)
    slope = float(np.max(np.abs(g.prime(u))))
    return {"interval": (lo, hi), "max_abs_slope": slope, "passed": slope < 1.0}


@dataclass
class InitialConditionReport:
    sup_norm: float
    nonnegative: bool
    separation: float
    separated: bool
    tail_lambda: Optional[float] = None
    tail_amplitude: Optional[float] = None
    tail_r_squared: Optional[float] = None


def check_initial_condition(w0, x, kappa: float, fit_tail: bool = False, sep_tol: float = 1e-12) -> InitialConditionReport:
    """Diagnose (IC1)/(IC2) for a sampled history ``w0[s_index, x_index]``.

    The liminf at +infinity is replaced by the minimum over the rightmost 10%
    of the grid; the optional tail fit uses the s = 0 slice.
    """
    w0 = np.atleast_2d(np.asarray(w0, dtype=float))
    x = np.asarray(x, dtype=float)
    n = x.size
    right = slice(n - max(1, n // 10), n)
    sep = float(np.min(w0[:, right]))
    report = InitialConditionReport(
        sup_norm=float(np.max(np.abs(w0))),
        nonnegative=bool(np.all(w0 >= 0.0)),
        separation=sep,
        separated=sep > sep_tol,
    )
    if fit_tail:
        from .waves import default_tail_window, fit_tail as _fit

        last = w0[-1]
        window = default_tail_window(x, last, kappa)
        lam, amp, r2 = _fit(last, x, window)
        report.tail_lambda, report.tail_amplitude, report.tail_r_squared = lam, amp, r2
    return report


def from_spec(kind: str, **params) -> BirthFunction:
    """Build a birth function from a config block (kind + parameters)."""
    kind = kind.replace("_", "-").lower()
    if kind == "nicholson":
        return make_nicholson(params["p_over_delta"])
    if kind == "beverton-holt":
        return make_beverton_holt(params["r"], params["kappa"])
    if kind == "pushed":
        return make_pushed_candidate(params["r"], params.get("s", 0.0), params["kappa"])
    raise DomainError(f"unknown birth function kind {kind!r}")
