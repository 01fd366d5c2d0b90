"""Real roots of the characteristic function at zero and the derived speeds.

chi0(lam) = lam^2 - c lam - 1 + g'(0) exp(-lam c h) is strictly convex in lam
with chi0(0) = g'(0) - 1 > 0, so every root search here is a bracketing
bisection on a monotone piece.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import DomainError, NoRealRoots

REL_TOL = 1e-14
ROOT_TOL = 1e-12
NEAR_CRITICAL_GAP = 1e-6
C_TOL = 1e-9


def bisect(f: Callable[[float], float], lo: float, hi: float, rel_tol: Optional[float] = None, max_iter: int = 400) -> float:
    """Root of ``f`` on [lo, hi]; f(lo) and f(hi) must have opposite signs (or be zero).

    ``rel_tol`` defaults to the module setting REL_TOL, read at call time.
    """
    if rel_tol is None:
        rel_tol = REL_TOL
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise DomainError(f"bracket [{lo}, {hi}] does not straddle a root ({flo}, {fhi})")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= rel_tol * max(1.0, abs(mid)):
            break
        fm = f(mid)
        if fm == 0.0:
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def char_function(lam, c: float, h: float, gp0: float):
    return lam**2 - c * lam - 1.0 + gp0 * np.exp(-lam * c * h)


def _char_derivative(lam, c, h, gp0):
    return 2.0 * lam - c - gp0 * c * h * np.exp(-lam * c * h)


def _upper_bracket(f, start: float) -> float:
    hi = max(1.0, start)
    while f(hi) <= 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise DomainError("could not bracket root from above")
    return hi


def _minimizer(c, h, gp0) -> float:
    """Argmin of chi0 over lam >= 0 (0 when chi0 is increasing there)."""
    d = lambda lam: _char_derivative(lam, c, h, gp0)
    if d(0.0) >= 0.0:
        return 0.0
    hi = max(1.0, c)
    while d(hi) <= 0.0:
        hi *= 2.0
    return bisect(d, 0.0, hi)


@dataclass(frozen=True)
class CharRoots:
    c: float
    lambda1: float
    lambda2: float
    residuals: Tuple[float, float]
    near_critical: bool = False


def char_roots(c: float, h: float, gp0: float) -> CharRoots:
    """The two positive real roots lambda1 <= lambda2 of chi0 at speed c."""
    if h < 0 or not gp0 > 1.0:
        raise DomainError(f"need h >= 0 and gp0 > 1, got h={h}, gp0={gp0}")
    f = lambda lam: char_function(lam, c, h, gp0)
    lam_m = _minimizer(c, h, gp0)
    fmin = f(lam_m)
    tol = ROOT_TOL * (1.0 + gp0)
    if fmin > 1e-9 * (1.0 + gp0):
        raise NoRealRoots(f"min chi0 = {fmin:.3e} > 0 at c={c}: speed below critical")
    if fmin >= -tol:
        l1 = l2 = lam_m
    else:
        l1 = bisect(f, 0.0, lam_m)
        l2 = bisect(f, lam_m, _upper_bracket(f, max(lam_m, c)))
    return CharRoots(
        c=float(c),
        lambda1=float(l1),
        lambda2=float(l2),
        residuals=(float(f(l1)), float(f(l2))),
        near_critical=bool(l2 - l1 < NEAR_CRITICAL_GAP),
    )


def min_char(c: float, h: float, gp0: float) -> float:
    return float(char_function(_minimizer(c, h, gp0), c, h, gp0))


def critical_speed(h: float, gp0: float) -> Tuple[float, float]:
    """(c_#, lambda_#): the speed at which chi0 has a double positive zero."""
    if h < 0 or not gp0 > 1.0:
        raise DomainError(f"need h >= 0 and gp0 > 1, got h={h}, gp0={gp0}")
    c_hi = 2.0 * math.sqrt(gp0 - 1.0)
    if h == 0:
        return c_hi, c_hi / 2.0
    if min_char(c_hi, h, gp0) >= 0.0:
        # h so small that the delayed and undelayed speeds agree to round-off
        return c_hi, float(_minimizer(c_hi, h, gp0))
    c = bisect(lambda cc: min_char(cc, h, gp0), 0.0, c_hi)
    return float(c), float(_minimizer(c, h, gp0))


def select_mu(lam: float, h: float, gp0: float) -> float:
    """Unique positive root mu of lam^2 - mu - 1 + g'(0) exp(-mu h)."""
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    top = lam**2 - 1.0 + gp0
    if h == 0:
        return float(top)
    # (top - mu) + gp0 (e^{-mu h} - 1) avoids cancellation for tiny h
    return float(bisect(lambda mu: (top - mu) + gp0 * math.expm1(-mu * h), 0.0, top))


def c_of_lambda(lam: float, h: float, gp0: float) -> float:
    """Speed whose slow characteristic root is lam, namely mu(lam)/lam."""
    return select_mu(lam, h, gp0) / lam


@dataclass(frozen=True)
class SpeedSelection:
    lam: float
    mu: float
    c_selected: float
    regime: str
    lambda_star: float


def select_speed(lam: float, h: float, gp0: float, c_star: float | None = None) -> SpeedSelection:
    """Speed picked by initial data decaying like exp(lam x) at -infinity.

    ``c_star`` is the minimal speed; it defaults to c_# which is only correct
    when the Lipschitz constant of g equals g'(0).
    """
    c_sharp, _ = critical_speed(h, gp0)
    if c_star is None:
        c_star = c_sharp
    if c_star < c_sharp - C_TOL:
        raise DomainError(f"c_star={c_star} is below the critical speed {c_sharp}")
    c_star = max(c_star, c_sharp)
    lam_star = char_roots(c_star, h, gp0).lambda1
    mu = select_mu(lam, h, gp0)
    if lam < lam_star:
        return SpeedSelection(float(lam), mu, mu / lam, "selected", lam_star)
    return SpeedSelection(float(lam), mu, float(c_star), "saturated", lam_star)


def gamma_max(c: float, lam: float, h: float, gp0: float) -> float:
    """Largest gamma >= 0 with -gamma + c lam - lam^2 + 1 - g'(0) e^{gamma h} e^{-lam c h} >= 0."""
    roots = char_roots(c, h, gp0)
    slack = 1e-9 * max(1.0, roots.lambda2)
    if lam < roots.lambda1 - slack or lam > roots.lambda2 + slack:
        raise DomainError(f"lambda={lam} outside [{roots.lambda1}, {roots.lambda2}] at c={c}")
    e0 = -float(char_function(lam, c, h, gp0))
    if e0 <= 0.0:
        return 0.0
    if h == 0:
        return e0
    k = gp0 * math.exp(-lam * c * h)
    expr = lambda g: -g + e0 - k * math.expm1(g * h)
    return float(bisect(expr, 0.0, e0))


def shift_bounds(A_fn: Callable, lam: float, mu: float, h: float, n: int = 2001) -> Tuple[float, float]:
    """(a_-, a_+) from the extremes of A(s) exp(-mu s) over s in [-h, 0]."""
    s = np.linspace(-h, 0.0, n) if h > 0 else np.array([0.0])
    vals = np.asarray(A_fn(s), dtype=float) * np.exp(-mu * s)
    vals = np.broadcast_to(vals, s.shape)
    if np.any(vals <= 0.0):
        raise DomainError("A(s) must be positive on [-h, 0]")
    return float(np.log(vals.min()) / lam), float(np.log(vals.max()) / lam)
