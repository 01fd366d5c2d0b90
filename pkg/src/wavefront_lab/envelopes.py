"""Super- and sub-solution envelopes around a front and their verification.

Two families are built around a computed profile phi:

* ``sttg``: phi(z) +/- q e^{-gamma t} eta_lam(z - b) (or the unbounded weight
  exp(lam z)), corner at b;
* ``uls``:  phi(z +/- eps_pm(t)) +/- q e^{-gamma t} eta_1(z), corner at 0,
  with eps_+ = (alpha q / gamma)(e^{gamma h} - e^{-gamma t}) and
  eps_- = -(alpha q / gamma) e^{-gamma t}.

Certification evaluates the operator
    N w = w_t - w_zz + c w_z + w - g(w(t - h, z - ch))
with the same centred differences and linear interpolation the solver and
the profile solver use, so an exact discrete profile has zero residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import dispersion
from .errors import (
    CertificationFailed,
    DegenerateProfile,
    DomainError,
    InitialDataOutsideEnvelope,
    NoAdmissibleParams,
    ParameterOutOfBudget,
)
from .solver import Boundary, Grid1D, Sampled, SolverConfig, init_history, simulate
from .waves import WaveProfile, eta, first_crossing, profile_defect


# ------------------------------------------------------------------ (gg1)/(gg)


@dataclass(frozen=True)
class KappaParams:
    delta_star: float
    gamma_star: float
    q_star_minus: float
    q_star_plus: float
    b: float
    gp0: float
    lg: float
    kappa: float
    gamma_limit: float = float("nan")
    verified: bool = True


def _slack(g, u, q, gam, h, side):
    """(gg1) slack for side=-1, (gg) slack for side=+1; derivative limit at q = 0."""
    e = np.exp(gam * h)
    pos = q > 0
    qs = np.where(pos, q, 1.0)
    if side < 0:
        diff = (g(u) - g(u - qs * e)) / qs
    else:
        diff = (g(u + qs * e) - g(u)) / qs
    diff = np.where(pos, diff, e * g.prime(u))
    return (1.0 - 2.0 * gam) - diff


def box_holds(g, h, delta, gamma, q_max, side, n=100) -> bool:
    """Sample the inequality on [kappa-delta, kappa] x [0, q_max] x [0, gamma]."""
    k = g.kappa
    u = np.linspace(k - delta, k, n)[:, None, None]
    q = np.linspace(0.0, q_max, n)[None, :, None]
    gam = np.linspace(0.0, gamma, n)[None, None, :]
    return bool(np.all(_slack(g, u, q, gam, h, side) >= 0.0))


def _gamma_limit(g, h, delta, n=200) -> float:
    """Largest gamma <= 1/2 with 1 - 2 gamma - e^{gamma h} max g'(u) >= 0 on [kappa-delta, kappa]."""
    u = np.linspace(g.kappa - delta, g.kappa, n)
    s = float(np.max(g.prime(u)))
    f = lambda gam: 1.0 - 2.0 * gam - math.exp(gam * h) * s
    if f(0.0) <= 0.0:
        return 0.0
    if f(0.5) >= 0.0:
        return 0.5
    return dispersion.bisect(f, 0.0, 0.5)


def _largest_feasible(pred, grid: Sequence[float], refine: int = 25):
    """Largest grid value passing ``pred`` (monotone), refined by bisection toward the next one."""
    grid = np.sort(np.asarray(grid, dtype=float))
    if grid.size == 0 or not pred(grid[0]):
        return None
    # feasible set is a prefix of the sorted grid: binary search its end
    i, j = 0, grid.size
    while j - i > 1:
        mid = (i + j) // 2
        if pred(grid[mid]):
            i = mid
        else:
            j = mid
    lo = float(grid[i])
    if j < grid.size:
        hi = float(grid[j])
        for _ in range(refine):
            mid = 0.5 * (lo + hi)
            if pred(mid):
                lo = mid
            else:
                hi = mid
    return float(lo)


def estimate_kappa_params(
    g,
    h: float,
    profile: WaveProfile,
    gamma_grid: Optional[Sequence[float]] = None,
    q_grid: Optional[Sequence[float]] = None,
    delta_grid: Optional[Sequence[float]] = None,
    n_samples: int = 100,
    conservative: float = 0.9,
    rate_share: float = 0.5,
) -> KappaParams:
    """Constructive (delta*, gamma*, q_*, q*) for (gg1)/(gg) and the abscissa b.

    delta* is the largest grid value whose slope-limited rate budget keeps at
    least ``rate_share`` of the budget at delta -> 0; gamma* and the q caps
    are the largest sampled values passing the box checks, refined by
    bisection and then scaled by ``conservative``.  Both q caps are capped at
    kappa (q_* strictly below it).
    """
    kappa = g.kappa
    if not g.gp_kappa < 1.0:
        raise NoAdmissibleParams(f"g'(kappa) = {g.gp_kappa} >= 1")
    if delta_grid is None:
        delta_grid = np.linspace(kappa / 200.0, kappa / 2.0, 100)
    lim0 = _gamma_limit(g, h, float(np.min(delta_grid)) * 1e-3)
    if lim0 <= 0.0:
        raise NoAdmissibleParams("no positive gamma satisfies the q -> 0 limit near kappa")
    delta = _largest_feasible(lambda d: _gamma_limit(g, h, d) >= rate_share * lim0, delta_grid, refine=0)
    if delta is None:
        raise NoAdmissibleParams("no sampled delta* keeps a positive rate budget")
    q_small = kappa * 1e-3
    both = lambda gam, qm, qp: box_holds(g, h, delta, gam, qm, -1, n_samples) and box_holds(g, h, delta, gam, qp, +1, n_samples)
    lim = _gamma_limit(g, h, delta)
    if gamma_grid is None:
        gamma_grid = np.linspace(lim / 100.0, lim, 100)
    gamma = _largest_feasible(lambda gam: both(gam, q_small, q_small), gamma_grid, refine=10)
    if gamma is None:
        raise NoAdmissibleParams("even the smallest sampled gamma box fails (gg1)/(gg)")
    gamma *= conservative
    if q_grid is None:
        q_grid = np.linspace(kappa / 100.0, kappa, 100)
    q_grid = np.asarray(q_grid, dtype=float)
    qm = _largest_feasible(lambda q: box_holds(g, h, delta, gamma, q, -1, n_samples), q_grid[q_grid < kappa])
    qp = _largest_feasible(lambda q: box_holds(g, h, delta, gamma, q, +1, n_samples), q_grid[q_grid <= kappa])
    if qm is None or qp is None:
        raise NoAdmissibleParams("no sampled q box satisfies (gg1)/(gg)")
    qm, qp = conservative * qm, conservative * qp
    b = first_crossing(profile.values, profile.z, kappa - delta / 2.0) + profile.c * h
    verified = box_holds(g, h, delta, gamma, qm, -1, n_samples) and box_holds(g, h, delta, gamma, qp, +1, n_samples)
    return KappaParams(
        delta_star=float(delta),
        gamma_star=float(gamma),
        q_star_minus=float(qm),
        q_star_plus=float(qp),
        b=float(b),
        gp0=g.gp0,
        lg=g.lg,
        kappa=kappa,
        gamma_limit=float(lim),
        verified=verified,
    )


# ------------------------------------------------------------------ envelopes


@dataclass(frozen=True)
class Envelope:
    kind: str  # "sttg" or "uls"
    profile: WaveProfile
    q: float
    gamma: float
    lam: float
    b: float
    h: float
    weight: str = "eta"  # "eta" or "xi"
    alpha: float = float("nan")
    d: float = float("nan")
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def corner(self) -> Optional[float]:
        if self.weight == "xi":
            return None
        return self.b if self.kind == "sttg" else 0.0

    # weight in z and its analytic derivatives
    def weight_fn(self, z):
        z = np.asarray(z, dtype=float)
        if self.weight == "xi":
            return np.exp(self.lam * z)
        origin = self.b if self.kind == "sttg" else 0.0
        return eta(z - origin, self.lam)

    def eps_plus(self, t):
        if self.kind != "uls":
            return np.zeros_like(np.asarray(t, dtype=float))
        return self.alpha * self.q / self.gamma * (math.exp(self.gamma * self.h) - np.exp(-self.gamma * np.asarray(t, dtype=float)))

    def eps_minus(self, t):
        if self.kind != "uls":
            return np.zeros_like(np.asarray(t, dtype=float))
        return -self.alpha * self.q / self.gamma * np.exp(-self.gamma * np.asarray(t, dtype=float))

    def _phi(self, z, smooth):
        return self.profile.smooth(z) if smooth else self.profile(z)

    def upper(self, t, z, smooth: bool = False):
        z = np.asarray(z, dtype=float)
        base = self._phi(z + self.eps_plus(t), smooth)
        return base + self.q * math.exp(-self.gamma * t) * self.weight_fn(z)

    def lower(self, t, z, smooth: bool = False):
        z = np.asarray(z, dtype=float)
        base = self._phi(z - self.eps_minus(t), smooth)
        return base - self.q * math.exp(-self.gamma * t) * self.weight_fn(z)

    def _phi_prime(self, y):
        dx = self.profile.dx
        return (self.profile(y + dx) - self.profile(y - dx)) / (2 * dx)

    def upper_t(self, t, z):
        """Analytic time derivative of the upper envelope."""
        z = np.asarray(z, dtype=float)
        out = -self.gamma * self.q * math.exp(-self.gamma * t) * self.weight_fn(z)
        if self.kind == "uls":
            out = out + self.alpha * self.q * math.exp(-self.gamma * t) * self._phi_prime(z + self.eps_plus(t))
        return out

    def lower_t(self, t, z):
        z = np.asarray(z, dtype=float)
        out = self.gamma * self.q * math.exp(-self.gamma * t) * self.weight_fn(z)
        if self.kind == "uls":
            out = out - self.alpha * self.q * math.exp(-self.gamma * t) * self._phi_prime(z - self.eps_minus(t))
        return out

    def corner_jump(self, t):
        """Analytic w_z(z*-) - w_z(z*+) for (upper, lower); (+q lam e^{-gamma t}, -q lam e^{-gamma t})."""
        if self.corner is None:
            return 0.0, 0.0
        j = self.q * self.lam * math.exp(-self.gamma * t)
        return j, -j


def _check_q(q, kp: KappaParams, weight: str):
    if not q > 0:
        raise ParameterOutOfBudget("q must be positive")
    if weight == "eta" and q > min(kp.q_star_plus, kp.q_star_minus) * (1 + 1e-12):
        raise ParameterOutOfBudget(f"q={q} exceeds min(q*, q_*)={min(kp.q_star_plus, kp.q_star_minus):.6g}")


def build_sttg_envelope(profile: WaveProfile, lam: float, gamma: float, kp: KappaParams, q: float, weight: str = "eta", check: bool = True) -> Envelope:
    """phi +/- q e^{-gamma t} eta_lam(z - b).  With ``check=False`` no budget is enforced
    (used to build deliberately inadmissible envelopes)."""
    if weight not in ("eta", "xi"):
        raise DomainError(f"unknown weight {weight!r}")
    c, h = profile.c, profile.h
    if check:
        if abs(kp.lg - kp.gp0) > 1e-9 * kp.gp0:
            raise ParameterOutOfBudget("the sttg envelope needs L_g = g'(0)")
        roots = dispersion.char_roots(c, h, kp.gp0)
        tol = 1e-9 * max(1.0, roots.lambda2)
        if not (roots.lambda1 - tol <= lam < roots.lambda2) or (lam > roots.lambda1 + tol and roots.near_critical):
            raise ParameterOutOfBudget(f"lambda={lam} outside [lambda1, lambda2) = [{roots.lambda1:.6g}, {roots.lambda2:.6g})")
        gmax = dispersion.gamma_max(c, min(max(lam, roots.lambda1), roots.lambda2), h, kp.gp0)
        if gamma < 0 or gamma > gmax * (1 + 1e-12) + 1e-15:
            raise ParameterOutOfBudget(f"gamma={gamma} exceeds gamma_max={gmax:.6g}")
        if gamma > 0 and gamma >= kp.gamma_star:
            raise ParameterOutOfBudget(f"gamma={gamma} is not below gamma*={kp.gamma_star:.6g}")
        _check_q(q, kp, weight)
    return Envelope("sttg", profile, float(q), float(gamma), float(lam), float(kp.b), float(h), weight)


def uls_gamma_cap(profile: WaveProfile, kp: KappaParams) -> float:
    lam1 = profile.lambda1
    return min(kp.gamma_star, (kp.gp0 - 1.0) * math.exp(-lam1 * profile.c * profile.h) * min(1.0, 1.0 / lam1))


def build_uls_envelope(profile: WaveProfile, kp: KappaParams, q: float, gamma_cap: Optional[float] = None, c_star: Optional[float] = None, gamma: Optional[float] = None) -> Envelope:
    """phi(z +/- eps_pm(t)) +/- q e^{-gamma t} eta_1(z) with d, alpha from the profile.

    gamma defaults to 99% of min(lemma cap, gamma_cap).  c_star defaults to
    the critical speed (valid when L_g = g'(0)).
    """
    c, h = profile.c, profile.h
    if c_star is None:
        c_star = dispersion.critical_speed(h, kp.gp0)[0]
    if not c > c_star:
        raise ParameterOutOfBudget(f"the uls envelope needs c > c_* = {c_star:.6g}")
    _check_q(q, kp, "eta")
    lam1 = profile.lambda1
    cap = uls_gamma_cap(profile, kp)
    if gamma_cap is not None:
        cap = min(cap, gamma_cap)
    if gamma is None:
        gamma = 0.99 * cap
    elif not 0 < gamma < cap:
        raise ParameterOutOfBudget(f"gamma={gamma} not in (0, {cap:.6g})")
    z, v = profile.z, profile.values
    dphi = (v[2:] - v[:-2]) / (2 * profile.dx)
    zi = z[1:-1]
    sel = zi <= kp.b
    sel[:2] = False  # Dirichlet boundary layer
    ratio = dphi[sel] / eta(zi[sel], lam1)
    d = float(np.min(ratio)) if ratio.size else 0.0
    if not d > 0.0:
        raise DegenerateProfile(f"inf phi'/eta_1 over z <= b is {d:.3e}")
    alpha = math.exp(gamma * h) * kp.lg / d
    return Envelope("uls", profile, float(q), float(gamma), float(lam1), float(kp.b), float(h), "eta", alpha=alpha, d=d)


# ------------------------------------------------------------------ certification


@dataclass
class ResidualCertificate:
    rows: List[tuple]
    min_upper: float
    max_lower: float
    argmin_upper: tuple
    argmax_lower: tuple
    jumps: List[tuple]
    tol: float
    upper_passed: bool
    lower_passed: bool
    jumps_passed: bool

    @property
    def passed(self) -> bool:
        return self.upper_passed and self.lower_passed and self.jumps_passed


def _one_sided(f, z0, hs, side):
    """Fourth-order one-sided first derivative; side=-1 uses points left of z0."""
    pts = z0 + side * hs * np.arange(5)
    v = f(pts)
    coef = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12.0 * hs)
    return side * float(np.dot(coef, v))


def _residual(env, g, c, h, t, z, upper: bool):
    dx = env.profile.dx
    w = env.upper if upper else env.lower
    wt = env.upper_t if upper else env.lower_t
    w0, wp, wm = w(t, z), w(t, z + dx), w(t, z - dx)
    d2 = (wp - 2 * w0 + wm) / dx**2
    d1 = (wp - wm) / (2 * dx)
    delayed = g(w(t - h, z - c * h))
    return wt(t, z) - d2 + c * d1 + w0 - delayed


def _default_samples(env, t, upper: bool, pad: int):
    z = env.profile.z
    nodes = z[pad:-1]
    if env.kind == "uls":
        nodes = nodes - (env.eps_plus(t) if upper else -env.eps_minus(t))
    if env.corner is not None:
        nodes = nodes[np.abs(nodes - env.corner) >= env.profile.dx * (1 - 1e-9)]
    return nodes


def certify(envelope: Envelope, g, c: float, h: float, t_samples: Sequence[float], z_samples=None, tol: Optional[float] = None, keep_rows: bool = True) -> ResidualCertificate:
    """Evaluate N w_+ >= -tol and N w_- <= tol off the corner, and the corner jumps.

    Default z samples are the profile nodes (shifted by -eps(t) for uls so
    phi is read at nodes), skipping the left boundary layer and a
    dx-neighbourhood of the corner.
    """
    tol = 1e-8 * (1.0 + envelope.profile.kappa) if tol is None else tol
    prof = envelope.profile
    pad = int(math.ceil(c * h / prof.dx)) + 3
    rows = []
    min_up, max_lo = np.inf, -np.inf
    arg_up = arg_lo = (float("nan"), float("nan"))
    jumps = []
    jumps_ok = True
    for t in t_samples:
        for upper in (True, False):
            if z_samples is None:
                zs = _default_samples(envelope, t, upper, pad)
            else:
                zs = np.asarray(z_samples, dtype=float)
                if envelope.corner is not None:
                    zs = zs[np.abs(zs - envelope.corner) >= prof.dx * (1 - 1e-9)]
            r = _residual(envelope, g, c, h, t, zs, upper)
            if upper:
                i = int(np.argmin(r))
                if r[i] < min_up:
                    min_up, arg_up = float(r[i]), (float(t), float(zs[i]))
            else:
                i = int(np.argmax(r))
                if r[i] > max_lo:
                    max_lo, arg_lo = float(r[i]), (float(t), float(zs[i]))
            if keep_rows:
                side = "upper" if upper else "lower"
                rows.extend((envelope.kind, float(t), float(zz), float(rr), side) for zz, rr in zip(zs, r))
        if envelope.corner is not None:
            zc = envelope.corner
            hs = prof.dx / 4.0
            ja, jl = envelope.corner_jump(t)
            fu = lambda zz: envelope.upper(t, zz, smooth=True)
            fl = lambda zz: envelope.lower(t, zz, smooth=True)
            nu = _one_sided(fu, zc, hs, -1) - _one_sided(fu, zc, hs, +1)
            nl = _one_sided(fl, zc, hs, -1) - _one_sided(fl, zc, hs, +1)
            ok = ja > 0 and jl < 0 and nu > 0 and nl < 0
            jumps_ok = jumps_ok and ok
            jumps.append((float(t), ja, jl, nu, nl))
    return ResidualCertificate(
        rows=rows,
        min_upper=float(min_up),
        max_lower=float(max_lo),
        argmin_upper=arg_up,
        argmax_lower=arg_lo,
        jumps=jumps,
        tol=tol,
        upper_passed=bool(min_up >= -tol),
        lower_passed=bool(max_lo <= tol),
        jumps_passed=jumps_ok,
    )


# ------------------------------------------------------------------ squeeze


@dataclass
class SqueezeReport:
    max_violation: float
    allowance: float
    passed: bool
    worst_time: float
    worst_z: float


def squeeze_check(traj, envelope: Envelope, allowance: Optional[float] = None, init_tol: Optional[float] = None) -> SqueezeReport:
    """Max violation of w_- <= w <= w_+ over all snapshots of a co-moving trajectory."""
    z = traj.grid.x
    allowance = 1e-3 * envelope.q if allowance is None else allowance
    init_tol = 1e-12 * (1.0 + envelope.profile.kappa) if init_tol is None else init_tol
    hist = traj.initial_history
    m = hist.shape[0] - 1
    for j in range(m + 1):
        s = -traj.h + j * traj.dt if m > 0 else 0.0
        w = hist[j]
        if np.any(w > envelope.upper(s, z) + init_tol) or np.any(w < envelope.lower(s, z) - init_tol):
            raise InitialDataOutsideEnvelope(f"initial history leaves the envelope at s={s:.4g}")
    worst, wt, wz = 0.0, 0.0, float("nan")
    for t, u in zip(traj.times, traj.fields):
        viol = np.maximum(u - envelope.upper(t, z), envelope.lower(t, z) - u)
        i = int(np.argmax(viol))
        if viol[i] > worst:
            worst, wt, wz = float(viol[i]), float(t), float(z[i])
    return SqueezeReport(worst, allowance, worst <= allowance, wt, wz)


# ------------------------------------------------------------------ monotone evolution


def static_residual(w, dx: float, c: float, h: float, g, ext_rate: float = 0.0) -> np.ndarray:
    """N w for a time-independent nodal field (interior nodes)."""
    return -profile_defect(w, dx, c, h, g, ext_rate)


@dataclass
class MonotoneEvolutionReport:
    side: str
    max_increase: float
    tol: float
    passed: bool
    n_comparisons: int
    min_static_residual: float
    final_distance_to_kappa: float


def plateau_supersolution(profile: WaveProfile, z, delta: float, q: float, lam: float, cap: float):
    """min{cap, phi(z + delta) + q exp(lam z)}."""
    z = np.asarray(z, dtype=float)
    return np.minimum(cap, profile(z + delta) + q * np.exp(lam * z))


def monotone_evolution_check(
    w_initial,
    grid: Grid1D,
    config: SolverConfig,
    g,
    h: float,
    side: str = "super",
    tol: float = 1e-10,
    residual_tol: Optional[float] = None,
) -> MonotoneEvolutionReport:
    """Simulate from a static super- (sub-) solution and check monotone decrease (increase).

    The ends are held at the initial values (Dirichlet).  The static field
    must certify first; otherwise CertificationFailed.
    """
    if side not in ("super", "sub"):
        raise DomainError("side must be 'super' or 'sub'")
    w = np.asarray(w_initial, dtype=float)
    c = config.speed
    residual_tol = 1e-8 * (1.0 + g.kappa) if residual_tol is None else residual_tol
    res = static_residual(w, grid.dx, c, h, g, ext_rate=0.0)
    sign = 1.0 if side == "super" else -1.0
    worst_res = float(np.min(sign * res))
    if worst_res < -residual_tol:
        raise CertificationFailed(f"static field is not a {side}-solution (residual {worst_res:.3e})")
    bc = Boundary("dirichlet", float(w[0]), right="dirichlet", right_value=float(w[-1]))
    cfg = SolverConfig(
        dt=config.dt,
        t_end=config.t_end,
        frame=config.frame,
        c=config.c,
        boundary=bc,
        snapshot_every=config.snapshot_every,
        blowup_threshold=config.blowup_threshold,
        advection=config.advection,
    )
    state = init_history(Sampled(w), grid, h, config.dt)
    traj = simulate(state, cfg, g)
    worst = 0.0
    for a, b in zip(traj.fields[:-1], traj.fields[1:]):
        inc = float(np.max(sign * (b - a)))
        worst = max(worst, inc)
    final = traj.fields[-1]
    return MonotoneEvolutionReport(
        side=side,
        max_increase=worst,
        tol=tol,
        passed=worst <= tol,
        n_comparisons=len(traj.fields) - 1,
        min_static_residual=worst_res,
        final_distance_to_kappa=float(np.max(np.abs(final[grid.x > 0] - g.kappa))) if np.any(grid.x > 0) else float("nan"),
    )


# ------------------------------------------------------------------ stability radius


def stability_radius(epsilon: float, gamma: float, alpha: float, lambda1: float, kp: KappaParams, profile: WaveProfile, h: Optional[float] = None) -> float:
    """Size of initial lambda1-weighted perturbations that stay below epsilon for all t."""
    if min(epsilon, gamma, alpha, lambda1) <= 0:
        raise DomainError("all parameters must be positive")
    h = profile.h if h is None else h
    eg = math.exp(gamma * h)
    C1 = alpha * eg / gamma
    C2 = math.exp(lambda1 * alpha * eg)
    C = max(C1, C2)
    s0 = min(gamma, min(kp.q_star_minus, kp.q_star_plus) * math.exp(-lambda1 * alpha * eg))
    z, v = profile.z, profile.values
    dphi = np.gradient(v, profile.dx)
    sup = float(np.max(dphi / eta(z, lambda1)))
    return float(min(s0, epsilon / (C * (1.0 + math.exp(lambda1 * C * s0) * sup))))
