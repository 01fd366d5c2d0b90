"""Front profiles and measurements on simulated fields.

Profiles are computed in two stages: relaxation of the co-moving equation
(with periodic integer-cell re-pinning so the front stays centred) followed
by a Newton solve of the discrete stationary problem with Dirichlet ends.
The discrete stationary problem is the exact steady state of the solver's
scheme, so a profile defect is a statement about that discretization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import spsolve

from . import dispersion
from .errors import (
    DomainError,
    InsufficientData,
    NoConvergence,
    NoCrossing,
    NoMinimumInBracket,
    NonPositiveField,
    NonPositiveValues,
    NoRealRoots,
    SpeedMismatch,
    TailFitUnreliable,
)
from .solver import Boundary, Grid1D, Sampled, SolverConfig, Stepper, init_history

TAIL_LO = 1e-8
TAIL_HI = 1e-3


# ------------------------------------------------------------------ tails


def fit_tail(u, x, window: Tuple[float, float]) -> Tuple[float, float, float]:
    """OLS of ln u on x over ``window``; returns (lambda, A, r_squared)."""
    u = np.asarray(u, dtype=float)
    x = np.asarray(x, dtype=float)
    sel = (x >= window[0]) & (x <= window[1])
    if np.count_nonzero(sel) < 3:
        raise InsufficientData(f"fewer than 3 nodes in tail window {window}")
    us, xs = u[sel], x[sel]
    if np.any(us <= 0.0):
        raise NonPositiveField("field must be strictly positive on the tail window")
    y = np.log(us)
    slope, intercept = np.polyfit(xs, y, 1)
    resid = y - (slope * xs + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(math.exp(intercept)), r2


def default_tail_window(x, u, kappa: float, lo: float = TAIL_LO, hi: float = TAIL_HI) -> Tuple[float, float]:
    """Left-tail window where lo*kappa <= u <= hi*kappa, left of the first kappa/2 crossing."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    above = np.nonzero(u >= 0.5 * kappa)[0]
    end = above[0] if above.size else u.size
    sel = np.nonzero((u[:end] >= lo * kappa) & (u[:end] <= hi * kappa))[0]
    if sel.size < 3:
        raise TailFitUnreliable("tail window holds fewer than 3 nodes")
    return float(x[sel[0]]), float(x[sel[-1]])


def tail_amplitude(u, x, lam: float, window) -> float:
    """Amplitude A of u ~ A exp(lam x) with lam fixed, geometric mean over the window."""
    sel = (x >= window[0]) & (x <= window[1])
    us = u[sel]
    if us.size == 0:
        raise InsufficientData("empty tail window")
    if np.any(us <= 0.0):
        raise NonPositiveField("field must be strictly positive on the tail window")
    return float(np.exp(np.mean(np.log(us) - lam * x[sel])))


# ------------------------------------------------------------------ profiles


@dataclass(frozen=True)
class TailFit:
    lambda_est: float
    A_est: float
    window: Tuple[float, float]
    r_squared: float


@dataclass(frozen=True)
class WaveProfile:
    z: np.ndarray
    values: np.ndarray
    c: float
    h: float
    kappa: float
    lambda1: Optional[float]
    pin_level: float
    ep_residual: float
    monotone: bool
    overshoot: float
    drift: float
    tail_fit: Optional[TailFit] = None
    shift: float = 0.0
    A_raw: Optional[float] = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def dx(self) -> float:
        return float(self.z[1] - self.z[0])

    @property
    def tail_rate(self) -> float:
        if self.lambda1 is not None:
            return self.lambda1
        return self.tail_fit.lambda_est if self.tail_fit is not None else 0.0

    def __call__(self, z):
        """Piecewise-linear interpolant with exponential left tail and flat right end."""
        z = np.asarray(z, dtype=float)
        out = np.interp(z, self.z, self.values)
        left = z < self.z[0]
        if np.any(left):
            out = np.where(left, self.values[0] * np.exp(self.tail_rate * (z - self.z[0])), out)
        return out

    def smooth(self, z, nu: int = 0):
        """Cubic-spline value or derivative, extended like ``__call__``."""
        cs = self.meta.get("_spline")
        if cs is None:
            cs = CubicSpline(self.z, self.values)
            self.meta["_spline"] = cs
        z = np.asarray(z, dtype=float)
        out = cs(np.clip(z, self.z[0], self.z[-1]), nu)
        left = z < self.z[0]
        if np.any(left):
            r = self.tail_rate
            out = np.where(left, self.values[0] * r**nu * np.exp(r * (z - self.z[0])), out)
        right = z > self.z[-1]
        if np.any(right) and nu > 0:
            out = np.where(right, 0.0, out)
        return out

    def derivative(self, z=None):
        """Centred difference of the nodal values (one-sided at the ends)."""
        return np.gradient(self.values, self.dx) if z is None else self.smooth(z, 1)

    def translated(self, a: float) -> "WaveProfile":
        """Profile of z -> phi(z + a), i.e. grid moved by -a."""
        return replace(self, z=self.z - a, shift=self.shift + a, meta={})


def ramp(z, kappa: float, rate: float):
    return kappa / (1.0 + np.exp(-rate * z))


def first_crossing(u, x, level: float) -> float:
    """Leftmost upward crossing of ``level`` by linear interpolation."""
    idx = np.nonzero(u >= level)[0]
    if idx.size == 0 or idx[0] == 0:
        raise NoCrossing(f"no crossing of level {level}")
    i = idx[0]
    u0, u1 = u[i - 1], u[i]
    return float(x[i - 1] + (level - u0) / (u1 - u0) * (x[i] - x[i - 1]))


def shift_matrix(n: int, k: int, theta: float, ext_rate: float, dx: float):
    """Sparse S with (S u)_i = u(z_i - ch) by linear interpolation; left tail
    extension u_0 exp(rate (z - z_0)) folds into column 0."""
    rows, cols, vals = [], [], []
    for i in range(n):
        for off, w in ((i - k, 1.0 - theta), (i - k - 1, theta)):
            if w == 0.0:
                continue
            if off >= 0:
                rows.append(i), cols.append(off), vals.append(w)
            else:
                rows.append(i), cols.append(0), vals.append(w * math.exp(ext_rate * off * dx))
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def profile_defect(values, dx: float, c: float, h: float, g, ext_rate: float) -> np.ndarray:
    """Centred-difference defect of phi'' - c phi' - phi + g(phi(z - ch)) at interior nodes."""
    v = np.asarray(values, dtype=float)
    n = v.size
    ratio = c * h / dx
    k = int(math.floor(ratio + 1e-12))
    theta = max(0.0, ratio - k)
    S = shift_matrix(n, k, theta, ext_rate, dx)
    delayed = g(S @ v)
    d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / dx**2
    d1 = (v[2:] - v[:-2]) / (2 * dx)
    return d2 - c * d1 - v[1:-1] + delayed[1:-1]


def _newton_profile(v0, dx, c, h, g, ext_rate, tol=None, max_iter=50):
    n = v0.size
    if tol is None:
        # round-off in the second difference grows like 1/dx^2
        tol = 4e-15 * max(1.0, float(np.max(np.abs(v0)))) / dx**2
    ratio = c * h / dx
    if abs(ratio - round(ratio)) < 1e-9:
        ratio = float(round(ratio))
    k = int(math.floor(ratio))
    theta = ratio - k
    S = shift_matrix(n, k, theta, ext_rate, dx)
    inv2 = 1.0 / dx**2
    lower = np.full(n - 1, inv2 + c / (2 * dx))
    diag = np.full(n, -2 * inv2 - 1.0)
    upper = np.full(n - 1, inv2 - c / (2 * dx))
    A = sparse.diags([lower, diag, upper], [-1, 0, 1], format="lil")
    A[0, :] = 0.0
    A[n - 1, :] = 0.0
    A = A.tocsr()
    interior = np.ones(n)
    interior[0] = interior[-1] = 0.0
    Dint = sparse.diags(interior)
    left_val, right_val = v0[0], v0[-1]
    v = v0.copy()
    extra = 0
    for it in range(max_iter):
        sv = S @ v
        F = A @ v + interior * g(sv)
        F[0] = v[0] - left_val
        F[-1] = v[-1] - right_val
        err = float(np.max(np.abs(F)))
        if err < tol:
            # a couple more quadratic steps bring the far tail to round-off
            # in relative terms, which weighted norms can see
            if extra == 2:
                return v, err, it
            extra += 1
        J = A + Dint @ sparse.diags(g.prime(sv)) @ S
        J = J.tolil()
        J[0, 0] = 1.0
        J[n - 1, n - 1] = 1.0
        dv = spsolve(J.tocsc(), -F)
        v = v + dv
        if not np.all(np.isfinite(v)):
            break
    raise NoConvergence(f"Newton polish did not converge (last defect {err:.3e})")


def default_profile_grid(c: float, h: float, g, dx: float = 0.05) -> Grid1D:
    """Window wide enough for the left tail to reach 1e-13 kappa and the right to settle."""
    try:
        lam = dispersion.char_roots(c, h, g.gp0).lambda1
    except NoRealRoots:
        lam = 1.0
    left = max(40.0, 30.0 / lam)
    return Grid1D.from_spacing(-left, 80.0, dx)


def _pin_shift(data: np.ndarray, s: int, ext_rate: float, dx: float, right_fill: float) -> None:
    """Translate every buffer slice by s cells in place: new[i] = old[i + s]."""
    if s == 0:
        return
    n = data.shape[1]
    if s > 0:
        data[:, : n - s] = data[:, s:].copy()
        data[:, n - s :] = right_fill
    else:
        s = -s
        data[:, s:] = data[:, : n - s].copy()
        offs = -dx * np.arange(s, 0, -1)
        data[:, :s] = data[:, s : s + 1] * np.exp(ext_rate * offs)[None, :]


def compute_profile(
    c: float,
    g,
    h: float,
    grid: Optional[Grid1D] = None,
    relax_time: float = 300.0,
    pin_level: Optional[float] = None,
    dt: float = 0.05,
    drift_tol: Optional[float] = None,
    ep_tol: Optional[float] = None,
) -> WaveProfile:
    """Front of speed c: relaxation of the co-moving equation, then Newton.

    The left boundary is Robin with the slow decay rate lambda1(c) (so the
    relaxed front travels at exactly c); below the critical speed, where no
    real rate exists, it is Dirichlet 0 and the persistent drift of the
    re-pinned front raises SpeedMismatch.
    """
    kappa = g.kappa
    pin_level = 0.5 * kappa if pin_level is None else pin_level
    grid = grid or default_profile_grid(c, h, g)
    dx = grid.dx
    drift_tol = 0.02 * max(1.0, abs(c)) if drift_tol is None else drift_tol
    ep_tol = 1e-6 * kappa if ep_tol is None else ep_tol
    try:
        roots = dispersion.char_roots(c, h, g.gp0)
        lam1 = roots.lambda1
        bc = Boundary("robin", left_rate=lam1, right="dirichlet", right_value=kappa)
    except NoRealRoots:
        lam1 = None
        bc = Boundary("dirichlet", 0.0, right="dirichlet", right_value=kappa)
    z = grid.x
    rate0 = lam1 if lam1 is not None else 1.0
    state = init_history(Sampled(ramp(z, kappa, rate0)), grid, h, dt)
    cfg = SolverConfig(dt=state.dt, t_end=0.0, frame="comoving", c=c, boundary=bc, advection="auto")
    stepper = Stepper(state, cfg, g)
    ext = bc.extension_rate
    per_pin = max(1, int(round(1.0 / state.dt)))
    n_pins = max(1, int(round(relax_time / (per_pin * state.dt))))
    total_shift = 0.0
    shifts = []
    prev = state.current.copy()
    change = np.inf
    for p in range(n_pins):
        for _ in range(per_pin):
            stepper.advance(state)
        zc = first_crossing(state.current, z, pin_level)
        s = int(round(zc / dx))
        _pin_shift(state.data, s, ext, dx, kappa)
        total_shift += s * dx
        shifts.append(s * dx)
        cur = state.current
        change = float(np.max(np.abs(cur - prev)))
        prev = cur.copy()
        if p > 20 and change < 1e-10:
            break
    elapsed = len(shifts) * per_pin * state.dt
    tail = shifts[len(shifts) // 2 :]
    drift = float(np.sum(tail) / (len(tail) * per_pin * state.dt)) if tail else 0.0
    if abs(drift) > drift_tol:
        raise SpeedMismatch(f"pinned front drifts at {drift:.4f} per unit time: no front of speed {c}")
    v, err, _ = _newton_profile(state.current.copy(), dx, c, h, g, ext)
    defect = profile_defect(v, dx, c, h, g, ext)
    ep_residual = float(np.max(np.abs(defect)))
    if ep_residual > ep_tol:
        raise NoConvergence(f"profile defect {ep_residual:.3e} exceeds {ep_tol:.3e}")
    zc = first_crossing(v, z, pin_level)
    zz = z - zc
    dv = np.diff(v)
    prof = WaveProfile(
        z=zz,
        values=v,
        c=float(c),
        h=float(h),
        kappa=kappa,
        lambda1=lam1,
        pin_level=pin_level,
        ep_residual=ep_residual,
        monotone=bool(np.all(dv >= -1e-9)),
        overshoot=float(np.max(v) - kappa),
        drift=drift,
        meta={"relax_time": elapsed, "last_change": change, "ext_rate": ext},
    )
    try:
        win = default_tail_window(zz, v, kappa)
        lam_est, A_est, r2 = fit_tail(v, zz, win)
        prof = replace(prof, tail_fit=TailFit(lam_est, A_est, win, r2))
    except (TailFitUnreliable, InsufficientData, NonPositiveField):
        pass
    return prof


def profile_overshoot(profile: WaveProfile) -> dict:
    """Oscillation diagnostics around kappa: max excess, min after the peak, sign changes."""
    v, k = profile.values, profile.kappa
    i = int(np.argmax(v))
    after = v[i:]
    dev = v - k
    sig = np.sign(dev[np.abs(dev) > 1e-9 * k])
    crossings = int(np.count_nonzero(np.diff(sig) != 0))
    return {
        "overshoot": float(v[i] - k),
        "z_peak": float(profile.z[i]),
        "undershoot_after_peak": float(k - np.min(after)),
        "kappa_crossings": crossings,
        "monotone": profile.monotone,
    }


def normalize_profile(profile: WaveProfile, min_decades: float = 3.0, min_r2: float = 0.999) -> Tuple[WaveProfile, float]:
    """Translate so that phi(z) ~ exp(lambda1 z) at -infinity; returns (profile, A_raw).

    The amplitude is the geometric mean of phi exp(-lambda1 z) over the tail
    window, with lambda1 fixed at the characteristic root.
    """
    lam1 = profile.lambda1
    if lam1 is None:
        raise TailFitUnreliable("profile has no characteristic decay rate")
    win = default_tail_window(profile.z, profile.values, profile.kappa)
    lam_est, _, r2 = fit_tail(profile.values, profile.z, win)
    sel = (profile.z >= win[0]) & (profile.z <= win[1])
    vs = profile.values[sel]
    decades = math.log10(vs.max() / vs.min())
    if decades < min_decades or r2 < min_r2:
        raise TailFitUnreliable(f"tail window spans {decades:.2f} decades with R^2={r2:.6f}")
    if abs(lam_est / lam1 - 1.0) > 0.05:
        raise TailFitUnreliable(f"fitted tail rate {lam_est:.4f} is not within 5% of lambda1={lam1:.4f}")
    A_raw = tail_amplitude(profile.values, profile.z, lam1, win)
    a = -math.log(A_raw) / lam1
    out = profile.translated(a)
    out = replace(out, A_raw=A_raw if profile.A_raw is None else profile.A_raw * A_raw)
    return out, A_raw


# ------------------------------------------------------------------ tracking


@dataclass
class FrontTrack:
    times: np.ndarray
    positions: np.ndarray
    c_est: float
    fit_residual: float
    window: Tuple[float, float]
    skipped: int = 0
    running: np.ndarray = field(default_factory=lambda: np.zeros(0))


def track_front(traj, level: float, fraction: float = 0.5, min_samples: int = 10) -> FrontTrack:
    """Leftmost crossing of ``level`` per snapshot; speed from the trailing ``fraction``.

    For the lab frame the front moves toward -x, so c_est = -slope; in the
    co-moving frame the measured value is the frame speed minus the drift.
    """
    x = traj.grid.x
    ts, ps = [], []
    skipped = 0
    for t, u in zip(traj.times, traj.fields):
        try:
            ps.append(first_crossing(u, x, level))
            ts.append(t)
        except NoCrossing:
            skipped += 1
    ts, ps = np.asarray(ts), np.asarray(ps)
    if ts.size < min_samples:
        raise NoCrossing(f"only {ts.size} snapshots cross level {level}")
    k = int(ts.size * (1.0 - fraction))
    k = min(k, ts.size - min_samples)
    tt, pp = ts[k:], ps[k:]
    slope, icpt = np.polyfit(tt, pp, 1)
    resid = float(np.sqrt(np.mean((pp - (slope * tt + icpt)) ** 2)))
    c_est = traj.c - slope
    running = np.full(ts.size, np.nan)
    for j in range(2, ts.size):
        lo = j // 2
        if j - lo >= 2:
            running[j] = traj.c - np.polyfit(ts[lo : j + 1], ps[lo : j + 1], 1)[0]
    return FrontTrack(ts, ps, float(c_est), resid, (float(tt[0]), float(tt[-1])), skipped, running)


# ------------------------------------------------------------------ norms


def eta(z, lam: float):
    """min{exp(lam z), 1}."""
    z = np.asarray(z, dtype=float)
    return np.exp(lam * np.minimum(z, 0.0))


def weighted_norm(diff, z, lam: float, origin_shift: float = 0.0) -> Tuple[float, float]:
    """sup |diff| / eta_lam(z - origin_shift) over the nodes, and where it is attained."""
    if lam < 0:
        raise DomainError("lambda must be nonnegative")
    diff = np.abs(np.asarray(diff, dtype=float))
    z = np.asarray(z, dtype=float)
    w = diff * np.exp(np.maximum(-lam * (z - origin_shift), 0.0))
    i = int(np.argmax(w))
    return float(w[i]), float(z[i])


def norm_window(profile, lam: float, origin_shift: float = 0.0, limit: float = 1e6) -> float:
    """Left end of the window where phi / eta_lam(z - origin) <= limit * kappa.

    Further left, relative round-off in the tail of any field close to phi is
    amplified past the size of the perturbations being measured.
    """
    ratio = profile.values * np.exp(np.maximum(-lam * (profile.z - origin_shift), 0.0))
    ok = np.nonzero(ratio <= limit * profile.kappa)[0]
    return float(profile.z[ok[0]]) if ok.size else float(profile.z[0])


def xi_norm(diff, z, lam: float) -> Tuple[float, float]:
    """sup |diff| exp(-lam z)."""
    w = np.abs(np.asarray(diff, dtype=float)) * np.exp(-lam * np.asarray(z, dtype=float))
    i = int(np.argmax(w))
    return float(w[i]), float(z[i])


def chen_guo_norm(u, phi, guard: float = 1e-300, return_excluded: bool = False):
    """sup |u / phi - 1| over nodes with phi >= guard."""
    u = np.asarray(u, dtype=float)
    phi = np.asarray(phi, dtype=float)
    ok = phi >= guard
    val = float(np.max(np.abs(u[ok] / phi[ok] - 1.0))) if np.any(ok) else 0.0
    if return_excluded:
        return val, int(np.count_nonzero(~ok))
    return val


def align_shift(u, z, profile, lam: float, bracket: Tuple[float, float] = (-20.0, 20.0), origin_shift: float = 0.0, n_scan: int = 81) -> float:
    """Shift a minimizing |u - phi(. + a)|_lam over a in ``bracket``."""
    z = np.asarray(z, dtype=float)

    def obj(a):
        return weighted_norm(u - profile(z + a), z, lam, origin_shift)[0]

    grid = np.linspace(bracket[0], bracket[1], n_scan)
    vals = np.array([obj(a) for a in grid])
    j = int(np.argmin(vals))
    if j == 0 or j == n_scan - 1:
        raise NoMinimumInBracket(f"objective minimal at bracket edge a={grid[j]}")
    res = minimize_scalar(obj, bounds=(grid[j - 1], grid[j + 1]), method="bounded", options={"xatol": 1e-7})
    return float(res.x)


@dataclass
class NormSeries:
    times: np.ndarray
    values: np.ndarray
    kind: str
    lam: float
    shift: float = 0.0


def convergence_rate(series, transient: float = 0.3, floor: Optional[float] = None, min_samples: int = 10) -> Tuple[float, float]:
    """Least-squares slope of -ln(value) against t after the transient cut.

    ``series`` is a NormSeries or a (times, values) pair.  With ``floor``,
    the series is truncated at its first value below the floor.
    """
    if isinstance(series, NormSeries):
        t, v = series.times, series.values
    else:
        t, v = series
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    k = int(round(transient * t.size))
    t, v = t[k:], v[k:]
    if floor is not None:
        below = np.nonzero(v < floor)[0]
        if below.size:
            t, v = t[: below[0]], v[: below[0]]
    if t.size < min_samples:
        raise InsufficientData(f"{t.size} samples after the transient cut, need {min_samples}")
    if np.any(v <= 0.0):
        raise NonPositiveValues("norm series has nonpositive values")
    y = -np.log(v)
    slope, icpt = np.polyfit(t, y, 1)
    resid = y - (slope * t + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return float(slope), r2


def is_monotone_decreasing(values, rel_tol: float = 1e-9) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) <= rel_tol * np.maximum(np.abs(v[:-1]), 1e-300)))


@dataclass
class TailInvarianceReport:
    times: np.ndarray
    amplitudes: np.ndarray
    slope: float
    target: float
    rel_error: float
    insufficient_data: bool


def tail_invariance_check(traj, lambda_j: float, c: float, window: Tuple[float, float]) -> TailInvarianceReport:
    """Fit A(t) in u(t, x) ~ A(t) exp(lambda_j x) on a lab-frame window; compare d ln A/dt with lambda_j c."""
    x = traj.grid.x
    u0 = traj.fields[0]
    lam0, _, r2 = fit_tail(u0, x, window)
    if abs(lam0 / lambda_j - 1.0) > 0.05 or r2 < 0.999:
        raise TailFitUnreliable(f"initial tail rate {lam0:.4f} does not match lambda_j={lambda_j:.4f}")
    ts = np.asarray(traj.times)
    amps = np.array([tail_amplitude(u, x, lambda_j, window) for u in traj.fields])
    target = lambda_j * c
    if ts.size < 2:
        return TailInvarianceReport(ts, amps, float("nan"), target, float("nan"), True)
    slope = float(np.polyfit(ts, np.log(amps), 1)[0])
    return TailInvarianceReport(ts, amps, slope, target, abs(slope / target - 1.0), False)
