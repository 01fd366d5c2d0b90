"""IMEX time stepping for u_t = u_xx - u + g(u(t-h, x)) on a truncated line.

The linear part (diffusion, decay and, in the co-moving frame z = x + ct,
the advection -c w_z) is treated by Crank-Nicolson with a tridiagonal
LAPACK solve.  The delayed reaction is explicit: it reads the buffer slice
exactly m = h/dt steps back, shifted by ch in the co-moving frame.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.linalg import lapack

from .errors import BlowUp, DomainError, NumericalFailure


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if self.n < 3 or not self.x_max > self.x_min:
            raise DomainError(f"invalid grid [{self.x_min}, {self.x_max}] with n={self.n}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n)

    @classmethod
    def from_spacing(cls, x_min: float, x_max: float, dx: float) -> "Grid1D":
        n = int(round((x_max - x_min) / dx)) + 1
        return cls(x_min, x_min + (n - 1) * dx, n)


def snap_grid(x_min: float, x_max: float, dx: float, shift: float) -> Grid1D:
    """Grid whose spacing divides ``shift`` (= ch) exactly, closest to ``dx``.

    With this spacing the co-moving delayed term reads grid values only and
    no spatial interpolation enters the scheme.
    """
    if shift <= 0:
        return Grid1D.from_spacing(x_min, x_max, dx)
    k = max(1, int(round(shift / dx)))
    return Grid1D.from_spacing(x_min, x_max, shift / k)


@dataclass(frozen=True)
class Boundary:
    """Boundary conditions.

    left: "dirichlet" (u = left_value) or "robin" (u_x = left_rate * u; rate 0
    is homogeneous Neumann).  right: "dirichlet" (u = right_value) or
    "neumann" (u_x = 0).  ``left_extension_rate`` controls how the delayed
    field is continued to the left of the grid when the co-moving shift ch
    reaches past x_min: u0 * exp(rate * (z - x_min)); None uses the Robin rate.
    """

    left: str = "dirichlet"
    left_value: float = 0.0
    left_rate: float = 0.0
    right: str = "neumann"
    right_value: float = 0.0
    left_extension_rate: Optional[float] = None

    def __post_init__(self):
        if self.left not in ("dirichlet", "robin"):
            raise DomainError(f"unknown left boundary {self.left!r}")
        if self.right not in ("dirichlet", "neumann"):
            raise DomainError(f"unknown right boundary {self.right!r}")

    @property
    def extension_rate(self) -> float:
        if self.left_extension_rate is not None:
            return self.left_extension_rate
        return self.left_rate if self.left == "robin" else 0.0


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_end: float
    frame: str = "lab"
    c: float = 0.0
    boundary: Boundary = field(default_factory=Boundary)
    snapshot_every: int = 100
    blowup_threshold: Optional[float] = None
    advection: str = "auto"  # centered | upwind | auto

    def __post_init__(self):
        if not self.dt > 0 or self.t_end < 0:
            raise DomainError("need dt > 0 and t_end >= 0")
        if self.frame not in ("lab", "comoving"):
            raise DomainError(f"unknown frame {self.frame!r}")
        if self.advection not in ("centered", "upwind", "auto"):
            raise DomainError(f"unknown advection scheme {self.advection!r}")
        if self.snapshot_every < 1:
            raise DomainError("snapshot_every must be >= 1")

    @property
    def speed(self) -> float:
        return self.c if self.frame == "comoving" else 0.0


def delay_steps(h: float, dt: float) -> tuple:
    """(m, dt_eff) with m dt_eff = h exactly; for h = 0, m = 0 and dt is kept."""
    if h < 0 or not dt > 0:
        raise DomainError("need h >= 0 and dt > 0")
    if h == 0:
        return 0, float(dt)
    m = max(1, int(round(h / dt)))
    return m, h / m


# ---------------------------------------------------------------- builders


@dataclass(frozen=True)
class ExponentialTail:
    """w0(s, x) = min{A exp(lam (x + c s)), cap}."""

    A: float
    lam: float
    c: float
    cap: float

    def __call__(self, s, x):
        return np.minimum(self.A * np.exp(self.lam * (x + self.c * s)), self.cap)


@dataclass(frozen=True)
class Heaviside:
    level: float
    x0: float = 0.0

    def __call__(self, s, x):
        return np.where(x >= self.x0, self.level, 0.0)


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, s, x):
        return np.full_like(np.asarray(x, dtype=float), self.value)


@dataclass(frozen=True)
class ProfilePlus:
    """phi(z) + perturbation(s, z); the profile is frozen in the co-moving frame."""

    profile: Callable
    perturbation: Optional[Callable] = None

    def __call__(self, s, x):
        base = self.profile(x)
        if self.perturbation is None:
            return base
        return base + self.perturbation(s, x)


@dataclass(frozen=True)
class Sampled:
    """A field given on the grid: shape (n,) (constant in s) or (m+1, n)."""

    values: np.ndarray

    def __call__(self, s, x):
        raise TypeError("Sampled fields are consumed directly by init_history")


@dataclass
class HistoryBuffer:
    """Ring of m+1 fields covering [t-h, t]; ``data[head]`` is the current field."""

    data: np.ndarray
    head: int
    t: float
    dt: float
    m: int
    grid: Grid1D
    h: float

    @property
    def current(self) -> np.ndarray:
        return self.data[self.head]

    @property
    def delayed(self) -> np.ndarray:
        """Field at time t - h."""
        return self.data[(self.head + 1) % (self.m + 1)]

    def ordered(self) -> np.ndarray:
        """History slices oldest first (times t-h, ..., t)."""
        idx = [(self.head + 1 + j) % (self.m + 1) for j in range(self.m + 1)]
        return self.data[idx]

    def copy(self) -> "HistoryBuffer":
        out = copy.copy(self)
        out.data = self.data.copy()
        return out


def init_history(builder, grid: Grid1D, h: float, dt: float) -> HistoryBuffer:
    """Fill the buffer with w0(s, x) for s = -h, -h + dt, ..., 0."""
    m, dt_eff = delay_steps(h, dt)
    x = grid.x
    if isinstance(builder, Sampled):
        vals = np.asarray(builder.values, dtype=float)
        if vals.ndim == 1:
            if vals.shape[0] != grid.n:
                raise DomainError(f"sampled field has {vals.shape[0]} nodes, grid has {grid.n}")
            data = np.tile(vals, (m + 1, 1))
        elif vals.shape == (m + 1, grid.n):
            data = vals.copy()
        else:
            raise DomainError(f"sampled history shape {vals.shape} does not match ({m + 1}, {grid.n})")
    else:
        s = -h + dt_eff * np.arange(m + 1)
        if m == 0:
            s = np.zeros(1)
        data = np.stack([np.broadcast_to(np.asarray(builder(sj, x), dtype=float), x.shape) for sj in s])
    if not np.all(np.isfinite(data)):
        raise DomainError("initial history is not finite")
    return HistoryBuffer(data=np.ascontiguousarray(data), head=m, t=0.0, dt=dt_eff, m=m, grid=grid, h=float(h))


# ---------------------------------------------------------------- stepping


def operator_diagonals(grid: Grid1D, c: float, boundary: Boundary, upwind: bool):
    """Tridiagonal (lower, diag, upper) of L u = u_zz - c u_z - u with boundary rows.

    Dirichlet rows are returned as zero rows; callers treat them separately.
    """
    n, dx = grid.n, grid.dx
    inv2 = 1.0 / dx**2
    lower = np.full(n - 1, inv2)
    diag = np.full(n, -2.0 * inv2 - 1.0)
    upper = np.full(n - 1, inv2)
    if c != 0.0:
        if upwind:
            # -c w_z with information moving toward +z for c > 0
            if c > 0:
                lower += c / dx
                diag -= c / dx
            else:
                upper -= c / dx
                diag += c / dx
        else:
            lower += c / (2 * dx)
            upper -= c / (2 * dx)
    beta = boundary.left_rate
    if boundary.left == "robin":
        upper[0] = 2.0 * inv2
        diag[0] = -2.0 * inv2 - 2.0 * beta / dx - c * beta - 1.0
    else:
        diag[0] = 0.0
        upper[0] = 0.0
    if boundary.right == "neumann":
        lower[-1] = 2.0 * inv2
        diag[-1] = -2.0 * inv2 - 1.0
    else:
        diag[-1] = 0.0
        lower[-1] = 0.0
    return lower, diag, upper


class Stepper:
    """Precomputed CN factorization and delay-shift data for one configuration.

    ``advance`` mutates the buffer in place; the public :func:`step` copies.
    """

    def __init__(self, state: HistoryBuffer, config: SolverConfig, g):
        self.config = config
        self.g = g
        self.grid = state.grid
        self.dt = state.dt
        self.m = state.m
        self.h = state.h
        grid, dt = self.grid, self.dt
        c = config.speed
        bc = config.boundary
        peclet = abs(c) * grid.dx / 2.0
        self.upwind = config.advection == "upwind" or (config.advection == "auto" and peclet > 1.0)
        lo, di, up = operator_diagonals(grid, c, bc, self.upwind)
        half = 0.5 * dt
        self.p_lower, self.p_diag, self.p_upper = half * lo, 1.0 + half * di, half * up
        m_lower, m_diag, m_upper = -half * lo, 1.0 - half * di, -half * up
        self.left_dirichlet = bc.left == "dirichlet"
        self.right_dirichlet = bc.right == "dirichlet"
        if self.left_dirichlet:
            m_diag[0], m_upper[0] = 1.0, 0.0
            self.p_diag[0], self.p_upper[0] = 0.0, 0.0
        if self.right_dirichlet:
            m_diag[-1], m_lower[-1] = 1.0, 0.0
            self.p_diag[-1], self.p_lower[-1] = 0.0, 0.0
        dl, d, du, du2, ipiv, info = lapack.dgttrf(m_lower, m_diag, m_upper)
        if info != 0:
            raise NumericalFailure(f"tridiagonal factorization failed (info={info})")
        self._lu = (dl, d, du, du2, ipiv)
        kappa = getattr(g, "kappa", 1.0)
        self.blowup = config.blowup_threshold if config.blowup_threshold is not None else 1e6 * max(1.0, kappa)
        # co-moving delay shift ch = k dx + theta dx
        self.shift = c * self.h if config.frame == "comoving" else 0.0
        if self.shift < 0:
            raise DomainError("negative co-moving shift is not supported")
        ratio = self.shift / grid.dx
        if abs(ratio - round(ratio)) < 1e-9:
            ratio = float(round(ratio))
        self.k = int(math.floor(ratio))
        self.theta = ratio - self.k
        self.ext_rate = bc.extension_rate
        self.ext_offsets = -grid.dx * np.arange(self.k + 1, 0, -1)
        lg = getattr(g, "lg", None)
        self.flags = {
            "cn_monotone": dt <= 1.0 / (1.0 / grid.dx**2 + 0.5),
            "peclet_ok": peclet <= 1.0 or self.upwind,
            "explicit_reaction_ok": lg is None or dt * lg <= 1.0,
            "upwind": self.upwind,
        }

    def shifted(self, u: np.ndarray) -> np.ndarray:
        """u(z - ch) by linear interpolation, with the left tail extension."""
        if self.shift == 0.0:
            return u
        n = u.shape[0]
        ext = u[0] * np.exp(self.ext_rate * self.ext_offsets) if self.ext_rate != 0.0 else np.full(self.k + 1, u[0])
        pad = np.concatenate([ext, u])
        th = self.theta
        return (1.0 - th) * pad[1 : n + 1] + th * pad[0:n]

    def delayed_term(self, state: HistoryBuffer) -> np.ndarray:
        return self.g(self.shifted(state.delayed))

    def advance(self, state: HistoryBuffer) -> None:
        u = state.current
        rhs = self.p_diag * u
        rhs[1:] += self.p_lower * u[:-1]
        rhs[:-1] += self.p_upper * u[1:]
        rhs += self.dt * self.delayed_term(state)
        bc = self.config.boundary
        if self.left_dirichlet:
            rhs[0] = bc.left_value
        if self.right_dirichlet:
            rhs[-1] = bc.right_value
        dl, d, du, du2, ipiv = self._lu
        new, info = lapack.dgttrs(dl, d, du, du2, ipiv, rhs)
        if info != 0:
            raise NumericalFailure(f"tridiagonal solve failed (info={info})")
        nxt = (state.head + 1) % (self.m + 1)
        state.data[nxt] = new
        state.head = nxt
        state.t += self.dt
        peak = np.max(np.abs(new))
        if not np.isfinite(peak):
            raise NumericalFailure(f"non-finite values at t={state.t:.6g}")
        if peak > self.blowup:
            raise BlowUp(f"max|u| = {peak:.3e} exceeds {self.blowup:.3e} at t={state.t:.6g}")


def step(state: HistoryBuffer, config: SolverConfig, g) -> HistoryBuffer:
    """One IMEX step, returning a new buffer (the input is left untouched)."""
    out = state.copy()
    Stepper(out, config, g).advance(out)
    return out


@dataclass
class Trajectory:
    times: List[float]
    fields: List[np.ndarray]
    grid: Grid1D
    frame: str
    c: float
    h: float
    dt: float
    initial_history: np.ndarray
    final: Optional[HistoryBuffer] = None
    diagnostics: List[dict] = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    failed: Optional[str] = None

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def as_arrays(self):
        return np.asarray(self.times), np.asarray(self.fields)


def _diag(u):
    return {"min": float(np.min(u)), "max": float(np.max(u)), "nan": bool(np.any(np.isnan(u)))}


def simulate(state: HistoryBuffer, config: SolverConfig, g, observers: Sequence[Callable] = ()) -> Trajectory:
    """Run to ``config.t_end`` (rounded to whole steps) recording snapshots.

    Observers are called as ``obs(t, field)`` with read-only views.  On
    failure the raised error carries the partial trajectory.
    """
    state = state.copy()
    stepper = Stepper(state, config, g)
    traj = Trajectory(
        times=[],
        fields=[],
        grid=state.grid,
        frame=config.frame,
        c=config.speed,
        h=state.h,
        dt=state.dt,
        initial_history=state.ordered(),
        flags=dict(stepper.flags),
    )

    def record():
        u = state.current.copy()
        u.setflags(write=False)
        traj.times.append(state.t)
        traj.fields.append(u)
        traj.diagnostics.append(_diag(u))
        for obs in observers:
            obs(state.t, u)

    record()
    n_steps = int(round(config.t_end / state.dt))
    t0 = state.t
    try:
        for i in range(1, n_steps + 1):
            stepper.advance(state)
            state.t = t0 + i * state.dt  # avoid accumulating round-off in t
            if i % config.snapshot_every == 0 or i == n_steps:
                record()
    except NumericalFailure as err:
        traj.failed = str(err)
        traj.final = state
        err.trajectory = traj
        raise
    traj.final = state
    return traj


def scalar_reference(v0_history: Sequence[float], g, h: float, dt: float, n_steps: int) -> np.ndarray:
    """Matched scalar scheme for u' = -u + g(u(t-h)).

    (1 + dt/2) u_{j+1} = (1 - dt/2) u_j + dt g(u_{j-m}); returns u_0..u_n.
    ``v0_history`` holds the m+1 values at s = -h, ..., 0.
    """
    m, dt = delay_steps(h, dt)
    hist = list(np.asarray(v0_history, dtype=float).ravel())
    if len(hist) != m + 1:
        raise DomainError(f"need {m + 1} history values, got {len(hist)}")
    out = [hist[-1]]
    a, b = 1.0 - 0.5 * dt, 1.0 + 0.5 * dt
    for _ in range(n_steps):
        delayed = hist[-(m + 1)]
        new = (a * hist[-1] + dt * float(g(np.array(delayed)))) / b
        hist.append(new)
        out.append(new)
    return np.array(out)


def to_comoving(field_lab: np.ndarray, x: np.ndarray, t: float, c: float, z: np.ndarray) -> np.ndarray:
    """Resample a lab-frame field at x = z - c t (linear interpolation)."""
    return np.interp(np.asarray(z) - c * t, x, field_lab)


def write_snapshots(traj: Trajectory, path) -> None:
    """CSV with header t,x,u, one row per (snapshot, node), 17 significant digits."""
    x = traj.x
    with open(path, "w") as fh:
        fh.write("t,x,u\n")
        for t, u in zip(traj.times, traj.fields):
            block = np.column_stack([np.full_like(x, t), x, u])
            np.savetxt(fh, block, fmt="%.17g", delimiter=",")
