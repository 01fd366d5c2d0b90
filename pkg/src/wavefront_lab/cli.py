"""Command line driver: flat INI configuration, CSV artifacts, fixed exit codes.

Every command reads the same sectioned config (defaults < --config file <
command-line flags), validates it completely before any computation, then
writes its CSVs and a ``report.txt`` summary into the output directory.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import dispersion, experiments, model, waves
from .errors import (
    ConfigError,
    ConstructionError,
    DomainError,
    NoRealRoots,
    NonPositiveValues,
    ParameterOutOfBudget,
    WavefrontLabError,
)
from .solver import (
    Boundary,
    Constant,
    ExponentialTail,
    Grid1D,
    Heaviside,
    SolverConfig,
    init_history,
    simulate,
    snap_grid,
    write_snapshots,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CHECK = 4

SCHEMA_VERSION = 1

COMMANDS = (
    "roots",
    "critical-speed",
    "select-speed",
    "simulate",
    "profile",
    "speed-selection",
    "stability-rate",
    "nicholson-case",
    "verify-envelope",
    "tail-invariance",
    "sweep",
)

# section -> key -> (type, default, description); a default of None means "derived"
SCHEMA: Dict[str, Dict[str, tuple]] = {
    "meta": {
        "version": (int, SCHEMA_VERSION, "config schema version, must equal 1"),
    },
    "model": {
        "kind": (str, "beverton-holt", "birth function: beverton-holt | nicholson | pushed"),
        "r": (float, 2.0, "beverton-holt / pushed growth parameter, g'(0) = r"),
        "kappa": (float, 1.0, "beverton-holt / pushed positive equilibrium"),
        "s": (float, 0.0, "pushed-candidate shape parameter"),
        "p_over_delta": (float, 5.0, "nicholson ratio p/delta, kappa = ln(p/delta)"),
        "h": (float, 0.0, "delay h >= 0"),
        "gp0": (float, None, "g'(0) for roots/critical-speed/select-speed; derived from the model when empty"),
    },
    "numerics": {
        "dx": (float, 0.05, "grid spacing"),
        "dt": (float, None, "time step; empty means h/50 (or 0.01 for h = 0)"),
        "t_end": (float, None, "final time; empty means the command default (150, 30 for stability-rate, 100 for tail-invariance)"),
        "x_min": (float, None, "left end; empty means -(c t_end + 45) in the lab frame, -60 co-moving"),
        "x_max": (float, 20.0, "right end"),
        "frame": (str, "lab", "lab | comoving"),
        "c": (float, None, "co-moving frame speed; empty means the experiment speed"),
        "left_bc": (str, "auto", "auto | robin | dirichlet (auto: robin with rate lambda for exp data)"),
        "right_bc": (str, "neumann", "neumann | dirichlet (right value kappa)"),
        "advection": (str, "auto", "centered | upwind | auto"),
        "snap_shift": (bool, False, "adjust dx so that c h / dx is an integer"),
        "relax_time": (float, 300.0, "profile relaxation time"),
    },
    "experiment": {
        "name": (str, "", "command to run when none is given on the command line"),
        "c": (float, None, "wave speed; defaults depend on the command"),
        "lambda": (float, None, "decay rate of initial data (default 0.5) or of the norm weight (default 1)"),
        "data": (str, "exp", "initial data: exp | heaviside | constant"),
        "amplitude": (float, 1.0, "tail amplitude A of exp data"),
        "level": (float, None, "constant data level; empty means 0.5 kappa"),
        "q": (float, 0.05, "perturbation size"),
        "speed_factor": (float, 1.2, "nicholson-case speed as a multiple of c_#"),
        "nicholson_run": (bool, True, "nicholson-case: run profile and perturbation (false: flags only)"),
        "c_star": (float, None, "minimal speed c_*; empty means c_#"),
        "noise": (float, 0.0, "stability-rate: relative random modulation of the perturbation, in [0, 1)"),
        "seed": (int, 0, "seed of the counter-based generator"),
    },
    "sweep": {
        "experiment": (str, "select-speed", "base command of a sweep"),
        "vary": (str, "lambda=0.2:1.6:0.2; h=0,0.5,1", "parameter grid: name=start:stop:step or name=v1,v2,... separated by ';'"),
        "workers": (int, 1, "worker processes"),
    },
    "output": {
        "directory": (str, "wavefront_out", "output directory"),
        "snapshot_dt": (float, 1.0, "time between stored snapshots"),
        "precision": (int, 17, "significant digits in CSV output"),
        "snapshots": (bool, True, "simulate: write snapshots.csv"),
    },
    "tolerances": {
        "root_rel": (float, 1e-14, "relative tolerance of every bisection"),
        "root_residual": (float, 1e-12, "characteristic residual scale, times (1 + g'(0))"),
        "near_critical_gap": (float, 1e-6, "lambda2 - lambda1 below which roots are flagged near-critical"),
        "speed_rel": (float, 0.03, "speed-selection relative speed tolerance"),
        "shift_rel": (float, 0.05, "shift-law relative tolerance"),
        "tail_rel": (float, 0.02, "tail-invariance relative tolerance"),
        "rate_fraction": (float, 0.5, "stability-rate: required fraction of gamma_max"),
        "residual": (float, None, "certification residual tolerance; empty means 1e-8 (1 + kappa)"),
        "squeeze_factor": (float, 1e-3, "squeeze allowance as a multiple of q"),
        "drift": (float, None, "profile drift tolerance; empty means 0.02 max(1, c)"),
        "ep": (float, None, "profile equation residual tolerance; empty means 1e-6 kappa"),
        "norm_floor": (float, 1e-7, "weighted-norm values below this are excluded from rate fits"),
        "norm_limit": (float, 1e4, "weighted norms use z where phi / eta <= norm_limit kappa"),
    },
}

# command-line flag -> (section, key)
FLAG_MAP = {
    "preset": None,
    "gp0": ("model", "gp0"),
    "h": ("model", "h"),
    "p_over_delta": ("model", "p_over_delta"),
    "c": ("experiment", "c"),
    "lam": ("experiment", "lambda"),
    "data": ("experiment", "data"),
    "q": ("experiment", "q"),
    "dx": ("numerics", "dx"),
    "dt": ("numerics", "dt"),
    "t_end": ("numerics", "t_end"),
    "frame": ("numerics", "frame"),
    "experiment": ("sweep", "experiment"),
}

DISPERSION_COMMANDS = ("roots", "critical-speed", "select-speed")

EXIT_HELP = """exit codes:
  0  all configured checks passed
  2  configuration error (malformed file, unknown key, invalid or inconsistent parameters)
  3  numerical failure (blow-up, no convergence, speed mismatch, unreliable fits)
  4  a check failed (the computation finished but a tolerance was not met)
"""


# ------------------------------------------------------------------ config


def _parse_value(typ, text: str, section: str, key: str, line: Optional[int] = None):
    text = text.strip()
    if typ is str:
        return text
    if text == "" or text.lower() in ("none", "auto"):
        return None
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is float:
            return _parse_number(text)
        return typ(text)
    except ValueError:
        where = f" (line {line})" if line else ""
        raise ConfigError(f"cannot parse {text!r} as {typ.__name__}{where}", section, key) from None


_CONSTANTS = {"e": math.e, "pi": math.pi, "e2": math.e**2}


def _parse_number(text: str) -> float:
    t = text.strip().lower()
    if t in _CONSTANTS:
        return _CONSTANTS[t]
    return float(t)


def defaults() -> Dict[str, Dict[str, object]]:
    return {sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()}


def _key_lines(text: str) -> Dict[tuple, int]:
    """(section, key) -> line number, for error messages."""
    out, section = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[(.+)\]$", line)
        if m:
            section = m.group(1).strip()
        elif section and "=" in line and not line.startswith(("#", ";")):
            out[(section, line.split("=", 1)[0].strip())] = i
    return out


def load_config(path: Optional[str]) -> Dict[str, Dict[str, object]]:
    cfg = defaults()
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    lines = _key_lines(text)
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section (line {lines.get((section, ''), '?')})", section)
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key (line {lines.get((section, key), '?')})", section, key)
            typ = SCHEMA[section][key][0]
            cfg[section][key] = _parse_value(typ, value, section, key, lines.get((section, key)))
    if cfg["meta"]["version"] != SCHEMA_VERSION:
        raise ConfigError(f"version {cfg['meta']['version']} does not match {SCHEMA_VERSION}", "meta", "version")
    return cfg


def apply_preset(cfg, preset: str) -> None:
    """``kind:name=value,name=value`` into the model block."""
    kind, _, rest = preset.partition(":")
    cfg["model"]["kind"] = kind.strip()
    if rest.strip():
        for item in rest.split(","):
            if "=" not in item:
                raise ConfigError(f"bad preset item {item!r}", "model")
            k, v = (s.strip() for s in item.split("=", 1))
            if k == "p":
                k = "p_over_delta"
            if k not in SCHEMA["model"]:
                raise ConfigError("unknown preset parameter", "model", k)
            cfg["model"][k] = _parse_value(SCHEMA["model"][k][0], v, "model", k)


def apply_set(cfg, item: str) -> None:
    """``section.key=value``."""
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigError(f"--set expects section.key=value, got {item!r}")
    lhs, value = item.split("=", 1)
    section, key = (s.strip() for s in lhs.split(".", 1))
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError("unknown key", section, key)
    cfg[section][key] = _parse_value(SCHEMA[section][key][0], value, section, key)


def schema_text() -> str:
    buf = io.StringIO()
    buf.write(f"# wavefront-lab configuration schema, version {SCHEMA_VERSION}\n")
    buf.write("# empty values mean 'derived'; precedence: defaults < --config < flags\n")
    for sec, keys in SCHEMA.items():
        buf.write(f"\n[{sec}]\n")
        for k, (typ, default, doc) in keys.items():
            dv = "" if default is None else (str(default).lower() if typ is bool else default)
            buf.write(f"# {doc} ({typ.__name__})\n{k} = {dv}\n")
    return buf.getvalue()


def build_model(cfg) -> model.BirthFunction:
    m = cfg["model"]
    try:
        return model.from_spec(m["kind"], r=m["r"], kappa=m["kappa"], s=m["s"], p_over_delta=m["p_over_delta"])
    except (DomainError, ConstructionError, KeyError) as exc:
        raise ConfigError(str(exc), "model", "kind") from None


def gp0_of(cfg) -> float:
    if cfg["model"]["gp0"] is not None:
        return cfg["model"]["gp0"]
    return build_model(cfg).gp0


def _positive(cfg, section, key, allow_zero=False):
    v = cfg[section][key]
    if v is None:
        return
    if not (v >= 0 if allow_zero else v > 0) or not math.isfinite(v):
        raise ConfigError(f"must be {'non-negative' if allow_zero else 'positive'}, got {v}", section, key)


def validate(command: str, cfg, point_checks: bool = True) -> None:
    """All cross-field checks, before any compute or output.

    ``point_checks=False`` skips the checks that depend on swept values (speed
    and g'(0) ranges); a sweep runs them per point and records failures.
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}", "experiment", "name")
    _positive(cfg, "model", "h", allow_zero=True)
    for k in ("dx", "dt", "t_end", "snapshot_dt"):
        sec = "output" if k == "snapshot_dt" else "numerics"
        _positive(cfg, sec, k)
    for k in ("q", "lambda", "amplitude"):
        _positive(cfg, "experiment", k)
    for k, spec in SCHEMA["tolerances"].items():
        _positive(cfg, "tolerances", k)
    if cfg["numerics"]["frame"] not in ("lab", "comoving"):
        raise ConfigError("must be lab or comoving", "numerics", "frame")
    if cfg["numerics"]["left_bc"] not in ("auto", "robin", "dirichlet"):
        raise ConfigError("must be auto, robin or dirichlet", "numerics", "left_bc")
    if cfg["numerics"]["right_bc"] not in ("neumann", "dirichlet"):
        raise ConfigError("must be neumann or dirichlet", "numerics", "right_bc")
    if cfg["numerics"]["advection"] not in ("auto", "centered", "upwind"):
        raise ConfigError("must be auto, centered or upwind", "numerics", "advection")
    if cfg["experiment"]["data"] not in ("exp", "heaviside", "constant"):
        raise ConfigError("must be exp, heaviside or constant", "experiment", "data")
    if not 1 <= cfg["output"]["precision"] <= 17:
        raise ConfigError("must lie in [1, 17]", "output", "precision")
    if cfg["sweep"]["workers"] < 1:
        raise ConfigError("must be >= 1", "sweep", "workers")
    if not 0.0 <= cfg["experiment"]["noise"] < 1.0:
        raise ConfigError("must lie in [0, 1)", "experiment", "noise")
    xmin, xmax = cfg["numerics"]["x_min"], cfg["numerics"]["x_max"]
    if xmin is not None and not xmax > xmin:
        raise ConfigError("x_max must exceed x_min", "numerics", "x_max")
    gp0 = gp0_of(cfg)
    if point_checks and not gp0 > 1.0:
        raise ConfigError(f"g'(0) must exceed 1, got {gp0}", "model", "gp0")
    speed_commands = ("roots", "profile", "verify-envelope", "stability-rate", "tail-invariance")
    comoving_run = command == "simulate" and cfg["numerics"]["frame"] == "comoving"
    if point_checks and (command in speed_commands or comoving_run):
        c = cfg["experiment"]["c"]
        if command in ("roots",) and c is None:
            raise ConfigError("a speed is required", "experiment", "c")
        if c is not None:
            c_sharp = dispersion.critical_speed(cfg["model"]["h"], gp0)[0]
            if c < c_sharp * (1 - 1e-12) and command != "profile":
                raise ConfigError(f"speed {c} is below the critical speed {c_sharp:.12g}", "experiment", "c")
    if command == "sweep":
        base = cfg["sweep"]["experiment"]
        if base == "sweep" or base not in COMMANDS:
            raise ConfigError(f"cannot sweep {base!r}", "sweep", "experiment")
        grid = parse_vary(cfg["sweep"]["vary"])
        for name in grid:
            if _param_target(name) is None:
                raise ConfigError(f"cannot vary {name!r}", "sweep", "vary")
        validate(base, cfg, point_checks=False)
    d = cfg["output"]["directory"]
    parent = os.path.dirname(os.path.abspath(d))
    if os.path.exists(d) and not os.path.isdir(d):
        raise ConfigError("exists and is not a directory", "output", "directory")
    if not os.path.isdir(parent) and not os.path.isdir(d):
        raise ConfigError(f"parent directory {parent} does not exist", "output", "directory")


# ------------------------------------------------------------------ reports


@dataclass
class ExperimentReport:
    command: str
    metrics: Dict[str, object] = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    runtime_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def text(self, precision: int = 17) -> str:
        """Deterministic summary; runtimes are left out so re-runs are byte-identical."""
        lines = [f"command = {self.command}", f"status = {'PASS' if self.passed else 'FAIL'}", "", "[checks]"]
        lines += [f"{k} = {'PASS' if v else 'FAIL'}" for k, v in self.checks.items()]
        lines += ["", "[metrics]"]
        lines += [f"{k} = {fmt(v, precision)}" for k, v in self.metrics.items()]
        lines += ["", "[outputs]"] + [os.path.basename(p) for p in self.outputs]
        return "\n".join(lines) + "\n"


def fmt(v, precision: int = 17) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), f".{precision}g")
    if isinstance(v, (tuple, list)):
        return " ".join(fmt(x, precision) for x in v)
    return str(v)


def write_csv(path: str, header, rows, precision: int = 17) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x, precision) for x in r])
    return path


def _public(d: dict) -> dict:
    return {k: v for k, v in d.items() if not k.startswith("_") and k not in ("passed", "runtime_s") and not hasattr(v, "__dataclass_fields__")}


# ------------------------------------------------------------------ commands


def _speed(cfg, g, default: float) -> float:
    c = cfg["experiment"]["c"]
    return default if c is None else c


def _t_end(cfg, default: float = 150.0) -> float:
    t = cfg["numerics"]["t_end"]
    return default if t is None else t


def _lam(cfg, default: float = 0.5) -> float:
    lam = cfg["experiment"]["lambda"]
    return default if lam is None else lam


def cmd_roots(cfg, out):
    gp0, h, c = gp0_of(cfg), cfg["model"]["h"], cfg["experiment"]["c"]
    r = dispersion.char_roots(c, h, gp0)
    row = (gp0, h, c, r.lambda1, r.lambda2)
    rep = ExperimentReport("roots", dict(zip(("gp0", "h", "c", "lambda1", "lambda2"), row)))
    rep.metrics["near_critical"] = r.near_critical
    tol = dispersion.ROOT_TOL * (1 + gp0) * (10.0 if r.near_critical else 1.0)
    rep.checks["residuals"] = max(abs(x) for x in r.residuals) <= tol
    return rep, [("roots.csv", ("gp0", "h", "c", "lambda1", "lambda2"), [row])]


def cmd_critical_speed(cfg, out):
    gp0, h = gp0_of(cfg), cfg["model"]["h"]
    c, lam = dispersion.critical_speed(h, gp0)
    row = (gp0, h, c, lam)
    rep = ExperimentReport("critical-speed", dict(zip(("gp0", "h", "c_sharp", "lambda_sharp"), row)))
    rep.checks["double_root"] = abs(dispersion.min_char(c, h, gp0)) <= 1e-9 * (1 + gp0)
    return rep, [("critical_speed.csv", ("gp0", "h", "c_sharp", "lambda_sharp"), [row])]


def cmd_select_speed(cfg, out):
    gp0, h, lam = gp0_of(cfg), cfg["model"]["h"], _lam(cfg)
    sel = dispersion.select_speed(lam, h, gp0, cfg["experiment"]["c_star"])
    c_lam = dispersion.c_of_lambda(lam, h, gp0)
    header = ("gp0", "h", "lambda", "mu", "c_lambda", "regime")
    row = (gp0, h, lam, sel.mu, c_lam, sel.regime)
    rep = ExperimentReport("select-speed", dict(zip(header, row)))
    rep.metrics.update(c_selected=sel.c_selected, lambda_star=sel.lambda_star)
    rep.checks["c_lambda_ge_c_sharp"] = c_lam >= dispersion.critical_speed(h, gp0)[0] * (1 - 1e-12)
    return rep, [("select_speed.csv", header, [row])]


def _track_rows(track):
    return [(t, p, r) for t, p, r in zip(track.times, track.positions, track.running)]


def cmd_speed_selection(cfg, out):
    g, e, n, tol = build_model(cfg), cfg["experiment"], cfg["numerics"], cfg["tolerances"]
    h = cfg["model"]["h"]
    data = e["data"] if e["data"] != "constant" else "exp"
    res = experiments.speed_selection(
        g, h, lam=_lam(cfg) if data == "exp" else None, data=data, c_star=e["c_star"], tol=tol["speed_rel"],
        dx=n["dx"], dt=n["dt"], t_end=_t_end(cfg), A=e["amplitude"], snapshot_dt=cfg["output"]["snapshot_dt"],
    )
    rep = ExperimentReport("speed-selection", _public(res))
    rep.checks["speed_within_tol"] = res["passed"]
    return rep, [("front_track.csv", ("t", "position", "c_est_running"), _track_rows(res["_track"]))]


def cmd_simulate(cfg, out):
    g, e, n = build_model(cfg), cfg["experiment"], cfg["numerics"]
    h, kappa = cfg["model"]["h"], g.kappa
    c_sharp = dispersion.critical_speed(h, g.gp0)[0]
    frame = n["frame"]
    lam = _lam(cfg)
    t_end = _t_end(cfg)
    if e["data"] == "exp":
        c_data = dispersion.c_of_lambda(lam, h, g.gp0)
        builder = ExponentialTail(e["amplitude"], lam, c_data, 0.9 * kappa)
        c_front = max(c_data, c_sharp)
    elif e["data"] == "heaviside":
        builder, c_front = Heaviside(kappa, 0.0), c_sharp
    else:
        level = 0.5 * kappa if e["level"] is None else e["level"]
        builder, c_front = Constant(level), 0.0
    c = _speed(cfg, g, c_front) if n["c"] is None else n["c"]
    dt = n["dt"] if n["dt"] is not None else (h / 50.0 if h > 0 else 0.01)
    if n["x_min"] is not None:
        x_min = n["x_min"]
    else:
        x_min = -60.0 if frame == "comoving" else -(c_front * t_end + 45.0)
    shift = c * h if frame == "comoving" else 0.0
    grid = snap_grid(x_min, n["x_max"], n["dx"], shift) if n["snap_shift"] else Grid1D.from_spacing(x_min, n["x_max"], n["dx"])
    left = n["left_bc"]
    if left == "auto":
        left = "robin" if e["data"] == "exp" else "dirichlet"
    if e["data"] == "constant" and n["left_bc"] == "auto":
        left = "robin"
    rate = lam if (left == "robin" and e["data"] == "exp") else 0.0
    right = n["right_bc"]
    bc = Boundary(left, 0.0, rate, right, kappa if right == "dirichlet" else 0.0)
    state = init_history(builder, grid, h, dt)
    every = max(1, int(round(cfg["output"]["snapshot_dt"] / state.dt)))
    scfg = SolverConfig(dt=state.dt, t_end=t_end, frame=frame, c=c, boundary=bc, snapshot_every=every, advection=n["advection"])
    traj = simulate(state, scfg, g)
    rep = ExperimentReport("simulate", {"frame": frame, "c": c, "h": h, "dt": state.dt, "dx": grid.dx, "n_nodes": grid.n, "snapshots": len(traj.times)})
    rep.metrics.update({f"flag_{k}": v for k, v in traj.flags.items()})
    rep.metrics["u_max_final"] = float(np.max(traj.fields[-1]))
    tables = []
    if e["data"] != "constant":
        try:
            track = waves.track_front(traj, 0.5 * kappa)
            rep.metrics["c_measured"] = track.c_est
            tables.append(("front_track.csv", ("t", "position", "c_est_running"), _track_rows(track)))
        except WavefrontLabError:
            rep.metrics["c_measured"] = float("nan")
    rep.checks["finite"] = bool(np.all(np.isfinite(traj.fields[-1])))
    if cfg["output"]["snapshots"]:
        path = os.path.join(out, "snapshots.csv")
        write_snapshots(traj, path)
        rep.outputs.append(path)
    meta = {
        "frame": frame, "c": c, "h": h, "dt": state.dt, "delay_steps": state.m, "t_end": traj.times[-1],
        "x_min": grid.x_min, "x_max": grid.x_max, "n": grid.n, "dx": grid.dx, "left_bc": left, "left_rate": rate,
        "right_bc": right, "snapshot_every": every, "snapshots": len(traj.times),
    }
    meta.update({f"flag_{k}": v for k, v in traj.flags.items()})
    path = os.path.join(out, "trajectory.txt")
    with open(path, "w") as fh:
        fh.write("[trajectory]\n")
        fh.writelines(f"{k} = {fmt(v)}\n" for k, v in meta.items())
    rep.outputs.append(path)
    return rep, tables


def cmd_profile(cfg, out):
    g = build_model(cfg)
    h = cfg["model"]["h"]
    c = _speed(cfg, g, 1.25 * dispersion.critical_speed(h, g.gp0)[0])
    grid = waves.default_profile_grid(c, h, g, dx=cfg["numerics"]["dx"])
    if cfg["numerics"]["snap_shift"] and c * h > 0:
        grid = snap_grid(grid.x_min, grid.x_max, grid.dx, c * h)
    tol = cfg["tolerances"]
    prof = waves.compute_profile(c, g, h, grid=grid, relax_time=cfg["numerics"]["relax_time"], drift_tol=tol["drift"], ep_tol=tol["ep"])
    diag = waves.profile_overshoot(prof)
    rep = ExperimentReport("profile", {"c": c, "h": h, "kappa": g.kappa, "lambda1": prof.lambda1, "drift": prof.drift, "ep_residual": prof.ep_residual})
    rep.metrics.update(monotone=prof.monotone, overshoot=diag["overshoot"], kappa_crossings=diag["kappa_crossings"])
    try:
        norm, amp = waves.normalize_profile(prof)
        rep.metrics["tail_amplitude"] = amp
    except WavefrontLabError as exc:
        rep.metrics["tail_amplitude"] = f"unavailable ({type(exc).__name__})"
    ep_tol = 1e-6 * g.kappa if tol["ep"] is None else tol["ep"]
    rep.checks["equation_residual"] = prof.ep_residual <= ep_tol
    return rep, [("profile.csv", ("z", "phi"), list(zip(prof.z, prof.values)))]


def _norm_rows(series):
    return [(t, series.kind, series.lam, v) for t, v in zip(series.times, series.values)]


def cmd_stability_rate(cfg, out):
    g, e, tol = build_model(cfg), cfg["experiment"], cfg["tolerances"]
    h = cfg["model"]["h"]
    c = _speed(cfg, g, 2.5 if h == 0 and g.gp0 == 2.0 else 1.25 * dispersion.critical_speed(h, g.gp0)[0])
    lam = _lam(cfg, 1.0)
    t_end = _t_end(cfg, 30.0)
    dt = cfg["numerics"]["dt"] or 0.01
    res = experiments.stability_rate(
        g, c=c, h=h, lam=lam, q=e["q"], t_end=t_end, dt=dt, floor=tol["norm_floor"], norm_limit=tol["norm_limit"],
        rate_fraction=tol["rate_fraction"], noise=e["noise"], seed=e["seed"],
    )
    rep = ExperimentReport("stability-rate", _public(res))
    rep.checks["rate_at_least_fraction"] = res["gamma_fit"] >= res["threshold"]
    rep.checks["monotone_after_transient"] = res["monotone_after_transient"]
    return rep, [("norms.csv", ("t", "norm_kind", "lambda", "value"), _norm_rows(res["_series"]))]


def cmd_nicholson_case(cfg, out):
    e, tol = cfg["experiment"], cfg["tolerances"]
    res = experiments.nicholson_case(
        cfg["model"]["p_over_delta"], h=cfg["model"]["h"] if cfg["model"]["h"] > 0 else 0.5, speed_factor=e["speed_factor"],
        q=e["q"], run=e["nicholson_run"], floor=tol["norm_floor"], norm_limit=tol["norm_limit"],
    )
    rep = ExperimentReport("nicholson-case", _public(res))
    rep.checks["hypothesis_H"] = res["hypothesis_H"]
    rep.checks["unimodal_contraction"] = res["contraction_passed"]
    if e["nicholson_run"]:
        rep.checks["weighted_norm_decay"] = res["decay_passed"]
        rep.checks["profile_shape"] = res["shape_passed"]
        prof = res["_profile"]
        return rep, [
            ("profile.csv", ("z", "phi"), list(zip(prof.z, prof.values))),
            ("norms.csv", ("t", "norm_kind", "lambda", "value"), _norm_rows(res["_series"])),
        ]
    return rep, []


def cmd_verify_envelope(cfg, out):
    g, e, tol = build_model(cfg), cfg["experiment"], cfg["tolerances"]
    h = cfg["model"]["h"]
    c = _speed(cfg, g, 2.5 if h == 0 and g.gp0 == 2.0 else 1.25 * dispersion.critical_speed(h, g.gp0)[0])
    res = experiments.envelope_verification(g, c=c, h=h, lam=_lam(cfg, 1.0), q=e["q"], residual_tol=tol["residual"], squeeze_factor=tol["squeeze_factor"])
    rep = ExperimentReport("verify-envelope", _public(res))
    kp = res["kappa_params"]
    rep.metrics.update(delta_star=kp.delta_star, gamma_star=kp.gamma_star, q_star_minus=kp.q_star_minus, q_star_plus=kp.q_star_plus, b=kp.b)
    rep.checks["sttg_certified"] = res["sttg_passed"]
    rep.checks["uls_certified"] = res["uls_passed"]
    rep.checks["inadmissible_rejected"] = not res["inadmissible_passed"]
    rep.checks["squeeze"] = res["squeeze_passed"]
    rows, summary = [], []
    for label, cert in res["_certificates"].items():
        rows.extend((label,) + r[1:] for r in cert.rows)
        ja = min((j[1] for j in cert.jumps), default=float("nan"))
        jl = max((j[2] for j in cert.jumps), default=float("nan"))
        summary.append((label, cert.min_upper, cert.max_lower, ja, jl, cert.passed))
    return rep, [
        ("certificate.csv", ("kind", "t", "z", "residual", "side"), rows),
        ("certificate_summary.csv", ("kind", "min_upper_residual", "max_lower_residual", "min_upper_jump", "max_lower_jump", "passed"), summary),
    ]


def cmd_tail_invariance(cfg, out):
    g, n = build_model(cfg), cfg["numerics"]
    h = cfg["model"]["h"]
    c = _speed(cfg, g, 2.5 if h == 0 and g.gp0 == 2.0 else 1.25 * dispersion.critical_speed(h, g.gp0)[0])
    t_end = _t_end(cfg, 100.0)
    res = experiments.tail_invariance(g, c=c, h=h, t_end=t_end, dx=n["dx"], dt=n["dt"] or 0.005, tol=cfg["tolerances"]["tail_rel"])
    rep = ExperimentReport("tail-invariance", _public(res))
    rep.checks["growth_rate"] = res["passed"]
    return rep, []


HANDLERS = {
    "roots": cmd_roots,
    "critical-speed": cmd_critical_speed,
    "select-speed": cmd_select_speed,
    "simulate": cmd_simulate,
    "profile": cmd_profile,
    "speed-selection": cmd_speed_selection,
    "stability-rate": cmd_stability_rate,
    "nicholson-case": cmd_nicholson_case,
    "verify-envelope": cmd_verify_envelope,
    "tail-invariance": cmd_tail_invariance,
}


def _apply_tolerances(cfg) -> None:
    tol = cfg["tolerances"]
    dispersion.REL_TOL = tol["root_rel"]
    dispersion.ROOT_TOL = tol["root_residual"]
    dispersion.NEAR_CRITICAL_GAP = tol["near_critical_gap"]


def compute(command: str, cfg, out: str):
    """Run one non-sweep command; returns (report, tables) without writing the tables."""
    _apply_tolerances(cfg)
    return HANDLERS[command](cfg, out)


# ------------------------------------------------------------------ sweep


def parse_vary(text: str) -> Dict[str, List[float]]:
    """``name=start:stop:step`` (inclusive) or ``name=v1,v2,...``, items separated by ';'."""
    grid = {}
    for item in filter(None, (s.strip() for s in text.split(";"))):
        if "=" not in item:
            raise ConfigError(f"bad vary item {item!r}", "sweep", "vary")
        name, spec = (s.strip() for s in item.split("=", 1))
        try:
            if ":" in spec:
                a, b, st = (_parse_number(x) for x in spec.split(":"))
                if not st > 0 or b < a:
                    raise ValueError
                k = int(math.floor((b - a) / st + 1e-9))
                vals = [round(a + i * st, 12) for i in range(k + 1)]
            else:
                vals = [_parse_number(x) for x in spec.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"bad range {spec!r} for {name}", "sweep", "vary") from None
        if not vals:
            raise ConfigError(f"empty range for {name}", "sweep", "vary")
        grid[name] = vals
    if not grid:
        raise ConfigError("no parameters to vary", "sweep", "vary")
    return grid


def _param_target(name: str):
    """Sweep parameter name -> (section, key)."""
    if "." in name:
        sec, key = name.split(".", 1)
        return (sec, key) if sec in SCHEMA and key in SCHEMA[sec] else None
    for sec in ("model", "experiment", "numerics"):
        if name in SCHEMA[sec]:
            return sec, name
    return None


def _sweep_point(args):
    base, cfg, assignment = args
    cfg = {s: dict(v) for s, v in cfg.items()}
    for name, value in assignment:
        sec, key = _param_target(name)
        cfg[sec][key] = value
    row = dict(assignment)
    try:
        validate(base, cfg)
        rep, tables = compute(base, cfg, "")
        row.update({k: v for k, v in rep.metrics.items() if k not in row})
        row["passed"] = rep.passed
        row["error"] = ""
    except WavefrontLabError as exc:
        row["passed"] = False
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_sweep(cfg, workers: int):
    base = cfg["sweep"]["experiment"]
    grid = parse_vary(cfg["sweep"]["vary"])
    names = list(grid)
    points = [[]]
    for name in names:
        points = [p + [(name, v)] for p in points for v in grid[name]]
    jobs = [(base, cfg, tuple(p)) for p in points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    rows.sort(key=lambda r: tuple(r[n] for n in names))
    cols = list(names)
    for r in rows:
        cols.extend(k for k in r if k not in cols and k not in ("passed", "error"))
    cols += ["passed", "error"]
    table = [tuple(r.get(k, "") for k in cols) for r in rows]
    rep = ExperimentReport("sweep", {"base": base, "points": len(rows), "failed_points": sum(not r["passed"] for r in rows)})
    if base == "nicholson-case" and "p_over_delta" in names:
        rep.metrics["monotone_boundary"] = "p/delta = e (monotone for 1 < p/delta <= e)"
        rep.metrics["unimodal_band"] = "e < p/delta < e^2 = 7.38905609893065"
    rep.checks["all_points"] = rep.metrics["failed_points"] == 0
    return rep, [("sweep.csv", cols, table)]


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="wavefront-lab",
        description="Wavefronts of delayed monostable reaction-diffusion equations: dispersion, simulation, profiles and envelope checks.",
        epilog=EXIT_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("command", nargs="?", choices=COMMANDS, help="experiment to run (default: [experiment] name)")
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out", help="output directory (overrides [output] directory)")
    p.add_argument("--workers", type=int, help="sweep worker processes")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--print-schema", action="store_true", help="print the configuration schema with defaults and exit")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override any config value")
    p.add_argument("--preset", help="model preset, e.g. beverton-holt:r=2,kappa=1 or nicholson:p_over_delta=5")
    p.add_argument("--gp0", help="g'(0) for dispersion commands")
    p.add_argument("--h", help="delay")
    p.add_argument("--c", help="wave speed")
    p.add_argument("--lambda", dest="lam", help="decay rate")
    p.add_argument("--p-over-delta", dest="p_over_delta", help="nicholson p/delta")
    p.add_argument("--data", help="initial data: exp | heaviside | constant")
    p.add_argument("--q", help="perturbation size")
    p.add_argument("--dx", help="grid spacing")
    p.add_argument("--dt", help="time step")
    p.add_argument("--t-end", dest="t_end", help="final time")
    p.add_argument("--frame", help="lab | comoving")
    p.add_argument("--experiment", help="base command of a sweep")
    p.add_argument("--vary", action="append", default=[], help="sweep grid item name=start:stop:step or name=v1,v2 (repeatable)")
    p.add_argument("--quiet", action="store_true", help="only print the status line")
    return p


def resolve(args) -> tuple:
    """(command, cfg) from defaults, config file and flags."""
    cfg = load_config(args.config)
    if args.preset:
        apply_preset(cfg, args.preset)
    if args.p_over_delta is not None and not args.preset:
        cfg["model"]["kind"] = "nicholson"
    for flag, target in FLAG_MAP.items():
        val = getattr(args, flag, None)
        if target is None or val is None:
            continue
        sec, key = target
        cfg[sec][key] = _parse_value(SCHEMA[sec][key][0], val, sec, key)
    for item in args.set:
        apply_set(cfg, item)
    if args.vary:
        cfg["sweep"]["vary"] = "; ".join(args.vary)
    if args.workers is not None:
        cfg["sweep"]["workers"] = args.workers
    if args.seed is not None:
        cfg["experiment"]["seed"] = args.seed
    if args.out:
        cfg["output"]["directory"] = args.out
    command = args.command or cfg["experiment"]["name"]
    if not command:
        raise ConfigError("no command given", "experiment", "name")
    if command == "select-speed-sweep":
        command = "sweep"
    return command, cfg


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, DomainError, ConstructionError, NoRealRoots, NonPositiveValues, ParameterOutOfBudget)):
        return EXIT_CONFIG
    return EXIT_NUMERICAL


def run(command: str, cfg) -> ExperimentReport:
    """Validate, compute and write all outputs; raises module errors."""
    validate(command, cfg)
    t0 = time.time()
    out = cfg["output"]["directory"]
    prec = cfg["output"]["precision"]
    if command == "sweep":
        _apply_tolerances(cfg)
        rep, tables = run_sweep(cfg, cfg["sweep"]["workers"])
    else:
        os.makedirs(out, exist_ok=True)
        rep, tables = compute(command, cfg, out)
    os.makedirs(out, exist_ok=True)
    for name, header, rows in tables:
        rep.outputs.append(write_csv(os.path.join(out, name), header, rows, prec))
    path = os.path.join(out, "report.txt")
    rep.outputs.append(path)
    with open(path, "w") as fh:
        fh.write(rep.text(prec))
    rep.runtime_s = time.time() - t0
    return rep


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_schema:
        sys.stdout.write(schema_text())
        return EXIT_OK
    try:
        command, cfg = resolve(args)
        rep = run(command, cfg)
    except WavefrontLabError as exc:
        code = exit_code_for(exc)
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return code
    if command in DISPERSION_COMMANDS:
        with open(rep.outputs[0]) as fh:
            sys.stdout.write(fh.read())
    elif not args.quiet:
        for k, v in rep.metrics.items():
            print(f"{k} = {fmt(v, 12)}")
        for k, v in rep.checks.items():
            print(f"check {k}: {'PASS' if v else 'FAIL'}")
        print(f"runtime_s = {rep.runtime_s:.2f}")
    print(f"{command}: {'PASS' if rep.passed else 'FAIL'} ({cfg['output']['directory']})")
    return EXIT_OK if rep.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
