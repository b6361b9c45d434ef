"""Run configuration: INI schema, field expressions, assembled run inputs.

One INI file fully determines a run.  Sections: [grid], [time], [model],
[cost], [admissible], [optimizer], [controls], [output], [run].  Every
key is optional and falls back to the package defaults; unknown sections
or keys are rejected with a named diagnostic rather than ignored.

Spatial fields (initial data, targets, doses) are given in a small
expression language::

    zero
    const:VALUE
    gaussian:AMP,CX,CY,WIDTH          AMP*exp(-((x-cx)^2+(y-cy)^2)/WIDTH)
    tanh_front:LO,HI,X0,WIDTH         ramp in x from LO to HI around X0
    file:PATH                         snapshot in the text or binary format

Doses are constant in time; time-varying schedules come from the
optimizer, not from configuration.  k1_const / k2_const / s_const
replace the corresponding kinetic maps with constants, which is what
makes a homogeneous run genuinely reducible to pointwise equations.

A parsed RunConfig can re-assemble itself at a 2^m refined space-time
resolution (`at_scale`), used by the refinement studies; snapshot-file
fields cannot be rescaled and reject that path.
"""
import configparser
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path
from typing import Optional

import numpy as np

from .adjoint import CostWeights, Targets
from .control import AdmissibleSet
from .errors import ConfigError
from .grid import Grid
from .model import DefaultLogisticFamily, ModelSpec, constant_map
from .snapshots import read_snapshot_bin, read_snapshot_csv
from .state import Control

_FAMILY_KEYS = {
    "n": "N",
    "eta_p": "eta_p",
    "c_p": "c_p",
    "eta_g": "eta_g",
    "c_g": "c_g",
    "a_k": "a_k",
    "eta_k": "eta_k",
    "c_k": "c_k",
    "eta_s": "eta_S",
    "c_s": "c_S",
    "d_k": "d_k",
    "a_b": "a_B",
    "b_b": "b_B",
    "c_b": "c_B",
    "a_psi": "a_psi",
    "b_psi": "b_psi",
    "eta_gamma": "eta_gamma",
    "p_star": "p_star",
    "g_star": "g_star",
    "k1_star": "k1_star",
    "k2_star": "k2_star",
    "k2_low": "k2_low",
    "s_star": "S_star",
    "psi_max": "psi_max",
    "mu_min": "mu_min",
    "mu_max": "mu_max",
    "lam_min": "lam_min",
    "lam_max": "lam_max",
    "gamma_max": "gamma_max",
    "a_mu": "A_mu",
    "a_lam": "A_lam",
    "c1": "C1",
    "c2": "C2",
    "m0": "M0",
    "iota_const": "iota_const",
}

_CONST_KINETICS = ("k1_const", "k2_const", "s_const")
_FIELD_KEYS = ("phi0", "sigma0", "z0", "iota", "sigma_boundary", "force_x", "force_y")
_TARGET_KEYS = ("phi_track", "phi_final", "sigma_track", "sigma_final", "z_track")

_SCHEMA = {
    "grid": {"nx", "ny", "lx", "ly"},
    "time": {"t_final", "steps"},
    "model": set(_FAMILY_KEYS) | {"k2_variable"} | set(_CONST_KINETICS) | set(_FIELD_KEYS),
    "cost": {f"alpha{i}" for i in range(1, 10)} | set(_TARGET_KEYS),
    "admissible": {"chi1_low", "chi1_high", "chi2_low", "chi2_high", "c_ad"},
    "optimizer": {"step0", "tol", "max_iters"},
    "controls": {"chi1", "chi2"},
    "output": {"directory", "stride", "format"},
    "run": {"seed"},
}


def parse_expression(text, grid, base=None):
    """Evaluate one spatial-field expression on the grid."""
    t = str(text).strip()
    if t == "zero":
        return np.zeros(grid.shape)
    head, sep, rest = t.partition(":")
    if not sep:
        raise ConfigError(f"malformed field expression {text!r}")
    if head == "const":
        return np.full(grid.shape, _number(rest, text))
    args = rest.split(",")
    if head == "gaussian":
        amp, cx, cy, width = _numbers(args, 4, text)
        if width <= 0:
            raise ConfigError(f"gaussian width must be positive in {text!r}")
        x, y = grid.meshes
        return amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / width)
    if head == "tanh_front":
        lo, hi, x0, width = _numbers(args, 4, text)
        if width <= 0:
            raise ConfigError(f"front width must be positive in {text!r}")
        x, _ = grid.meshes
        return lo + (hi - lo) * 0.5 * (1.0 + np.tanh((x - x0) / width))
    if head == "file":
        path = Path(rest.strip())
        if base is not None and not path.is_absolute():
            path = Path(base) / path
        if not path.exists():
            raise ConfigError(f"snapshot file not found: {path}")
        reader = read_snapshot_bin if path.suffix in (".bin", ".tcf") else read_snapshot_csv
        try:
            fld, _ = reader(path)
        except (ValueError, OSError) as e:
            raise ConfigError(f"unreadable snapshot {path}: {e}") from e
        if fld.values.shape != grid.shape:
            raise ConfigError(
                f"snapshot {path} has shape {fld.values.shape}, grid wants {grid.shape}"
            )
        return fld.values
    raise ConfigError(f"unknown field expression kind {head!r} in {text!r}")


def _number(raw, context):
    try:
        v = float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"not a number: {raw!r} in {context!r}") from None
    if not np.isfinite(v):
        raise ConfigError(f"non-finite value {raw!r} in {context!r}")
    return v


def _numbers(args, n, context):
    if len(args) != n:
        raise ConfigError(f"expected {n} arguments in {context!r}, got {len(args)}")
    return [_number(a, context) for a in args]


class _Section:
    """Typed access to one INI section with key-level diagnostics."""

    def __init__(self, cp, name):
        self.name = name
        self.data = dict(cp[name]) if cp.has_section(name) else {}

    def get_float(self, key, default):
        if key not in self.data:
            return default
        return _number(self.data[key], f"[{self.name}] {key}")

    def get_int(self, key, default):
        if key not in self.data:
            return default
        raw = self.data[key]
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key}: not an integer: {raw!r}") from None

    def get_bool(self, key, default):
        if key not in self.data:
            return default
        raw = self.data[key].strip().lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{self.name}] {key}: not a boolean: {raw!r}")

    def get_str(self, key, default):
        return self.data.get(key, default)


@dataclass
class RunConfig:
    """Everything a subcommand needs, assembled from one INI file.

    The primitive configuration (family parameters, field expressions)
    is kept alongside the assembled objects so that refinement studies
    can rebuild the same problem at doubled resolution.
    """

    nx: int
    ny: int
    lx: float
    ly: float
    T: float
    n_steps: int
    family_kw: dict
    const_kinetics: dict
    field_expr: dict
    target_expr: dict
    ctl_expr: tuple
    base: Path
    weights: CostWeights
    admissible: AdmissibleSet
    step0: float
    tol: float
    max_iters: int
    outdir: Path
    stride: int
    fmt: str
    seed: int
    source: Path
    spec: Optional[ModelSpec] = None
    targets: Optional[Targets] = None
    control0: Optional[Control] = None

    def at_scale(self, m):
        """Rebuild spec, targets, and initial dose 2^m-refined in (tau, h)."""
        if m > 0:
            for key, expr in list(self.field_expr.items()) + list(self.target_expr.items()):
                if str(expr).strip().startswith("file:"):
                    raise ConfigError(
                        f"field '{key}' comes from a snapshot file and cannot be "
                        "re-evaluated at a refined resolution"
                    )
        grid = Grid.unit(self.nx << m, self.ny << m, self.lx, self.ly)
        family = DefaultLogisticFamily(T=self.T, **self.family_kw)
        spec = family.build(grid)

        overrides = {}
        for key, expr in self.field_expr.items():
            arr = parse_expression(expr, grid, self.base)
            if key == "sigma_boundary":
                overrides["sigma_gamma"] = arr
            elif key in ("force_x", "force_y"):
                f = overrides.get("f", spec.f.copy())
                f[0 if key == "force_x" else 1] = arr
                overrides["f"] = f
            else:
                overrides[key] = arr
        for key, value in self.const_kinetics.items():
            attr = {"k1_const": "k1", "k2_const": "k2", "s_const": "S"}[key]
            overrides[attr] = constant_map(value)
        if "k2" in overrides:
            # the lower kinetic bound must track the replacement constant
            overrides["bounds"] = dc_replace(spec.bounds, k2_low=self.const_kinetics["k2_const"])
        if overrides:
            spec = spec.with_fields(**overrides)

        targets = Targets.resting(spec)
        if self.target_expr:
            fields = {k: getattr(targets, k) for k in _TARGET_KEYS}
            for key, expr in self.target_expr.items():
                fields[key] = parse_expression(expr, grid, self.base)
            targets = Targets(**fields)
        _validated(targets.validate, grid)

        n_steps = self.n_steps << m
        shape = (n_steps + 1,) + grid.shape
        e1, e2 = self.ctl_expr
        control0 = Control(
            np.broadcast_to(parse_expression(e1, grid, self.base), shape).copy(),
            np.broadcast_to(parse_expression(e2, grid, self.base), shape).copy(),
        )
        _validated(control0.validate)
        return spec, targets, control0, n_steps


def _validated(fn, *args):
    try:
        return fn(*args)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def load_config(path) -> RunConfig:
    """Parse, validate, and assemble a run configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e

    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"{path}: unknown config section [{sec}]")
        for key in cp[sec]:
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"{path}: unknown key '{key}' in section [{sec}]")

    s_grid = _Section(cp, "grid")
    s_time = _Section(cp, "time")
    s_model = _Section(cp, "model")
    s_cost = _Section(cp, "cost")
    s_adm = _Section(cp, "admissible")
    s_opt = _Section(cp, "optimizer")
    s_ctl = _Section(cp, "controls")
    s_out = _Section(cp, "output")
    s_run = _Section(cp, "run")

    nx = s_grid.get_int("nx", 48)
    ny = s_grid.get_int("ny", 48)
    lx = s_grid.get_float("lx", 1.0)
    ly = s_grid.get_float("ly", 1.0)
    if nx < 2 or ny < 2:
        raise ConfigError(f"grid must have at least 2 cells per side, got {nx}x{ny}")
    if lx <= 0 or ly <= 0:
        raise ConfigError("grid side lengths must be positive")

    T = s_time.get_float("t_final", 0.5)
    n_steps = s_time.get_int("steps", 200)
    if T <= 0:
        raise ConfigError(f"final time must be positive, got {T}")
    if n_steps < 1:
        raise ConfigError(f"step count must be at least 1, got {n_steps}")

    family_kw = {}
    for ini_key, attr in _FAMILY_KEYS.items():
        if ini_key in s_model.data:
            family_kw[attr] = s_model.get_float(ini_key, None)
    family_kw["k2_variable"] = s_model.get_bool("k2_variable", False)
    const_kinetics = {}
    for key in _CONST_KINETICS:
        if key in s_model.data:
            v = s_model.get_float(key, None)
            if v <= 0:
                raise ConfigError(f"[model] {key} must be positive, got {v}")
            const_kinetics[key] = v

    field_expr = {k: s_model.data[k] for k in _FIELD_KEYS if k in s_model.data}
    target_expr = {k: s_cost.data[k] for k in _TARGET_KEYS if k in s_cost.data}

    alphas = [
        s_cost.get_float(f"alpha{i}", d)
        for i, d in zip(range(1, 10), CostWeights().as_array())
    ]
    weights = CostWeights(*alphas)
    _validated(weights.validate)

    admissible = AdmissibleSet(
        chi1_low=s_adm.get_float("chi1_low", 0.0),
        chi1_high=s_adm.get_float("chi1_high", 1.0),
        chi2_low=s_adm.get_float("chi2_low", 0.0),
        chi2_high=s_adm.get_float("chi2_high", 1.0),
        c_ad=s_adm.get_float("c_ad", np.inf),
    )
    _validated(admissible.validate)

    fmt = s_out.get_str("format", "csv")
    if fmt not in ("csv", "bin"):
        raise ConfigError(f"[output] format must be csv or bin, got {fmt!r}")
    stride = s_out.get_int("stride", 1)
    if stride < 1:
        raise ConfigError(f"[output] stride must be at least 1, got {stride}")

    cfg = RunConfig(
        nx=nx,
        ny=ny,
        lx=lx,
        ly=ly,
        T=T,
        n_steps=n_steps,
        family_kw=family_kw,
        const_kinetics=const_kinetics,
        field_expr=field_expr,
        target_expr=target_expr,
        ctl_expr=(s_ctl.get_str("chi1", "zero"), s_ctl.get_str("chi2", "zero")),
        base=path.parent,
        weights=weights,
        admissible=admissible,
        step0=s_opt.get_float("step0", 1.0),
        tol=s_opt.get_float("tol", 1e-6),
        max_iters=s_opt.get_int("max_iters", 100),
        outdir=Path(s_out.get_str("directory", "out")),
        stride=stride,
        fmt=fmt,
        seed=s_run.get_int("seed", 0),
        source=path,
    )
    cfg.spec, cfg.targets, cfg.control0, _ = cfg.at_scale(0)
    return cfg
