"""Configuration parsing, run orchestration and table/profile output.

A configuration is a plain ``key = value`` document; ``#`` starts a
comment.  List-valued keys take comma-separated values.  Example::

    command = sweep
    Vc = 20
    kappa = 0.5
    sweep_omega = 0, 0.43, 0.48
    sweep_Ta = 0, 100, 500, 1000, 2000, 5000, 10000

Sweep rows are the Cartesian product of the ``sweep_*`` lists in the
order (Vc, kappa, omega, Ta); an absent list falls back to the scalar
parameter.
"""

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from .base_state import Parameters, solve_base_state
from .eigen import OUTER_TOL, growth_rate
from .errors import BioconvectError, ConfigError, DomainError, OutputError
from .neutral import CriticalPoint, SweepRow, find_critical, parameter_sweep, trace_branch
from .perturbed import ordinate_set
from .radiation import solve_fie
from .specfun import GridFunction
from .taxis import TaxisModel

COMMANDS = ("base-state", "fie", "neutral-curve", "critical", "sweep", "growth-rate")
FORMATS = ("csv", "json")
CRITICAL_HEADER = ("Ta", "omega", "kappa", "Vc", "lambda_c", "R_c", "Im_sigma", "branch")
THREADS_ENV = "BIOCONVECT_THREADS"


@dataclass(frozen=True)
class RunConfig:
    """Validated run description.

    Physical fields mirror :class:`Parameters` (``Gc``, ``a1``, ``a2``,
    ``c1``, ``c2`` configure the taxis law).  ``tau_max`` is only used by
    the ``fie`` command and defaults to ``kappa`` (uniform suspension).
    ``k`` is the wavenumber of ``growth-rate``.
    """

    command: str
    Sc: float = 20.0
    Vc: float = 20.0
    R: float = 0.0
    Ta: float = 0.0
    kappa: float = 0.5
    omega: float = 0.0
    Lt: float = 1.0
    Gc: float = 1.0
    a1: float = 0.8
    a2: float = 0.1
    c1: float = 2.5
    c2: float = 0.32
    n_grid: int = 401
    fie_size: int = 128
    n_polar: int = 24
    n_azimuth: int = 16
    k_min: float = 0.01
    k_max: float = 10.0
    n_points: int = 60
    outer_tol: float = OUTER_TOL
    resolution: int = 48
    k: float = 1.0
    tau_max: float = None
    sweep_Vc: tuple = ()
    sweep_kappa: tuple = ()
    sweep_omega: tuple = ()
    sweep_Ta: tuple = ()
    output: str = None
    format: str = "csv"

    def parameters(self, **overrides):
        taxis = TaxisModel(a1=self.a1, a2=self.a2, c1=self.c1, c2=self.c2,
                           critical_intensity=self.Gc)
        values = dict(Sc=self.Sc, Vc=self.Vc, R=self.R, Ta=self.Ta, kappa=self.kappa,
                      omega=self.omega, Lt=self.Lt, taxis=taxis)
        values.update(overrides)
        return Parameters(**values)

    def sweep_rows(self):
        """Parameters of every sweep row, in output order."""
        axes = [self.sweep_Vc or (self.Vc,), self.sweep_kappa or (self.kappa,),
                self.sweep_omega or (self.omega,), self.sweep_Ta or (self.Ta,)]
        return [self.parameters(Vc=v, kappa=kp, omega=om, Ta=ta)
                for v, kp, om, ta in itertools.product(*axes)]

    def ordinates(self):
        return ordinate_set(self.n_polar, self.n_azimuth)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_INTS = {"n_grid", "fie_size", "n_polar", "n_azimuth", "n_points", "resolution"}
_LISTS = {"sweep_Vc", "sweep_kappa", "sweep_omega", "sweep_Ta"}
_STRINGS = {"command", "output", "format"}


def _convert(key, raw, line):
    where = f"line {line}, key {key!r}"
    if key in _STRINGS:
        return raw
    try:
        if key in _LISTS:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if key in _INTS:
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc


def _validate(cfg):
    if cfg.command is None:
        raise ConfigError("key 'command' is required")
    if cfg.command not in COMMANDS:
        raise ConfigError(f"key 'command': unknown command {cfg.command!r}")
    if cfg.format not in FORMATS:
        raise ConfigError(f"key 'format': must be one of {', '.join(FORMATS)}")
    checks = [
        (cfg.n_grid >= 101, "n_grid", "must be at least 101"),
        (cfg.fie_size >= 16, "fie_size", "must be at least 16"),
        (cfg.n_polar >= 2, "n_polar", "must be at least 2"),
        (cfg.n_azimuth >= 2, "n_azimuth", "must be at least 2"),
        (0.01 <= cfg.k_min < cfg.k_max <= 20.0, "k_min/k_max", "need 0.01 <= k_min < k_max <= 20"),
        (cfg.n_points >= 20, "n_points", "must be at least 20"),
        (cfg.outer_tol > 0, "outer_tol", "must be positive"),
        (cfg.resolution >= 8, "resolution", "must be at least 8"),
        (cfg.k > 0, "k", "must be positive"),
        (cfg.tau_max is None or cfg.tau_max > 0, "tau_max", "must be positive"),
    ]
    for ok, key, msg in checks:
        if not ok:
            raise ConfigError(f"key {key!r}: {msg}")
    try:
        cfg.sweep_rows()
        cfg.parameters()
    except DomainError as exc:
        raise ConfigError(f"invalid parameters: {exc}") from exc
    return cfg


def parse_config(text, command=None):
    """Parse and validate a key-value configuration document.

    Parameters
    ----------
    text : str
    command : str, optional
        Command given on the command line; must agree with a ``command``
        key when both are present.

    Raises
    ------
    ConfigError
        Malformed line, unknown or repeated key, unparsable value or a
        violated invariant; the message names the line and key.
    """
    values = {}
    for line, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {line}: expected 'key = value', got {body!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {line}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {line}: key {key!r} given twice")
        values[key] = _convert(key, value, line)
    if command is not None:
        if values.get("command", command) != command:
            raise ConfigError(f"key 'command': config says {values['command']!r}, "
                              f"command line says {command!r}")
        values["command"] = command
    values.setdefault("command", None)
    return _validate(RunConfig(**values))


def format_config(cfg):
    """Serialise a RunConfig so that ``parse_config`` returns it unchanged."""
    lines = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        if value is None or (name in _LISTS and not value):
            continue
        if name in _LISTS:
            value = ", ".join(repr(float(v)) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


# --- output ---------------------------------------------------------------

def _num(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.6g}"


def _critical_record(pt):
    return {"Ta": pt.Ta, "omega": pt.omega, "kappa": pt.kappa, "Vc": pt.Vc,
            "lambda_c": pt.lambda_c, "R_c": pt.R_c, "Im_sigma": pt.sigma_im,
            "branch": pt.branch}


def _table(results):
    """(header, rows) from CriticalPoints, sweep rows or a profile mapping."""
    if isinstance(results, dict):
        if not results:
            raise DomainError("nothing to write")
        cols = []
        for name, v in results.items():
            if isinstance(v, GridFunction):
                v = v.values
            cols.append(np.asarray(v))
        if min(c.size for c in cols) == 0:
            raise DomainError("nothing to write: empty profile")
        if len({c.size for c in cols}) > 1:
            raise DomainError("profiles of unequal length")
        return tuple(results), list(zip(*cols))
    rows = []
    for r in results:
        if isinstance(r, SweepRow):
            if r.point is None:
                continue
            r = r.point
        if not isinstance(r, CriticalPoint):
            raise DomainError(f"cannot serialise {type(r).__name__}")
        rec = _critical_record(r)
        rows.append(tuple(rec[h] for h in CRITICAL_HEADER))
    if not rows:
        raise DomainError("nothing to write")
    return CRITICAL_HEADER, rows


def _cell(v):
    return str(v) if isinstance(v, str) else _num(v)


def _render(header, rows, fmt):
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
        return buf.getvalue()
    if fmt == "json":
        def value(v):
            s = _cell(v)
            if isinstance(v, str) or s in ("inf", "-inf", "nan"):
                return s
            return float(s)
        records = [{h: value(v) for h, v in zip(header, row)} for row in rows]
        return json.dumps(records, indent=1) + "\n"
    raise ConfigError(f"unknown format {fmt!r}")


def emit_results(results, fmt="csv", path=None):
    """Write critical-point rows or named profiles.

    Parameters
    ----------
    results : sequence of CriticalPoint / SweepRow, or dict of name -> array
        Profiles share the row index (the first entry is usually the grid).
        Failed sweep rows are skipped.
    fmt : {"csv", "json"}
    path : str, optional
        Output file; when omitted the text is only returned.

    Returns
    -------
    str
        The rendered text.

    Raises
    ------
    DomainError
        If there is nothing to write (no file is created).
    OutputError
        If the file cannot be written.
    """
    header, rows = _table(results)
    text = _render(header, rows, fmt)
    if path is not None:
        try:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return text


# --- run ------------------------------------------------------------------

def _base_state_profiles(cfg):
    b = solve_base_state(cfg.parameters(), n_grid=cfg.n_grid, m=cfg.fie_size)
    return {"z": b.z_grid, "n_s": b.n_s, "G_s": b.G_s, "G_sc": b.G_sc, "G_sd": b.G_sd,
            "q_s": b.q_s, "M_s": b.M_s}


def _fie_profiles(cfg):
    tau_max = cfg.kappa if cfg.tau_max is None else cfg.tau_max
    rad = solve_fie(cfg.omega, tau_max, m=cfg.fie_size)
    return {"tau": rad.tau_grid, "upsilon": rad.upsilon, "collimated": np.exp(-rad.tau_grid)}


def _curve(cfg):
    p = cfg.parameters()
    b = solve_base_state(p, n_grid=cfg.n_grid, m=cfg.fie_size)
    return trace_branch(b, p, (cfg.k_min, cfg.k_max), cfg.n_points, cfg.ordinates(),
                        outer_tol=cfg.outer_tol)


def _neutral_profiles(cfg):
    c = _curve(cfg)
    return {"k": c.k, "R": c.R, "branch": c.branch, "Im_sigma": c.sigma_im}


def _growth_profiles(cfg):
    p = cfg.parameters()
    b = solve_base_state(p, n_grid=cfg.n_grid, m=cfg.fie_size)
    sigma = growth_rate(b, p, cfg.k, resolution=cfg.resolution, ords=cfg.ordinates())
    return {"k": [cfg.k], "R": [cfg.R], "Re_sigma": [sigma.real], "Im_sigma": [sigma.imag]}


def run(cfg, threads=1, out=None, stderr=None):
    """Execute a configuration and write its artifact.

    Returns
    -------
    int
        0 on success, 1 if any solve failed (successful sweep rows are
        still written).
    """
    stderr = sys.stderr if stderr is None else stderr
    path = out if out is not None else cfg.output
    status = 0
    try:
        if cfg.command == "base-state":
            results = _base_state_profiles(cfg)
        elif cfg.command == "fie":
            results = _fie_profiles(cfg)
        elif cfg.command == "neutral-curve":
            results = _neutral_profiles(cfg)
        elif cfg.command == "growth-rate":
            results = _growth_profiles(cfg)
        elif cfg.command == "critical":
            results = [find_critical(_curve(cfg))]
        else:
            results = parameter_sweep(cfg.parameters(), cfg.sweep_rows(),
                                      (cfg.k_min, cfg.k_max), cfg.n_points, cfg.n_grid,
                                      cfg.ordinates(), threads=threads,
                                      outer_tol=cfg.outer_tol)
            for row in results:
                if row.point is None:
                    q = row.params
                    print(f"row Ta={q.Ta:g} omega={q.omega:g} kappa={q.kappa:g} Vc={q.Vc:g} "
                          f"failed: {row.error}", file=stderr)
                    status = 1
            if all(row.point is None for row in results):
                return 1
    except BioconvectError as exc:
        print(f"{cfg.command} failed: {exc}", file=stderr)
        return 1
    text = emit_results(results, cfg.format, path)
    if path is None:
        sys.stdout.write(text)
    return status


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="bioconvect", description="Onset of phototactic bioconvection in a rotating suspension.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--out", help="output path (default: config 'output' or stdout)")
    parser.add_argument("--format", choices=FORMATS)
    parser.add_argument("--threads", type=int, help=f"worker processes (default ${THREADS_ENV} or 1)")
    args = parser.parse_args(argv)
    try:
        text = ""
        if args.config is not None:
            try:
                with open(args.config) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read {args.config}: {exc.strerror or exc}") from exc
        cfg = parse_config(text, command=args.command)
        if args.format is not None:
            cfg = replace(cfg, format=args.format)
        threads = _threads(args.threads)
        return run(cfg, threads=threads, out=args.out)
    except (ConfigError, OutputError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
