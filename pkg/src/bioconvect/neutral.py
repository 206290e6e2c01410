"""Neutral curves R(k), their oscillatory branches and the critical point."""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .base_state import Parameters, solve_base_state
from .eigen import OUTER_TOL, nrk_solve
from .errors import BioconvectError, DomainError

K_MIN = 0.01
K_MAX = 20.0
MIN_POINTS = 20
REFINE_TOL = 1e-6
MAX_REFINE = 60
GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)


@dataclass(frozen=True, eq=False)
class NeutralCurve:
    """Samples of the first neutral branch and of any oscillatory branch.

    Rows are (k, R, branch, sigma_im); within a branch k is strictly
    increasing.  ``missing`` lists wavenumbers where neither solve
    converged and ``gaps`` those where continuation had to restart.
    """

    k: np.ndarray
    R: np.ndarray
    branch: np.ndarray
    sigma_im: np.ndarray
    missing: tuple = ()
    gaps: tuple = ()
    k_range: tuple = (K_MIN, 10.0)
    base: object = None
    params: object = None
    ords: object = None
    outer_tol: float = OUTER_TOL
    solutions: dict = field(default_factory=dict)

    def branch_samples(self, kind):
        """(k, R, sigma_im) arrays of one branch type."""
        sel = self.branch == kind
        return self.k[sel], self.R[sel], self.sigma_im[sel]


@dataclass(frozen=True)
class CriticalPoint:
    """Most unstable neutral solution.

    ``lambda_c`` is 2 pi / k_c, or ``inf`` when the minimum sits at the
    smallest wavenumber with R increasing along the whole branch.
    """

    k_c: float
    R_c: float
    lambda_c: float
    sigma_im: float
    branch: str
    Ta: float = math.nan
    omega: float = math.nan
    kappa: float = math.nan
    Vc: float = math.nan


def _attempt(b, p, k, mode, guess, ords, coupling=None, outer_tol=OUTER_TOL):
    try:
        sol = nrk_solve(b, p, k, mode=mode, guess=guess, ords=ords, coupling=coupling,
                        outer_tol=outer_tol)
    except (BioconvectError, ArithmeticError, np.linalg.LinAlgError, RuntimeError):
        return None
    if mode == "oscillatory" and sol.fold:
        return None
    if not np.isfinite(sol.R) or sol.R <= 0:
        return None
    return sol


def trace_branch(b, p, k_range=(K_MIN, 10.0), n_points=60, ords=None, oscillatory=True,
                 outer_tol=OUTER_TOL):
    """Trace the first neutral branch and its oscillatory companion.

    Wavenumbers are spaced geometrically.  The stationary branch is
    continued in k from a seed of the radiation-free pencil, and wherever
    the continued R rises a fresh seed is also solved and the lower value
    kept (continuation can jump to a higher branch); at every k an
    oscillatory solve is attempted, seeded from the previous oscillatory
    sample or freshly from the pencil.

    Parameters
    ----------
    b : BaseState
    p : Parameters
    k_range : (float, float)
        Must satisfy ``0.01 <= k_min < k_max <= 20``.
    n_points : int
        At least 20.
    outer_tol : float
        Radiation outer-loop tolerance on |dR|/R.
    """
    k_min, k_max = map(float, k_range)
    if not (K_MIN - 1e-12 <= k_min < k_max <= K_MAX):
        raise DomainError(f"k_range must lie within [{K_MIN}, {K_MAX}]")
    if n_points < MIN_POINTS:
        raise DomainError(f"need at least {MIN_POINTS} wavenumbers")
    ks = np.geomspace(k_min, k_max, int(n_points))
    rows, missing, gaps, solutions = [], [], [], {}
    stat = osc = None
    for k in ks:
        new = _attempt(b, p, k, "stationary", stat, ords, outer_tol=outer_tol)
        if new is None and stat is not None:
            gaps.append(float(k))
            new = _attempt(b, p, k, "stationary", None, ords, outer_tol=outer_tol)
        elif new is not None and stat is not None and new.R > stat.R:
            # a rising continuation may have jumped to a higher branch
            fresh = _attempt(b, p, k, "stationary", None, ords, outer_tol=outer_tol)
            if fresh is not None and fresh.R < new.R * (1.0 - 1e-6):
                new = fresh
        found = False
        if new is not None:
            stat = new
            rows.append((k, new.R, "stationary", 0.0))
            solutions[("stationary", float(k))] = new
            found = True
        if oscillatory:
            coupling = new.coupling if new is not None else None
            o = _attempt(b, p, k, "oscillatory", osc, ords, coupling, outer_tol) if osc is not None else None
            if o is None:
                shift = replace(p, R=new.R) if new is not None else p
                o = _attempt(b, shift, k, "oscillatory", None, ords, coupling, outer_tol)
            osc = o
            if o is not None:
                rows.append((k, o.R, "oscillatory", abs(o.sigma_im)))
                solutions[("oscillatory", float(k))] = o
                found = True
        if not found:
            missing.append(float(k))
    rows.sort(key=lambda r: (r[2] != "stationary", r[0]))
    k_arr = np.array([r[0] for r in rows], dtype=float)
    return NeutralCurve(k=k_arr, R=np.array([r[1] for r in rows], dtype=float),
                        branch=np.array([r[2] for r in rows], dtype=object),
                        sigma_im=np.array([r[3] for r in rows], dtype=float),
                        missing=tuple(missing), gaps=tuple(gaps), k_range=(k_min, k_max),
                        base=b, params=p, ords=ords, outer_tol=outer_tol,
                        solutions=solutions)


def _golden(f, a, c):
    """Golden-section minimisation of f on [a, c]; returns (x, f(x))."""
    x1 = c - GOLDEN * (c - a)
    x2 = a + GOLDEN * (c - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(MAX_REFINE):
        if f1 <= f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - GOLDEN * (c - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (c - a)
            f2 = f(x2)
        if abs(f1 - f2) <= REFINE_TOL * min(f1, f2) and (c - a) <= 1e-3 * (a + c):
            break
        if (c - a) <= 1e-8 * (a + c):
            break
    return (x1, f1) if f1 <= f2 else (x2, f2)


def find_critical(curve, refine=True):
    """Global minimum of the neutral curve, refined by golden section in k.

    Raises
    ------
    DomainError
        If the curve has no valid sample.
    """
    valid = np.isfinite(curve.R)
    if not np.any(valid):
        raise DomainError("neutral curve has no valid samples")
    i = int(np.flatnonzero(valid)[np.argmin(curve.R[valid])])
    kind = curve.branch[i]
    ks, Rs, sig = curve.branch_samples(kind)
    j = int(np.flatnonzero(ks == curve.k[i])[0])
    p = curve.params
    meta = {} if p is None else dict(Ta=p.Ta, omega=p.omega, kappa=p.kappa, Vc=p.Vc)
    at_floor = j == 0 and abs(ks[0] - curve.k_range[0]) <= 1e-12 * ks[0]
    if at_floor and ks.size > 1 and np.all(np.diff(Rs) > 0):
        return CriticalPoint(float(ks[0]), float(Rs[0]), math.inf, float(sig[0]), kind, **meta)
    if not refine or curve.base is None or ks.size < 2:
        return CriticalPoint(float(ks[j]), float(Rs[j]), float(2.0 * math.pi / ks[j]),
                             float(sig[j]), kind, **meta)
    # a minimum at the end of a branch is bracketed by the neighbouring
    # wavenumber of the sampling grid, where the branch no longer exists
    lo = ks[j - 1] if j > 0 else max([k for k in curve.k if k < ks[0]], default=curve.k_range[0])
    hi = ks[j + 1] if j < ks.size - 1 else min([k for k in curve.k if k > ks[j]],
                                                default=curve.k_range[1])
    if not lo < hi:
        return CriticalPoint(float(ks[j]), float(Rs[j]), float(2.0 * math.pi / ks[j]),
                             float(sig[j]), kind, **meta)
    last = {}

    def R_of(k):
        nearest = min((abs(math.log(kk / k)), sol) for (m, kk), sol in
                      list(curve.solutions.items()) + list(last.items())
                      if m == kind)[1]
        sol = _attempt(curve.base, curve.params, k, kind, nearest, curve.ords,
                       outer_tol=curve.outer_tol)
        if sol is None:
            return math.inf
        last[(kind, float(k))] = sol
        return sol.R

    k_c, R_c = _golden(R_of, lo, hi)
    if not np.isfinite(R_c) or R_c > Rs[j]:
        k_c, R_c = ks[j], Rs[j]
        s_c = sig[j]
    else:
        sol = last[(kind, float(k_c))]
        s_c = abs(sol.sigma_im)
    return CriticalPoint(float(k_c), float(R_c), float(2.0 * math.pi / k_c), float(s_c), kind, **meta)


@dataclass(frozen=True)
class SweepRow:
    """One parameter-sweep entry: the critical point or the failure message."""

    params: Parameters
    point: CriticalPoint = None
    error: str = ""


def _entry_params(base, entry):
    if isinstance(entry, Parameters):
        return entry
    if isinstance(entry, dict):
        return replace(base, **entry)
    if np.ndim(entry) == 0:
        return replace(base, Ta=float(entry))
    omega, kappa, Vc = entry[:3]
    values = dict(omega=float(omega), kappa=float(kappa), Vc=float(Vc))
    if len(entry) > 3:
        values["Ta"] = float(entry[3])
    return replace(base, **values)


def _sweep_group(params, k_range, n_points, n_grid, ords, outer_tol=OUTER_TOL):
    """Rows sharing one base state, solved in order."""
    out = []
    try:
        b = solve_base_state(params[0], n_grid=n_grid)
    except BioconvectError as exc:
        return [SweepRow(q, None, f"base state: {exc}") for q in params]
    for q in params:
        try:
            curve = trace_branch(b, q, k_range, n_points, ords, outer_tol=outer_tol)
            out.append(SweepRow(q, find_critical(curve)))
        except BioconvectError as exc:
            out.append(SweepRow(q, None, str(exc)))
    return out


def parameter_sweep(base, entries, k_range=(K_MIN, 10.0), n_points=60, n_grid=401,
                    ords=None, threads=1, outer_tol=OUTER_TOL):
    """Critical points for a list of parameter sets.

    ``entries`` may hold Ta values, (omega, kappa, Vc[, Ta]) tuples, dicts
    of Parameters fields or Parameters.  The base state is solved once per
    distinct (Vc, kappa, omega, Lt, taxis).  A failing row is recorded and
    the sweep continues.  Rows come back in input order.
    """
    params = [_entry_params(base, e) for e in entries]
    groups = {}
    for i, q in enumerate(params):
        groups.setdefault(q.base_key(), []).append(i)
    jobs = [[params[i] for i in idx] for idx in groups.values()]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            futures = [pool.submit(_sweep_group, j, k_range, n_points, n_grid, ords, outer_tol)
                       for j in jobs]
            results = [f.result() for f in futures]
    else:
        results = [_sweep_group(j, k_range, n_points, n_grid, ords, outer_tol) for j in jobs]
    rows = [None] * len(params)
    for idx, res in zip(groups.values(), results):
        for i, row in zip(idx, res):
            rows[i] = row
    return rows
