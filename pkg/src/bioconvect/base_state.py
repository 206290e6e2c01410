"""Equilibrium (no-flow) state of the suspension.

The concentration obeys

    dn_s/dz = Vc M(G_s(z)) n_s,        int_0^1 n_s dz = 1,

where G_s depends on n_s non-locally through the optical depth
``tau(z) = kappa int_z^1 n_s``.  The coupling is resolved by a damped
fixed-point loop (with Anderson mixing): freeze the light field, shoot
on n_s(0) with RK4 so that the conservation constraint holds, then
recompute the light.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import ConvergenceError, DomainError
from .radiation import solve_fie, steady_flux
from .specfun import GridFunction, cumulative_integral, uniform_grid
from .taxis import TaxisModel, taxis, taxis_derivative

FIE_SIZE = 128
SHOOT_TOL = 1e-10
OUTER_TOL = 1e-8
MAX_NEWTON = 50
MAX_OUTER = 200
RELAXATION = 0.7
ANDERSON_DEPTH = 5
SUBSTEPS = 2
WALL_CELLS = 16
WALL_STEP = 1e-7
WALL_RATIO = 1.25
END_GRADING = 0.5
END_LEVELS = 10


@dataclass(frozen=True)
class Parameters:
    """Dimensionless problem definition.

    Attributes
    ----------
    Sc : float
        Schmidt number.
    Vc : float
        Swimming speed.
    R : float
        Bioconvective Rayleigh number (the eigenvalue in stability runs).
    Ta : float
        Taylor number.
    kappa : float
        Extinction coefficient.
    omega : float
        Scattering albedo.
    Lt : float
        Top collimated intensity.
    taxis : TaxisModel
    """

    Sc: float = 20.0
    Vc: float = 20.0
    R: float = 0.0
    Ta: float = 0.0
    kappa: float = 0.5
    omega: float = 0.0
    Lt: float = 1.0
    taxis: TaxisModel = field(default_factory=TaxisModel)

    def __post_init__(self):
        checks = [(self.Sc > 0, "Sc must be positive"),
                  (self.Vc > 0, "Vc must be positive"),
                  (self.kappa > 0, "kappa must be positive"),
                  (0.0 <= self.omega <= 1.0, "omega must lie in [0, 1]"),
                  (self.Lt > 0, "Lt must be positive"),
                  (self.Ta >= 0, "Ta must be non-negative"),
                  (np.isfinite(self.R), "R must be finite")]
        for ok, msg in checks:
            if not ok:
                raise DomainError(msg)

    def base_key(self):
        """The fields that determine the base state (R, Ta and Sc do not)."""
        return (self.Vc, self.kappa, self.omega, self.Lt, self.taxis)


@dataclass(frozen=True, eq=False)
class BaseState:
    """Converged equilibrium profiles on a uniform z-grid.

    ``G_s = G_sc + G_sd`` is the total intensity, ``q_s`` the magnitude
    of the net radiative flux, ``dM_s`` the taxis slope dM/dG at G_s,
    ``Dn_s = Vc M_s n_s`` and ``DG_sd`` the derivative of the diffuse
    intensity.
    """

    z_grid: np.ndarray
    n_s: np.ndarray
    G_s: np.ndarray
    G_sc: np.ndarray
    G_sd: np.ndarray
    q_s: np.ndarray
    M_s: np.ndarray
    dM_s: np.ndarray
    Dn_s: np.ndarray
    DG_sd: np.ndarray
    tau: np.ndarray
    radiation: object
    kappa: float
    omega: float
    Vc: float
    Lt: float
    iterations: int = 0

    def profile(self, name):
        """Wrap one of the stored profiles as a :class:`GridFunction`."""
        return GridFunction(self.z_grid, getattr(self, name))


def _optical_depth(z, n, kappa):
    run = cumulative_integral(z, n)
    return kappa * (run[-1] - run), kappa * run[-1]


def _shoot(z, growth, growth_mid):
    """RK4 for dn/dz = growth(z) n with n(0) = 1 (growth linear in n)."""
    h = np.diff(z)
    k1 = growth[:-1]
    k2 = growth_mid * (1.0 + 0.5 * h * k1)
    k3 = growth_mid * (1.0 + 0.5 * h * k2)
    k4 = growth[1:] * (1.0 + h * k3)
    factor = 1.0 + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return np.concatenate([[1.0], np.cumprod(factor)])


def _shoot_normalised(z, growth, growth_mid):
    """Newton on n_s(0) so that the RK4 profile integrates to one."""
    fine, on_grid = _shooting_grid(z)
    shape = _shoot(fine, growth, growth_mid)[on_grid]
    n0 = 1.0
    for _ in range(MAX_NEWTON):
        total = cumulative_integral(z, shape)[-1]
        defect = n0 * total - 1.0
        if abs(defect) < SHOOT_TOL:
            return n0 * shape
        n0 -= defect / total
    raise ConvergenceError("shooting on n_s(0) did not converge", residual=abs(defect))


class _LightField:
    """Steady FIE solutions reused while tau_max stays put."""

    def __init__(self, omega, m):
        self.omega, self.m, self.rad = omega, m, None

    def get(self, tau_max):
        if self.rad is None or abs(self.rad.tau_max - tau_max) > 1e-12 * tau_max:
            self.rad = solve_fie(self.omega, tau_max, m=self.m)
        return self.rad


def _shooting_grid(z):
    """z split into SUBSTEPS RK4 steps per cell, plus a geometric sub-mesh at each wall.

    The light field has a (z log z)-type singularity at both walls, which
    would otherwise cost RK4 its order in the first few cells.
    """
    h = z[1] - z[0]
    width = WALL_CELLS * h
    count = int(np.ceil(np.log(width / WALL_STEP) / np.log(WALL_RATIO))) + 1
    grade = np.geomspace(WALL_STEP, width, count)
    sub = (z[:-1, None] + np.diff(z)[:, None] * np.arange(1, SUBSTEPS) / SUBSTEPS).ravel()
    fine = np.unique(np.concatenate([z, sub, z[0] + grade, z[-1] - grade]))
    return fine, np.isin(fine, z)


def _light(z, n, p, fields):
    """Optical depth, FIE solution and M(G_s) on the shooting grid and its midpoints."""
    tau, tau_max = _optical_depth(z, n, p.kappa)
    rad = fields.get(tau_max)
    spline = CubicHermiteSpline(z, tau, -p.kappa * n)
    fine, _ = _shooting_grid(z)
    mid = 0.5 * (fine[1:] + fine[:-1])
    G = p.Lt * rad.upsilon_at(np.clip(spline(fine), 0.0, tau_max))
    G_mid = p.Lt * rad.upsilon_at(np.clip(spline(mid), 0.0, tau_max))
    return tau, rad, p.Vc * taxis(p.taxis, G), p.Vc * taxis(p.taxis, G_mid)


def solve_base_state(p, n_grid=401, m=FIE_SIZE):
    """Solve the coupled concentration/light equilibrium.

    Parameters
    ----------
    p : Parameters
    n_grid : int
        Number of uniform z-nodes (>= 101).
    m : int
        Quadrature size of the steady integral equation.

    Returns
    -------
    BaseState

    Raises
    ------
    ConvergenceError
        If the shooting Newton loop or the outer fixed-point loop fails.
    """
    if n_grid < 101:
        raise DomainError("base-state grid needs at least 101 points")
    z = uniform_grid(n_grid)
    fields = _LightField(p.omega, m)
    n = np.ones_like(z)
    theta, last = 1.0, np.inf
    hist_n, hist_r = [], []
    for it in range(1, MAX_OUTER + 1):
        _, _, growth, growth_mid = _light(z, n, p, fields)
        candidate = _shoot_normalised(z, growth, growth_mid)
        r = candidate - n
        change = float(np.max(np.abs(r)))
        if change < OUTER_TOL:
            n = candidate
            break
        if change > last:
            theta = min(theta, RELAXATION)
        last = change
        n = _mix(z, n, r, theta, hist_n, hist_r)
    else:
        raise ConvergenceError("base-state fixed point did not converge", residual=change)
    return _assemble(z, n, p, fields, it)


def _mix(z, n, r, theta, hist_n, hist_r):
    """Damped fixed-point step with Anderson mixing over a short history."""
    hist_n.append(n.copy())
    hist_r.append(r.copy())
    del hist_n[:-ANDERSON_DEPTH - 1], hist_r[:-ANDERSON_DEPTH - 1]
    step = n + theta * r
    if len(hist_n) > 1:
        dR = np.diff(hist_r, axis=0).T
        dN = np.diff(hist_n, axis=0).T
        gamma = np.linalg.lstsq(dR, r, rcond=None)[0]
        mixed = step - (dN + theta * dR) @ gamma
        if np.all(mixed > 0):
            step = mixed
        else:
            hist_n.clear()
            hist_r.clear()
    step = np.maximum(step, 0.0)
    return step / cumulative_integral(z, step)[-1]


def _assemble(z, n, p, fields, iterations):
    tau, tau_max = _optical_depth(z, n, p.kappa)
    rad = steady_flux(fields.get(tau_max))
    t = np.clip(tau, 0.0, rad.tau_max)
    G = p.Lt * rad.upsilon_at(t)
    G_sc = p.Lt * np.exp(-t)
    G_sd = G - G_sc
    M_s = taxis(p.taxis, G)
    DG_sd = GridFunction(z, G_sd).derivative().values
    return BaseState(
        z_grid=z, n_s=n, G_s=G, G_sc=G_sc, G_sd=G_sd, q_s=rad.flux_at(t),
        M_s=M_s, dM_s=taxis_derivative(p.taxis, G), Dn_s=p.Vc * M_s * n, DG_sd=DG_sd,
        tau=tau, radiation=rad, kappa=p.kappa, omega=p.omega, Vc=p.Vc, Lt=p.Lt,
        iterations=iterations)


def base_state_residual(b, p):
    """Max of the concentration-equation residual and the conservation defect.

    The equation is checked cell by cell in integrated form,
    ``[n_{j+1} - n_j exp(Vc int_cell M(G_s))] / h``, with a 5-point
    Gauss-Legendre rule per cell.  Unlike a finite-difference check this
    stays accurate next to the walls, where G_s is not smooth.
    """
    z, n = b.z_grid, b.n_s
    rad = b.radiation
    tau, _ = _optical_depth(z, n, p.kappa)
    spline = CubicHermiteSpline(z, tau, -p.kappa * n)

    def growth(a, c):
        G = p.Lt * rad.upsilon_at(np.clip(spline(0.5 * (a + c)[..., None]
                                                 + 0.5 * (c - a)[..., None] * x), 0.0, rad.tau_max))
        return p.Vc * 0.5 * (c - a) * (taxis(p.taxis, G) @ w)

    x, w = np.polynomial.legendre.leggauss(5)
    h = np.diff(z)
    growth_cells = growth(z[:-1], z[1:])
    # end cells again on a graded subdivision towards the wall
    cuts = h[0] * END_GRADING ** np.arange(2 * END_LEVELS, 0, -1)
    inner = np.concatenate([[0.0], cuts, [h[0]]])
    growth_cells[0] = growth(z[0] + inner[:-1], z[0] + inner[1:]).sum()
    growth_cells[-1] = growth(z[-1] - inner[1:], z[-1] - inner[:-1]).sum()
    res = np.abs(n[1:] - n[:-1] * np.exp(growth_cells)) / h
    return float(max(res.max(), abs(cumulative_integral(z, n)[-1] - 1.0)))
