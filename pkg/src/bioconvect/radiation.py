"""Steady radiation field of a horizontally uniform, isotropically scattering layer.

The total intensity depends on depth only through the optical depth
``tau = kappa * int_z^1 n_s``; in units of the top collimated intensity
it solves

    U(tau) = exp(-tau) + (omega / 2) int_0^tau_max U(t) E1(|tau - t|) dt.

The equation is discretised by Nystrom's method on Gauss-Legendre panels
that are geometrically graded towards both ends (U' is logarithmically
singular there).  The log singularity of the kernel is integrated
against the panel Lagrange basis (product integration), and the
diagonal is corrected with the exact kernel integral

    int_0^tau_max E1(|tau - t|) dt = 2 - E2(tau) - E2(tau_max - tau).
"""

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import linalg

from .errors import DomainError, SingularSystemError
from .specfun import (GridFunction, composite_gauss_legendre, cumulative_integral,
                      exp_integral)

PANEL_ORDER = 12
GRADING_RATIO = 0.35
GRADING_LEVELS = 10

# Graded rule for the near-singular part of each panel integral: s = L u^4.
_U, _UW = np.polynomial.legendre.leggauss(40)
_U, _UW = 0.5 * (_U + 1.0), 0.5 * _UW
_GRADE_POWER = 4


@dataclass(frozen=True, eq=False)
class SteadyRadiation:
    """Steady radiation on the optical-depth nodes of the Nystrom rule.

    ``upsilon`` is U(tau) (total intensity per unit top intensity),
    ``collimated`` is Lt exp(-tau) and ``flux`` the magnitude of the net
    (downward) radiative flux, populated by :func:`steady_flux`.
    """

    tau_grid: np.ndarray
    upsilon: np.ndarray
    collimated: np.ndarray
    omega: float
    tau_max: float
    edges: np.ndarray
    weights: np.ndarray
    kappa: float = 1.0
    Lt: float = 1.0
    flux: np.ndarray = None
    residual: float = 0.0

    def upsilon_at(self, tau):
        """U at arbitrary optical depths.

        Panel-wise Lagrange interpolation in the interior.  In the two end
        panels, where U' is singular, the integral equation itself is
        evaluated (Nystrom interpolation).
        """
        out = np.array(_panel_interpolate(self.edges, self.upsilon, tau), dtype=float)
        if self.omega == 0.0:
            return out
        t = np.clip(np.asarray(tau, dtype=float), 0.0, self.tau_max)
        snap = 1e-14 * self.tau_max
        t = np.where(t < snap, 0.0, np.where(t > self.tau_max - snap, self.tau_max, t))
        ends = (t < self.edges[1]) | (t > self.edges[-2])
        if np.any(ends):
            x = np.atleast_1d(t)[np.atleast_1d(ends)]
            W = product_weights(self.edges, x, 1)
            vals = np.exp(-x) + 0.5 * self.omega * (W @ self.upsilon)
            if out.ndim == 0:
                return float(vals[0])
            out[ends] = vals
        return out

    def flux_at(self, tau):
        if self.flux is None:
            raise ValueError("flux not populated; call steady_flux first")
        return _panel_interpolate(self.edges, self.flux, tau)


def _panel_edges(tau_max, m):
    n_panels = max(2, int(m) // PANEL_ORDER)
    base = np.linspace(0.0, tau_max, n_panels + 1)
    h = base[1]
    grade = h * GRADING_RATIO ** np.arange(GRADING_LEVELS, 0, -1)
    return np.unique(np.concatenate([[0.0], grade, base[1:-1], tau_max - grade[::-1], [tau_max]]))


@lru_cache(maxsize=None)
def _reference_rule():
    x, w = np.polynomial.legendre.leggauss(PANEL_ORDER)
    # barycentric weights of the reference nodes
    bary = np.array([1.0 / np.prod(x[j] - np.delete(x, j)) for j in range(PANEL_ORDER)])
    return x, w, bary


def _lagrange_basis(t):
    """Reference Lagrange basis at points t in [-1, 1]: shape (len(t), order)."""
    x, _, bary = _reference_rule()
    diff = t[:, None] - x[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15)
    diff = np.where(exact, 1.0, diff)
    terms = bary / diff
    basis = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    basis[rows] = exact[rows].astype(float)
    return basis


def _panel_interpolate(edges, values, tau):
    tau = np.asarray(tau, dtype=float)
    flat = tau.ravel()
    lo, hi = edges[0], edges[-1]
    if np.any(flat < lo - 1e-12) or np.any(flat > hi + 1e-12 * max(1.0, hi)):
        raise DomainError(f"optical depth outside [{lo}, {hi}]")
    flat = np.clip(flat, lo, hi)
    p = np.clip(np.searchsorted(edges, flat, side="right") - 1, 0, edges.size - 2)
    a, b = edges[p], edges[p + 1]
    ref = (2.0 * flat - a - b) / (b - a)
    out = np.empty(flat.shape, dtype=np.result_type(values, float))
    for panel in np.unique(p):
        sel = p == panel
        basis = _lagrange_basis(ref[sel])
        out[sel] = basis @ values[panel * PANEL_ORDER:(panel + 1) * PANEL_ORDER]
    return out.reshape(tau.shape) if tau.ndim else out[0]


def _piece_weights(x, lo, hi, a, b, order_kernel):
    """int_lo^hi l_j(t) E_n(|x - t|) dt for the Lagrange basis of panel [a, b].

    Vectorised over targets: ``x``, ``lo`` and ``hi`` are arrays of equal
    length and each ``x`` must lie outside its ``(lo, hi)``.  The rule is
    graded towards the end of [lo, hi] closest to x.  Returns an array of
    shape (targets, PANEL_ORDER).
    """
    length = hi - lo
    valid = length > 1e-14 * (b - a)
    length = np.where(valid, length, 0.0)
    left = x <= lo
    near = np.where(left, lo, hi)
    sign = np.where(left, 1.0, -1.0)
    s = length[:, None] * _U ** _GRADE_POWER
    ws = length[:, None] * _GRADE_POWER * _U ** (_GRADE_POWER - 1) * _UW
    t = near[:, None] + sign[:, None] * s
    dist = np.abs(near - x)[:, None] + s
    dist = np.where(valid[:, None], dist, 1.0)
    basis = _lagrange_basis(((2.0 * t - a - b) / (b - a)).ravel())
    basis = basis.reshape(x.size, _U.size, PANEL_ORDER)
    return np.einsum("tq,tqj->tj", exp_integral(order_kernel, dist) * ws, basis)


def product_weights(edges, targets, order_kernel=1, side="both"):
    """Product-integration weights for the kernel E_n(|x - t|).

    Row i of the result integrates ``f(t) E_n(|x_i - t|)`` against the
    nodal values of ``f`` on the composite panel rule defined by ``edges``,
    over ``t < x_i`` (``side="below"``), ``t > x_i`` (``"above"``) or the
    whole interval.  Panels closer to x_i than their own width are
    integrated with a graded rule; the rest use the panel Gauss rule.
    """
    rule = composite_gauss_legendre(edges, PANEL_ORDER)
    nodes, qw = rule.nodes, rule.weights
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    d = np.abs(targets[:, None] - nodes[None, :])
    mask = d > 0
    if side == "below":
        mask &= nodes[None, :] < targets[:, None]
    elif side == "above":
        mask &= nodes[None, :] > targets[:, None]
    W = np.zeros(d.shape)
    W[mask] = exp_integral(order_kernel, d[mask]) * np.broadcast_to(qw, d.shape)[mask]
    for p in range(edges.size - 1):
        a, b = edges[p], edges[p + 1]
        gap = np.maximum(np.maximum(a - targets, targets - b), 0.0)
        sel = gap < b - a
        if side == "below":
            sel &= a < targets
        elif side == "above":
            sel &= b > targets
        if not np.any(sel):
            continue
        x = targets[sel]
        lo = np.full(x.size, a)
        hi = np.full(x.size, b)
        if side == "below":
            hi = np.minimum(b, x)
        elif side == "above":
            lo = np.maximum(a, x)
        inside = (lo < x) & (x < hi)
        block = np.empty((x.size, PANEL_ORDER))
        if np.any(inside):
            xi = x[inside]
            block[inside] = (_piece_weights(xi, lo[inside], xi, a, b, order_kernel)
                             + _piece_weights(xi, xi, hi[inside], a, b, order_kernel))
        if np.any(~inside):
            out = ~inside
            block[out] = _piece_weights(x[out], lo[out], hi[out], a, b, order_kernel)
        rows = np.flatnonzero(sel)
        W[rows, p * PANEL_ORDER:(p + 1) * PANEL_ORDER] = block
    return W


def solve_fie(omega, tau_max, m=64, Lt=1.0, kappa=None):
    """Nystrom solution of the steady total-intensity integral equation.

    Parameters
    ----------
    omega : float
        Scattering albedo in [0, 1].
    tau_max : float
        Optical thickness of the layer.
    m : int
        Nominal quadrature size (uniform-panel nodes, >= 16); endpoint
        grading adds a fixed number of panels.
    """
    if not 0.0 <= omega <= 1.0:
        raise DomainError("albedo must lie in [0, 1]")
    if not tau_max > 0:
        raise DomainError("optical thickness must be positive")
    if m < 16:
        raise DomainError("quadrature size must be at least 16")
    edges = _panel_edges(float(tau_max), m)
    rule = composite_gauss_legendre(edges, PANEL_ORDER)
    tau = rule.nodes
    rhs = np.exp(-tau)
    if omega == 0.0:
        upsilon, residual = rhs.copy(), 0.0
    else:
        W = product_weights(edges, tau, 1)
        exact = 2.0 - exp_integral(2, tau) - exp_integral(2, tau_max - tau)
        A = -0.5 * omega * W
        A[np.diag_indices_from(A)] += 1.0 - 0.5 * omega * (exact - W.sum(axis=1))
        try:
            lu = linalg.lu_factor(A, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise SingularSystemError(f"Nystrom system is singular: {exc}") from exc
        if np.any(np.abs(np.diag(lu[0])) < 1e-14):
            raise SingularSystemError("Nystrom system is numerically singular")
        upsilon = linalg.lu_solve(lu, rhs)
        residual = float(np.max(np.abs(A @ upsilon - rhs)))
    return SteadyRadiation(
        tau_grid=tau, upsilon=upsilon, collimated=Lt * rhs, omega=float(omega),
        tau_max=float(tau_max), edges=edges, weights=rule.weights,
        kappa=float(kappa) if kappa is not None else float(tau_max), Lt=float(Lt),
        residual=residual)


def diffuse_upward_flux(rad, tau):
    """Net upward diffuse flux at optical depths ``tau`` (includes Lt)."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if rad.omega == 0.0:
        return np.zeros_like(tau)
    above = product_weights(rad.edges, tau, 2, side="above") @ rad.upsilon
    below = product_weights(rad.edges, tau, 2, side="below") @ rad.upsilon
    return 0.5 * rad.omega * rad.Lt * (above - below)


def steady_flux(rad):
    """Populate the net flux magnitude q_s = Lt exp(-tau) - q_up^d at the nodes."""
    q = rad.collimated - diffuse_upward_flux(rad, rad.tau_grid)
    return replace(rad, flux=q)


def flux_by_ordinates(rad, tau, n_polar=256, n_path=64):
    """Net flux magnitude from the formal solution on ``n_polar`` polar ordinates.

    Independent of the E2 closed form: the diffuse intensity along each
    ordinate is the attenuated line integral of the isotropic scattering
    source, and the flux is its first angular moment.  Along a ray of
    direction cosine mu the substitution s = 1 - exp(-|t - t0| / mu) makes
    the path integrand smooth.
    """
    mu, wmu = np.polynomial.legendre.leggauss(n_polar // 2)
    mu, wmu = 0.5 * (mu + 1.0), 0.5 * wmu
    s, ws = np.polynomial.legendre.leggauss(n_path)
    s, ws = 0.5 * (s + 1.0), 0.5 * ws
    out = []
    for t0 in np.atleast_1d(np.asarray(tau, dtype=float)):
        moments = []
        for depth_span, sign in ((rad.tau_max - t0, 1.0), (t0, -1.0)):
            if depth_span <= 0:
                moments.append(0.0)
                continue
            top = -np.expm1(-depth_span / mu)
            ss = top[:, None] * s[None, :]
            t = t0 - sign * mu[:, None] * np.log1p(-ss)
            t = np.clip(t, 0.0, rad.tau_max)
            src = rad.omega * rad.Lt * rad.upsilon_at(t) / (4.0 * np.pi)
            intensity = (src * ws).sum(axis=1) * top
            moments.append(2.0 * np.pi * np.sum(wmu * mu * intensity))
        up, down = moments
        out.append(rad.Lt * np.exp(-t0) - (up - down))
    return np.array(out)


def optical_depth(n_profile, kappa):
    """tau(z) = kappa int_z^1 n dz' on the profile's grid."""
    running = cumulative_integral(n_profile.grid, n_profile.values)
    return kappa * (running[-1] - running)


def total_intensity_on_z(rad, n_profile, kappa=None):
    """G_s(z) = Lt U(tau(z)) for a concentration profile on [0, 1]."""
    if np.any(np.asarray(n_profile.values) < 0):
        raise DomainError("concentration must be non-negative")
    kappa = rad.kappa if kappa is None else kappa
    tau = optical_depth(n_profile, kappa)
    if tau[0] > rad.tau_max * (1 + 1e-9) + 1e-12:
        raise DomainError("profile is optically thicker than the solved layer")
    tau = np.minimum(tau, rad.tau_max)
    return GridFunction(n_profile.grid, rad.Lt * rad.upsilon_at(tau))
