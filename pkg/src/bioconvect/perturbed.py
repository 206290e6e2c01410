"""Perturbed radiation field and the stability coefficients.

A normal-mode concentration perturbation ``N(z) exp(i k x)`` (with
``Phi = int_1^z N``) perturbs the light.  The collimated part is
``G1c = kappa G_sc Phi``.  The diffuse part Psi(z, s) solves, for every
direction s = (xi, eta, nu),

    nu dPsi/dz + (i k xi + kappa n_s) Psi
        = (omega kappa / 4 pi) [n_s (G1c + G1d) + G_s N] - kappa N L_sd(z, nu),

with zero inflow through both walls.  L_sd is the steady diffuse
intensity and G1d the angular integral of Psi.  The transport equation is
discretised by discrete ordinates and a linear-characteristic cell
integrator on the base-state grid, and G1d is found by source iteration.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConvergenceError, DomainError
from .specfun import GridFunction

SOURCE_TOL = 1e-9
MAX_SWEEPS = 500
SERIES_CUTOFF = 0.05
POLAR_GRADING = 3
CACHE_ELEMENTS = 1 << 16


@dataclass(frozen=True, eq=False)
class OrdinateSet:
    """Product quadrature on the unit sphere.

    A graded Gauss-Legendre rule in ``mu = cos(theta)`` on each
    half-range times a uniform azimuthal rule.  ``nu`` is the vertical direction cosine.
    """

    xi: np.ndarray
    eta: np.ndarray
    nu: np.ndarray
    weights: np.ndarray
    n_polar: int
    n_azimuth: int

    @property
    def size(self):
        return self.nu.size


def ordinate_set(n_polar=24, n_azimuth=16):
    """Build the product rule.

    Parameters
    ----------
    n_polar : int
        Gauss-Legendre nodes per hemisphere (>= 2, the least that integrates
        the graded weight exactly).
    n_azimuth : int
        Azimuthal nodes, >= 2; placed at ``(k + 1/2) 2 pi / n_azimuth``.

    Notes
    -----
    The polar rule is applied in ``u = |mu|^(1/3)``.  Close to a wall the
    intensity has an angular boundary layer of width ~ the optical
    distance to the wall, and grading the nodes towards grazing
    directions resolves it; a plain rule in mu converges only like
    1/n_polar^2 there.
    """
    if n_polar < 2:
        raise DomainError("need at least two polar ordinates per hemisphere")
    if n_azimuth < 2:
        raise DomainError("need at least two azimuthal ordinates")
    x, w = np.polynomial.legendre.leggauss(int(n_polar))
    u, wu = 0.5 * (x + 1.0), 0.5 * w
    mu = u ** POLAR_GRADING
    wmu = POLAR_GRADING * u ** (POLAR_GRADING - 1) * wu
    mu = np.concatenate([mu, -mu])
    wmu = np.concatenate([wmu, wmu])
    phi = (np.arange(n_azimuth) + 0.5) * 2.0 * np.pi / n_azimuth
    wphi = np.full(n_azimuth, 2.0 * np.pi / n_azimuth)
    nu = np.repeat(mu, n_azimuth)
    sin_t = np.sqrt(1.0 - nu ** 2)
    xi = sin_t * np.tile(np.cos(phi), mu.size)
    eta = sin_t * np.tile(np.sin(phi), mu.size)
    weights = np.outer(wmu, wphi).ravel()
    return OrdinateSet(xi, eta, nu, weights, int(n_polar), int(n_azimuth))


@dataclass(frozen=True, eq=False)
class PerturbedRadiation:
    """Perturbed radiation profiles on the base-state grid.

    ``G1c``/``G1d`` are the collimated and diffuse perturbed intensities,
    ``P``/``Q`` the x/y perturbed flux.  The aleph fields are filled by
    :func:`stability_coefficients`.
    """

    z_grid: np.ndarray
    G1c: np.ndarray
    G1d: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    k: float
    sweeps: int = 0
    aleph0: np.ndarray = None
    aleph1: np.ndarray = None
    aleph2: np.ndarray = None
    aleph3: np.ndarray = None


def _values(f, b):
    values = f.values if isinstance(f, GridFunction) else np.asarray(f)
    if values.shape != b.z_grid.shape:
        raise DomainError("perturbation must be sampled on the base-state grid")
    return values


def perturbed_collimated(b, Phi, kappa):
    """Collimated perturbed intensity ``kappa G_sc Phi`` on the base-state grid."""
    return GridFunction(b.z_grid, kappa * b.G_sc * _values(Phi, b))


def _f0_f1(x):
    """Linear-source cell weights int_0^1 e^{-x v} v dv and int_0^1 e^{-x v}(1 - v) dv."""
    x = np.asarray(x, dtype=complex)
    small = np.abs(x) < SERIES_CUTOFF
    xs = np.where(small, 1.0, x)
    e = np.exp(-xs)
    f0 = (1.0 - e) / xs ** 2 - e / xs
    f1 = 1.0 / xs - (1.0 - e) / xs ** 2
    if np.any(small):
        xm = x[small]
        s0 = np.zeros_like(xm)
        s1 = np.zeros_like(xm)
        term = np.ones_like(xm)
        for j in range(10):
            s0 = s0 + term / (j + 2)
            s1 = s1 + term / ((j + 1) * (j + 2))
            term = term * (-xm) / (j + 1)
        f0[small] = s0
        f1[small] = s1
    return f0, f1


class _Sweeper:
    """Cell coefficients for marching a set of directions across the grid.

    Upward directions march from z = 0, downward ones from z = 1.  Each
    group is stored in marching order, cell-major, so a marching step
    reads contiguous memory.
    """

    def __init__(self, b, k, nu, xi):
        z = b.z_grid
        self.nz = z.size
        h = np.diff(z)
        a = 1j * k * xi[:, None] + b.kappa * b.n_s[None, :]
        x = 0.5 * h * (a[:, 1:] + a[:, :-1]) / np.abs(nu)[:, None]
        f0, f1 = _f0_f1(x)
        scale = h[None, :] / np.abs(nu)[:, None]
        self.groups = []
        for sel, flip in ((np.flatnonzero(nu > 0), False), (np.flatnonzero(nu < 0), True)):
            order = slice(None, None, -1) if flip else slice(None)
            self.groups.append(dict(
                sel=sel, order=order,
                decay=np.ascontiguousarray(np.exp(-x[sel][:, order].T)),
                near=np.ascontiguousarray((scale * f0)[sel][:, order].T),
                far=np.ascontiguousarray((scale * f1)[sel][:, order].T)))

    def sweep(self, S):
        """Intensity for every direction with source S (dirs, nz); zero inflow."""
        psi = np.zeros(S.shape, dtype=complex)
        for g in self.groups:
            src = S[g["sel"]][:, g["order"]].T
            upstream = g["near"] * src[:-1] + g["far"] * src[1:]
            out = np.zeros(src.shape, dtype=complex)
            for j in range(self.nz - 1):
                out[j + 1] = g["decay"][j] * out[j] + upstream[j]
            psi[g["sel"]] = out.T[:, g["order"]]
        return psi

    def moments(self, iso, direct, L, weights):
        """Angular moments of the intensity for a batch of sources.

        The source of direction d in batch member m is
        ``iso[m, z] + direct[m, z] * L[d, z]``; ``weights`` is (r, dirs).
        Returns an array (r, batch, nz).
        """
        batch = iso.shape[0]
        total = np.zeros((weights.shape[0], batch, self.nz), dtype=complex)
        for g in self.groups:
            sel, order = g["sel"], g["order"]
            Lg = L[sel][:, order].T[:, None, :]
            I = iso[:, order].T[:, :, None]
            D = direct[:, order].T[:, :, None]
            Wg = weights[:, sel]
            # march in blocks of cells small enough to stay in cache
            block = max(1, CACHE_ELEMENTS // (batch * sel.size))
            out = np.zeros((weights.shape[0], batch, self.nz), dtype=complex)
            psi = np.zeros((batch, sel.size), dtype=complex)
            for lo in range(0, self.nz - 1, block):
                hi = min(lo + block, self.nz - 1)
                src = I[lo:hi + 1] + D[lo:hi + 1] * Lg[lo:hi + 1]
                run = g["near"][lo:hi, None, :] * src[:-1]
                run += g["far"][lo:hi, None, :] * src[1:]
                decay = g["decay"]
                for j in range(hi - lo):
                    run[j] += decay[lo + j] * psi
                    psi = run[j]
                out[:, :, lo + 1:hi + 1] = np.einsum("zbd,rd->rbz", run, Wg)
            total += out[:, :, order]
        return total


def _distinct(ords, k):
    """Collapse ordinates the transport problem cannot tell apart.

    Every source is independent of azimuth, so Psi depends on a direction
    only through nu (and xi when k != 0).  Returns the representative
    ordinate of each class and the class sums of w, w xi and w eta.
    """
    key = np.round(ords.nu, 13) if k == 0 else np.round(np.c_[ords.nu, ords.xi], 13)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    sums = [np.bincount(inverse, weights=v, minlength=first.size)
            for v in (ords.weights, ords.weights * ords.xi, ords.weights * ords.eta)]
    return first, sums


def steady_diffuse_intensity(b, ords):
    """Steady diffuse intensity L_sd(z, nu) for every ordinate (dirs, nz).

    Same discrete transport operator as the perturbation (k = 0) with
    the isotropic source ``omega kappa n_s G_s / 4 pi``.
    """
    first, _ = _distinct(ords, 0.0)
    _, inverse = np.unique(np.round(ords.nu, 13), return_inverse=True)
    sweeper = _Sweeper(b, 0.0, ords.nu[first], ords.xi[first])
    source = b.omega * b.kappa * b.n_s * b.G_s / (4.0 * np.pi)
    L = sweeper.sweep(np.broadcast_to(source, (first.size, source.size))).real
    return L[inverse.ravel()]


def solve_perturbed_diffuse(b, N, Phi, k, ords=None, tol=SOURCE_TOL, max_sweeps=MAX_SWEEPS):
    """Diffuse perturbed radiation by source iteration.

    Parameters
    ----------
    b : BaseState
    N, Phi : GridFunction or array_like
        Concentration perturbation and its integral from the top, on the
        base-state grid (real or complex).
    k : float
        Horizontal wavenumber, along x.
    ords : OrdinateSet, optional
        Defaults to 24 polar x 16 azimuthal ordinates.

    Returns
    -------
    PerturbedRadiation

    Raises
    ------
    ConvergenceError
        If the iteration has not converged after ``max_sweeps`` sweeps; the
        residual attribute carries the estimated spectral radius.
    """
    N = np.asarray(_values(N, b), dtype=complex)
    Phi = np.asarray(_values(Phi, b), dtype=complex)
    G1c = b.kappa * b.G_sc * Phi
    G1d, P, Q, sweeps = diffuse_response(b, N[None, :], Phi[None, :], k, ords, tol, max_sweeps)
    return PerturbedRadiation(b.z_grid, G1c, G1d[0], P[0], Q[0], float(k), sweeps=sweeps)


def diffuse_response(b, N, Phi, k, ords=None, tol=SOURCE_TOL, max_sweeps=MAX_SWEEPS):
    """Batched source iteration for several perturbations at once.

    ``N`` and ``Phi`` have shape (batch, nz).  Returns G1d, P, Q with the
    same shape and the number of sweeps used; every member of the batch
    meets the tolerance.
    """
    ords = ordinate_set() if ords is None else ords
    N = np.atleast_2d(np.asarray(N, dtype=complex))
    Phi = np.atleast_2d(np.asarray(Phi, dtype=complex))
    if N.shape != Phi.shape or N.shape[1] != b.z_grid.size:
        raise DomainError("perturbation must be sampled on the base-state grid")
    if b.omega == 0.0:
        zeros = np.zeros_like(N)
        return zeros, zeros.copy(), zeros.copy(), 0
    first, (w, wxi, weta) = _distinct(ords, k)
    sweeper = _Sweeper(b, k, ords.nu[first], ords.xi[first])
    L_sd = _cached_diffuse(b, ords)[first]
    c = b.omega * b.kappa / (4.0 * np.pi)
    iso = c * (b.n_s * b.kappa * b.G_sc * Phi + b.G_s * N)
    direct = -b.kappa * N
    weights = np.vstack([w, wxi, weta])
    fixed = sweeper.moments(iso, direct, L_sd, weights)
    scale = np.maximum(np.abs(fixed[0]).max(axis=1), 1e-300)
    # the scattered part is isotropic: only G1d feeds back
    zero = np.zeros_like(N)
    G1d, mom = zero, fixed
    last, theta, ratio = np.inf, 1.0, 0.0
    for sweep in range(1, max_sweeps + 1):
        mom = fixed + sweeper.moments(c * b.n_s * G1d, zero, L_sd, weights)
        new = mom[0]
        rel = np.max(np.abs(new - G1d).max(axis=1) / np.maximum(scale, np.abs(new).max(axis=1)))
        if rel > last:
            theta = 0.5
        ratio = rel / last if np.isfinite(last) and last > 0 else ratio
        last = rel
        G1d = new if theta == 1.0 else (1.0 - theta) * G1d + theta * new
        if rel <= tol:
            break
    else:
        raise ConvergenceError("source iteration did not converge", residual=ratio)
    return G1d, mom[1], mom[2], sweep


def _cached_diffuse(b, ords):
    cache = b.__dict__.setdefault("_diffuse_cache", {})
    key = (ords.n_polar, ords.n_azimuth)
    if key not in cache:
        cache[key] = steady_diffuse_intensity(b, ords)
    return cache[key]


def stability_coefficients(b, pr, p):
    """Fill the aleph coefficient profiles of the concentration equation.

    aleph0 = Vc D(n_s G1d M') - i k Vc n_s M_s P / q_s
    aleph1 = kappa Vc D(n_s G_sc M')
    aleph2 = 2 kappa Vc n_s G_sc M' + Vc M' DG_sd
    aleph3 = Vc M_s
    """
    if np.any(b.q_s < 1e-12):
        raise DomainError("radiative flux magnitude underflows; coefficients undefined")
    z = b.z_grid
    Vc = p.Vc
    d = lambda f: GridFunction(z, f).derivative().values
    a0 = Vc * d(b.n_s * pr.G1d * b.dM_s) - 1j * pr.k * Vc * b.n_s * b.M_s * pr.P / b.q_s
    a1 = p.kappa * Vc * d(b.n_s * b.G_sc * b.dM_s)
    a2 = 2.0 * p.kappa * Vc * b.n_s * b.G_sc * b.dM_s + Vc * b.dM_s * b.DG_sd
    a3 = Vc * b.M_s
    return replace(pr, aleph0=a0, aleph1=a1, aleph2=a2, aleph3=a3)
