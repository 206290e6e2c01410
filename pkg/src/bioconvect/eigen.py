"""Linear-stability eigenproblem for the onset of bioconvection.

Normal modes ``exp(sigma t + i k x)`` of (W, Z, Phi) satisfy

    (s + k^2 - D^2)(D^2 - k^2) W + sqrt(Ta) DZ = R k^2 DPhi,   s = sigma / Sc
    (s + k^2 - D^2) Z = sqrt(Ta) DW
    D F = (sigma + k^2) N + Dn_s W - i k Vc n_s M_s P / q_s

with ``N = DPhi`` and the cell flux

    F = DN - Vc M_s N - Vc n_s M'(G_s) (kappa G_sc Phi + G1d).

Boundary conditions: W = DW = Z = F = 0 at z = 0 (rigid) and
W = D^2W = DZ = Phi = F = 0 at z = 1 (stress-free).  Written as nine
first-order equations for y = (W, W', W'', W''', Z, Z', Phi, N, F) the
problem is discretised by the trapezoidal box scheme and solved by
Newton-Raphson-Kantorovich iteration on (y, R) or (y, R, Im sigma) with
the normalisation D^2W(0) = 1.  The nonlocal radiation terms (G1d, P)
are frozen during each Newton solve and updated in an outer loop.

An independent Chebyshev collocation of the same operator, with the
radiation terms assembled as a dense matrix, serves as an oracle.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import barycentric_interpolate

from .errors import ConvergenceError, DomainError, SingularSystemError
from .perturbed import diffuse_response, ordinate_set, solve_perturbed_diffuse
from .specfun import GridFunction

NEWTON_TOL = 1e-9
MAX_NEWTON = 30
MAX_HALVINGS = 12
OUTER_TOL = 1e-7
MAX_OUTER = 60
FOLD_TOL = 1e-6
SEED_SHIFT = 150.0
COUPLING_RANK = 16
COUPLING_SPAN = 0.15
COUPLING_TOL = 1e-6
REBUILD_AFTER = 8
N_VARS = 9
W, W1, W2, W3, Z, Z1, PHI, N, F = range(N_VARS)


@dataclass(frozen=True, eq=False)
class EigenSolution:
    """Neutral eigenfunction and eigenvalue at one wavenumber.

    ``state`` holds all nine first-order variables on the grid (nz, 9);
    ``G1d`` and ``P`` are the radiation terms it was converged with.
    ``converged`` is the final relative residual of the discrete system.
    ``fold`` flags an oscillatory solve that collapsed onto sigma_im = 0.
    """

    z_grid: np.ndarray
    W: np.ndarray
    Z: np.ndarray
    Phi: np.ndarray
    N: np.ndarray
    R: float
    sigma_im: float
    k: float
    converged: float
    mode: str
    state: np.ndarray
    G1d: np.ndarray
    P: np.ndarray
    outer_iterations: int = 0
    fold: bool = False
    coupling: object = None


class _BoxSystem:
    """Sparse box-scheme matrices, affine in R and sigma.

    The discrete system reads ``(A0 + R AR + sigma AS) y = f(G1d, P)``.
    """

    def __init__(self, b, p, k, coupling=None):
        if k <= 0:
            raise DomainError("wavenumber must be positive")
        if np.any(b.q_s < 1e-12):
            raise DomainError("radiative flux magnitude underflows; coefficients undefined")
        self.b, self.p, self.k = b, p, float(k)
        z = b.z_grid
        self.nz = z.size
        self.size = N_VARS * self.nz
        k2 = k * k
        rt = np.sqrt(p.Ta)
        one = np.ones(self.nz)
        const = [(W, W1, one), (W1, W2, one), (W2, W3, one),
                 (W3, W, -k2 * k2 * one), (W3, W2, 2 * k2 * one), (W3, Z1, rt * one),
                 (Z, Z1, one), (Z1, Z, k2 * one), (Z1, W1, -rt * one),
                 (PHI, N, one),
                 (N, F, one), (N, N, p.Vc * b.M_s),
                 (N, PHI, p.Vc * b.n_s * b.dM_s * p.kappa * b.G_sc),
                 (F, N, k2 * one), (F, W, b.Dn_s)]
        in_R = [(W3, N, -k2 * one)]
        in_sigma = [(W3, W, -k2 / p.Sc * one), (W3, W2, one / p.Sc),
                    (Z1, Z, one / p.Sc), (F, N, one)]
        bottom = [W, W1, Z, F]
        top = [W, W2, Z1, PHI, F]
        self.A0 = self._assemble(const, bottom, top)
        self.AR = self._assemble(in_R)
        self.AS = self._assemble(in_sigma)
        self.norm_index = W2
        self.forcing_scale = (p.Vc * b.n_s * b.dM_s, -1j * k * p.Vc * b.n_s * b.M_s / b.q_s)
        self.K = None if coupling is None else coupling.matrix(self)

    def _assemble(self, entries, bottom=(), top=()):
        nz, size = self.nz, self.size
        h = np.diff(self.b.z_grid)
        rows, cols, vals = [], [], []
        offset = 4  # bottom boundary rows come first
        cell = np.arange(nz - 1)
        for r, c, v in entries:
            # -(I + h/2 A_j) y_j + (I - h/2 A_{j+1}) y_{j+1}, A parts only
            rows += [offset + cell * N_VARS + r] * 2
            cols += [cell * N_VARS + c, (cell + 1) * N_VARS + c]
            vals += [-0.5 * h * v[:-1], -0.5 * h * v[1:]]
        if bottom or top:
            for var in range(N_VARS):
                rows += [offset + cell * N_VARS + var] * 2
                cols += [cell * N_VARS + var, (cell + 1) * N_VARS + var]
                vals += [-np.ones(nz - 1), np.ones(nz - 1)]
            last = offset + (nz - 1) * N_VARS
            for i, var in enumerate(bottom):
                rows.append([i]), cols.append([var]), vals.append([1.0])
            for i, var in enumerate(top):
                rows.append([last + i]), cols.append([(nz - 1) * N_VARS + var]), vals.append([1.0])
        rows, cols, vals = (np.concatenate(a) for a in (rows, cols, vals))
        return sp.csc_matrix((vals, (rows, cols)), shape=(size, size))

    def forcing(self, G1d, P):
        """Right-hand side carrying the frozen radiation terms."""
        h = np.diff(self.b.z_grid)
        fN = self.forcing_scale[0] * G1d
        fF = self.forcing_scale[1] * P
        rhs = np.zeros(self.size, dtype=complex)
        base = 4 + np.arange(self.nz - 1) * N_VARS
        rhs[base + N] = 0.5 * h * (fN[:-1] + fN[1:])
        rhs[base + F] = 0.5 * h * (fF[:-1] + fF[1:])
        # the cell-flux rows: F is defined with G1d, so F = 0 needs no forcing
        return rhs

    def operator(self, R, sigma):
        A = self.A0 + R * self.AR + sigma * self.AS
        return A if self.K is None else A - self.K


@dataclass(frozen=True, eq=False)
class RadiationCoupling:
    """Low-rank model of the radiation response used inside Newton.

    Phi is sampled at Chebyshev points ``nodes``; each cardinal function
    (and its derivative as N) was fed through the perturbed-radiation
    solver at wavenumber ``k``.  The outer loop corrects for the part of
    the response the model misses, so the model only affects the
    convergence rate, not the converged eigenvalue.
    """

    k: float
    nodes: np.ndarray
    G1d: np.ndarray
    P: np.ndarray
    sample: sp.csr_matrix

    def matrix(self, box):
        """Sparse map y -> forcing of the frozen-radiation system."""
        U = np.stack([box.forcing(g, q) for g, q in zip(self.G1d, self.P)], axis=1)
        if np.max(np.abs(U.imag)) <= 1e-12 * max(np.max(np.abs(U.real)), 1e-300):
            U = U.real
        cols = PHI + N_VARS * np.arange(box.nz)
        V = sp.csr_matrix((self.sample.data, cols[self.sample.indices], self.sample.indptr),
                          shape=(self.nodes.size, box.size))
        return (sp.csc_matrix(U) @ V).tocsc()


def radiation_coupling(b, k, ords=None, rank=COUPLING_RANK):
    """Build the low-rank radiation model at wavenumber k.

    The model only steers Newton, so its columns are converged to the
    looser COUPLING_TOL.
    """
    z = b.z_grid
    nodes, D = _cheb(rank)
    eye = np.eye(nodes.size)
    Phi = barycentric_interpolate(nodes, eye, z).T
    Nb = barycentric_interpolate(nodes, D, z).T
    G1d, P, _, _ = diffuse_response(b, Nb, Phi, k, ords, tol=COUPLING_TOL)
    # linear interpolation of grid values at the nodes
    j = np.clip(np.searchsorted(z, nodes) - 1, 0, z.size - 2)
    t = (nodes - z[j]) / (z[j + 1] - z[j])
    rows = np.repeat(np.arange(nodes.size), 2)
    sample = sp.csr_matrix((np.c_[1.0 - t, t].ravel(), (rows, np.c_[j, j + 1].ravel())),
                           shape=(nodes.size, z.size))
    return RadiationCoupling(float(k), nodes, G1d, P, sample)


def _radiation(b, y, k, ords):
    Wv = y.reshape(-1, N_VARS)
    pr = solve_perturbed_diffuse(b, Wv[:, N], Wv[:, PHI], k, ords)
    return pr.G1d, pr.P


def _newton_stationary(box, y, R, rhs):
    """Newton on (y, R) for the real stationary system."""
    rhs = rhs.real
    if box.K is not None and np.iscomplexobj(box.K.data):
        raise DomainError("stationary solves need a real radiation model")
    e = np.zeros(box.size)
    e[box.norm_index] = 1.0
    res_norm = np.inf
    for it in range(MAX_NEWTON):
        A = box.operator(R, 0.0)
        res = np.concatenate([A @ y - rhs, [y[box.norm_index] - 1.0]])
        res_norm = np.max(np.abs(res))
        J = sp.bmat([[A, sp.csc_matrix((box.AR @ y)[:, None])],
                     [sp.csc_matrix(e[None, :]), None]], format="csc")
        step = _solve(J, res)
        y_new, R_new, ok = None, None, False
        lam = 1.0
        for _ in range(MAX_HALVINGS):
            y_try, R_try = y - lam * step[:-1], R - lam * step[-1]
            A_try = box.operator(R_try, 0.0)
            trial = np.concatenate([A_try @ y_try - rhs, [y_try[box.norm_index] - 1.0]])
            if np.max(np.abs(trial)) < max(res_norm, 1e-300) or lam < 1.0 and _small(step, y, R, lam):
                y_new, R_new, ok = y_try, R_try, True
                break
            lam *= 0.5
        if not ok:
            raise ConvergenceError("Newton-Kantorovich iteration diverged (step halving exhausted)",
                                   residual=res_norm)
        y, R = y_new, R_new
        if _small(step, y, R, lam):
            return y, R, _relative_residual(box, y, R, 0.0, rhs)
    raise ConvergenceError("Newton-Kantorovich iteration did not converge", residual=res_norm)


def _newton_oscillatory(box, y, R, sig, rhs):
    """Newton on (Re y, Im y, R, Im sigma) with the complex normalisation."""
    n = box.size
    e = np.zeros(n)
    e[box.norm_index] = 1.0
    res_norm = np.inf

    def residual(y, R, sig):
        r = box.operator(R, 1j * sig) @ y - rhs
        c = y[box.norm_index] - 1.0
        return np.concatenate([r.real, r.imag, [c.real, c.imag]])

    for it in range(MAX_NEWTON):
        A = box.operator(R, 1j * sig)
        res = residual(y, R, sig)
        res_norm = np.max(np.abs(res))
        dR = box.AR @ y
        dS = 1j * (box.AS @ y)
        Ar, Ai = A.real, A.imag
        ec = sp.csc_matrix(e[None, :])
        J = sp.bmat([[Ar, -Ai, sp.csc_matrix(dR.real[:, None]), sp.csc_matrix(dS.real[:, None])],
                     [Ai, Ar, sp.csc_matrix(dR.imag[:, None]), sp.csc_matrix(dS.imag[:, None])],
                     [ec, None, None, None],
                     [None, ec, None, None]], format="csc")
        step = _solve(J, res)
        dy = step[:n] + 1j * step[n:2 * n]
        lam, ok = 1.0, False
        for _ in range(MAX_HALVINGS):
            y_try, R_try, s_try = y - lam * dy, R - lam * step[-2], sig - lam * step[-1]
            if np.max(np.abs(residual(y_try, R_try, s_try))) < res_norm or _small(step[:-1], y, R, lam):
                ok = True
                break
            lam *= 0.5
        if not ok:
            raise ConvergenceError("Newton-Kantorovich iteration diverged (step halving exhausted)",
                                   residual=res_norm)
        y, R, sig = y_try, R_try, s_try
        if _small(step[:-1], y, R, lam) and abs(lam * step[-1]) < NEWTON_TOL * max(1.0, abs(sig)):
            return y, R, sig, _relative_residual(box, y, R, 1j * sig, rhs)
    raise ConvergenceError("Newton-Kantorovich iteration did not converge", residual=res_norm)


def _solve(J, res):
    try:
        step = spla.splu(J).solve(res)
    except RuntimeError as exc:
        raise SingularSystemError(f"singular Newton-Kantorovich Jacobian: {exc}") from exc
    if not np.all(np.isfinite(step)):
        raise SingularSystemError("singular Newton-Kantorovich Jacobian")
    return step


def _small(step, y, R, lam):
    dy = lam * np.max(np.abs(step[:-1]))
    return dy < NEWTON_TOL * max(1.0, np.max(np.abs(y))) and abs(lam * step[-1]) < NEWTON_TOL * abs(R)


def _relative_residual(box, y, R, sigma, rhs):
    A = box.operator(R, sigma)
    terms = max(np.max(np.abs(abs(A) @ np.abs(y))), np.max(np.abs(rhs)), 1e-300)
    return float(np.max(np.abs(A @ y - rhs)) / terms)


def _seed_pairs(box, R0, sigma0, count=8):
    """Eigenpairs of the radiation-free pencil.

    Returns (R_values, vectors) near R0 at fixed sigma0 when ``sigma0`` is
    real, used for stationary seeds.
    """
    A = box.operator(R0, sigma0)
    try:
        lu = spla.splu(A.astype(complex) if np.iscomplexobj(sigma0) else A)
    except RuntimeError as exc:
        raise SingularSystemError(f"seed shift is singular: {exc}") from exc
    op = spla.LinearOperator(A.shape, matvec=lambda v: lu.solve(box.AR @ v),
                             dtype=complex if np.iscomplexobj(sigma0) else float)
    nu, vec = spla.eigs(op, k=count, which="LM")
    return R0 - 1.0 / nu, vec


def _stationary_seed(box, R0=SEED_SHIFT):
    """Lowest positive real R of the radiation-free stationary pencil."""
    vals, vecs = _seed_pairs(box, R0, 0.0)
    real = np.abs(vals.imag) < 1e-6 * np.abs(vals)
    ok = real & (vals.real > 0)
    if not np.any(ok):
        raise ConvergenceError("no positive stationary seed found", residual=np.nan)
    i = np.flatnonzero(ok)[np.argmin(vals.real[ok])]
    v = vecs[:, i]
    y = (v / v[box.norm_index]).real
    return y, float(vals[i].real)


def _sigma_pairs(box, R, target, count=10):
    """Eigenvalues sigma of the radiation-free pencil at fixed R, near ``target``."""
    A = box.operator(R, target).astype(complex)
    lu = spla.splu(A.tocsc())
    op = spla.LinearOperator(A.shape, matvec=lambda v: lu.solve(box.AS @ v), dtype=complex)
    nu, vec = spla.eigs(op, k=count, which="LM")
    return target - 1.0 / nu, vec


def _oscillatory_seed(box, R0):
    """Complex mode of the frozen pencil tuned to Re sigma = 0.

    Scans a geometric ladder of R around ``R0`` for the lowest sign
    change of Re sigma on the leading complex mode, then refines it by
    false position.
    """
    def lead(R):
        sig, vec = _sigma_pairs(box, R, 0.1)
        osc = np.abs(sig.imag) > 1e-3
        if not np.any(osc):
            return None
        i = np.flatnonzero(osc)[np.argmax(sig.real[osc])]
        return sig[i], vec[:, i]

    ladder = R0 * 2.0 ** (np.arange(-8, 7) / 2.0)
    found = [(R, lead(R)) for R in ladder]
    bracket = None
    for (Ra, fa), (Rb, fb) in zip(found[:-1], found[1:]):
        if fa is not None and fb is not None and fa[0].real < 0 <= fb[0].real:
            bracket = [Ra, fa, Rb, fb]
            break
    if bracket is None:
        raise ConvergenceError("no oscillatory neutral mode near the seed", residual=np.nan)
    Ra, fa, Rb, fb = bracket
    ga, gb = fa[0].real, fb[0].real
    best = (Rb, fb)
    for _ in range(40):
        Rc = Rb - gb * (Rb - Ra) / (gb - ga)
        fc = lead(Rc)
        if fc is None:
            break
        gc = fc[0].real
        best = (Rc, fc)
        if abs(gc) < 1e-10 * max(1.0, abs(fc[0].imag)) or abs(Rb - Ra) < 1e-12 * Rc:
            break
        if gc * gb < 0:
            Ra, ga = Rb, gb
        else:
            ga *= 0.5
        Rb, gb = Rc, gc
    R, (sig, v) = best
    if sig.imag < 0:
        v, sig = v.conj(), sig.conj()
    return v / v[box.norm_index], float(R), float(sig.imag)


def nrk_solve(b, p, k, mode="stationary", guess=None, ords=None, outer_tol=OUTER_TOL,
              coupling=None):
    """Neutral eigenvalue and eigenfunction at wavenumber k.

    Parameters
    ----------
    b : BaseState
    p : Parameters
        ``p.R`` is used only as the seed shift when no guess is given.
    k : float
        Wavenumber (> 0).
    mode : {"stationary", "oscillatory"}
    guess : EigenSolution, optional
        Continuation seed; otherwise a seed comes from the radiation-free
        pencil.
    ords : OrdinateSet, optional
    coupling : RadiationCoupling, optional
        Radiation model to use inside Newton; built (or borrowed from the
        guess) when omitted.

    Returns
    -------
    EigenSolution

    Raises
    ------
    ConvergenceError
        Newton divergence, or an outer loop that stalls (residual carries
        the last |dR|/R).
    """
    if mode not in ("stationary", "oscillatory"):
        raise DomainError(f"unknown mode {mode!r}")
    ords = ordinate_set() if ords is None else ords
    if b.omega == 0:
        coupling = None
    elif coupling is None:
        if guess is not None and guess.coupling is not None and abs(guess.coupling.k / k - 1.0) <= COUPLING_SPAN:
            coupling = guess.coupling
        else:
            coupling = radiation_coupling(b, k, ords)
    box = _BoxSystem(b, p, k, coupling)
    shift = p.R if p.R > 0 else SEED_SHIFT
    if guess is not None:
        y = guess.state.ravel().astype(complex)
        y = y / y[box.norm_index]
        R, sig = guess.R, guess.sigma_im
        if mode == "oscillatory" and sig == 0.0:
            raise DomainError("an oscillatory guess needs sigma_im != 0")
    elif mode == "stationary":
        yr, R = _stationary_seed(box, shift)
        y, sig = yr.astype(complex), 0.0
    else:
        y, R, sig = _oscillatory_seed(box, shift)
    nz = b.z_grid.size
    G1d = P = np.zeros(nz, dtype=complex)
    last_dR, theta, R_prev, corr = np.inf, 1.0, None, None
    for outer in range(1, MAX_OUTER + 1):
        # frozen part of the radiation: exact response minus the modelled one
        if b.omega > 0:
            G1d, P = _radiation(b, y, k, ords)
            new = box.forcing(G1d, P) - box.K @ y
            corr = new if corr is None else corr + theta * (new - corr)
        else:
            corr = np.zeros(box.size, dtype=complex)
        if mode == "stationary":
            yr, R, resid = _newton_stationary(box, y.real, R, corr)
            y = yr.astype(complex)
        else:
            y, R, sig, resid = _newton_oscillatory(box, y, R, sig, corr)
        if b.omega == 0:
            break
        dR = abs(R - R_prev) / abs(R) if R_prev is not None else np.inf
        if dR < outer_tol:
            break
        if dR > last_dR:
            theta = 0.5
        last_dR, R_prev = dR, R
        if outer == REBUILD_AFTER and coupling.k != k:
            # a borrowed model converges too slowly here; rebuild it
            coupling = radiation_coupling(b, k, ords)
            box = _BoxSystem(b, p, k, coupling)
            corr, theta = None, 1.0
    else:
        raise ConvergenceError("radiation outer loop stalled", residual=last_dR)
    state = y.reshape(-1, N_VARS)
    if mode == "stationary":
        state = state.real
        G1d = G1d.real
    fold = mode == "oscillatory" and abs(sig) < FOLD_TOL * max(1.0, k * k)
    return EigenSolution(z_grid=b.z_grid, W=state[:, W], Z=state[:, Z], Phi=state[:, PHI],
                         N=state[:, N], R=float(R), sigma_im=float(sig), k=float(k),
                         converged=resid, mode=mode, state=state, G1d=G1d, P=P,
                         outer_iterations=outer, fold=bool(fold), coupling=coupling)


def eigen_residual(sol, b, p, ords=None):
    """Relative residual of the discrete system with freshly computed radiation."""
    box = _BoxSystem(b, p, sol.k)
    y = sol.state.ravel().astype(complex)
    if b.omega == 0:
        rhs = box.forcing(np.zeros_like(y[:box.nz]), np.zeros_like(y[:box.nz]))
    else:
        rhs = box.forcing(*_radiation(b, y, sol.k, ordinate_set() if ords is None else ords))
    return _relative_residual(box, y, sol.R, 1j * sol.sigma_im, rhs)


def boundary_residuals(sol, b, p):
    """Boundary conditions evaluated on a solution (each should vanish)."""
    s = sol.state
    cell_flux = s[:, F]
    return {"W(0)": s[0, W], "DW(0)": s[0, W1], "Z(0)": s[0, Z], "F(0)": cell_flux[0],
            "W(1)": s[-1, W], "D2W(1)": s[-1, W2], "DZ(1)": s[-1, Z1], "Phi(1)": s[-1, PHI],
            "F(1)": cell_flux[-1], "D2W(0)-1": s[0, W2] - 1.0}


# --- Chebyshev collocation oracle -----------------------------------------

def _cheb(n):
    """Chebyshev points on [0, 1] (ascending) and the differentiation matrix."""
    x = np.cos(np.pi * np.arange(n + 1) / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n + 1)
    dx = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dx + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    # z = (1 - x) / 2 is ascending and d/dz = -2 d/dx
    return 0.5 * (1.0 - x), -2.0 * D


def _radiation_matrix(b, p, k, zc, D, ords):
    """Dense maps Phi(nodes) -> aleph0(nodes) and Phi(nodes) -> G1d at both walls."""
    nc = zc.size
    z = b.z_grid
    eye = np.eye(nc)
    Phi_base = barycentric_interpolate(zc, eye, z)
    N_base = barycentric_interpolate(zc, D, z)
    A0 = np.zeros((nc, nc), dtype=complex)
    walls = np.zeros((2, nc), dtype=complex)
    if b.omega == 0:
        return A0, walls
    G1d, P, _, _ = diffuse_response(b, N_base.T, Phi_base.T, k, ords)
    for j in range(nc):
        d = GridFunction(z, b.n_s * G1d[j] * b.dM_s).derivative().values
        a0 = p.Vc * d - 1j * k * p.Vc * b.n_s * b.M_s * P[j] / b.q_s
        A0[:, j] = GridFunction(z, a0)(zc)
        walls[:, j] = G1d[j, [0, -1]]
    return A0, walls


def _oracle_matrices(b, p, k, resolution, ords):
    """Collocation pencil (A0 + R AR) v = sigma B v.

    Unknowns are W, V = (D^2 - k^2) W, Z, Phi and N = D Phi, so that no
    operator above second order is collocated; this keeps rounding in
    the differentiation matrices far below the truncation error.
    """
    zc, D = _cheb(resolution)
    nc = zc.size
    I = np.eye(nc)
    D2 = D @ D
    at = lambda name: GridFunction(b.z_grid, getattr(b, name))(zc)
    n, M, dM, Gsc, Dn, DGsd = (at(s) for s in ("n_s", "M_s", "dM_s", "G_sc", "Dn_s", "DG_sd"))
    d_nGdM = GridFunction(b.z_grid, b.n_s * b.G_sc * b.dM_s).derivative()(zc)
    a1 = p.kappa * p.Vc * d_nGdM
    a2 = 2.0 * p.kappa * p.Vc * n * Gsc * dM + p.Vc * dM * DGsd
    a3 = p.Vc * M
    rad, walls = _radiation_matrix(b, p, k, zc, D, ords)
    k2, rt = k * k, np.sqrt(p.Ta)
    size = 5 * nc
    A0 = np.zeros((size, size), dtype=complex)
    AR = np.zeros((size, size))
    B = np.zeros((size, size))
    w, v, zv, f, nn = (slice(i * nc, (i + 1) * nc) for i in range(5))
    L = D2 - k2 * I
    A0[w, w] = L
    A0[w, v] = -I
    A0[v, v] = L
    A0[v, zv] = -rt * D
    AR[v, nn] = k2 * I
    B[v, v] = I / p.Sc
    A0[zv, zv] = L
    A0[zv, w] = rt * D
    B[zv, zv] = I / p.Sc
    A0[f, f] = D
    A0[f, nn] = -I
    A0[nn, nn] = D2 - a3[:, None] * D - (k2 + a2)[:, None] * I
    A0[nn, f] = -np.diag(a1) - rad
    A0[nn, w] = -np.diag(Dn)
    B[nn, nn] = I

    def flux(i):
        row = np.zeros(size, dtype=complex)
        row[nn] = D[i] - p.Vc * M[i] * I[i]
        row[f] = -p.Vc * n[i] * dM[i] * (p.kappa * Gsc[i] * I[i] + walls[0 if i == 0 else 1])
        return row

    def put(block, vec):
        row = np.zeros(size, dtype=complex)
        row[block] = vec
        return row

    o = lambda blk, i: blk.start + (i if i >= 0 else nc + i)
    bcs = [(o(w, 0), put(w, I[0])), (o(w, -1), put(w, I[-1])),
           (o(v, 0), put(w, D[0])), (o(v, -1), put(w, D2[-1])),
           (o(zv, 0), put(zv, I[0])), (o(zv, -1), put(zv, D[-1])),
           (o(f, -1), put(f, I[-1])),
           (o(nn, 0), flux(0)), (o(nn, -1), flux(nc - 1))]
    for row, vec in bcs:
        A0[row] = vec
        AR[row] = 0.0
        B[row] = 0.0
    return A0, AR, B


def _finite(vals):
    return vals[np.isfinite(vals) & (np.abs(vals) < 1e8)]


def spectral_oracle(b, p, k, resolution=48, ords=None):
    """Eigenvalues sigma of the Chebyshev collocation pencil at fixed (R, k).

    The radiation terms enter as a dense matrix built by feeding every
    Chebyshev cardinal function through the perturbed-radiation solver,
    so the pencil is exact for the discretised nonlocal operator.
    Returns the finite eigenvalues, sorted by decreasing real part.
    """
    if resolution < 8:
        raise DomainError("oracle resolution must be at least 8")
    A0, AR, B = _oracle_matrices(b, p, float(k), int(resolution),
                                 ordinate_set() if ords is None else ords)
    try:
        vals = sla.eig(A0 + p.R * AR, B, right=False)
    except sla.LinAlgError as exc:
        raise SingularSystemError(f"dense eigensolver failed: {exc}") from exc
    vals = _finite(vals)
    return vals[np.argsort(-vals.real)]


def oracle_neutral_R(b, p, k, resolution=48, ords=None):
    """Lowest positive stationary neutral R of the collocation operator.

    With sigma = 0 the pencil is linear in R, so the neutral values are
    the generalised eigenvalues of (A0, -AR).
    """
    A0, AR, _ = _oracle_matrices(b, p, float(k), int(resolution),
                                 ordinate_set() if ords is None else ords)
    vals = _finite(sla.eig(A0, -AR, right=False))
    real = vals[(np.abs(vals.imag) < 1e-6 * np.abs(vals)) & (vals.real > 0)].real
    if real.size == 0:
        raise ConvergenceError("oracle found no positive neutral R", residual=np.nan)
    return float(real.min())


def growth_rate(b, p, k, resolution=48, ords=None):
    """Leading growth rate sigma (largest real part) at fixed (R, k)."""
    vals = spectral_oracle(b, p, k, resolution, ords)
    if vals.size == 0:
        raise SingularSystemError("no finite eigenvalues in the collocation pencil")
    return complex(vals[0])
