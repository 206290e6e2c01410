"""Exponential integrals, Gauss-Legendre rules and gridded profiles.

The exponential integrals are evaluated with the classic split: a power
series for ``x <= 1`` and a modified-Lentz continued fraction above.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .errors import DomainError

EULER_GAMMA = 0.57721566490153286061
_EPS = 1e-16
_CF_EPS = 4.0 * np.finfo(float).eps
_TINY = 1e-300
_MAX_TERMS = 500


def exp_integral(n, x):
    """Generalised exponential integral E_n(x) = int_1^inf exp(-x t) t^-n dt.

    Parameters
    ----------
    n : int
        Order, ``n >= 1``.
    x : float or array_like
        Argument(s), ``x >= 0`` (``x > 0`` when ``n == 1``).

    Returns
    -------
    float or numpy.ndarray
        Same shape as ``x``.
    """
    if int(n) != n or n < 1:
        raise DomainError(f"order must be a positive integer, got {n!r}")
    n = int(n)
    xa = np.asarray(x, dtype=float)
    if np.any(np.isnan(xa)):
        raise DomainError("argument is NaN")
    if np.any(xa < 0):
        raise DomainError("exponential integral is undefined for x < 0")
    if n == 1 and np.any(xa == 0):
        raise DomainError("E_1 diverges at x = 0")

    flat = xa.ravel()
    out = np.empty_like(flat)
    zero = flat == 0
    small = (flat <= 1.0) & ~zero
    large = flat > 1.0
    if np.any(zero):
        out[zero] = 1.0 / (n - 1)
    if np.any(small):
        out[small] = _series(n, flat[small])
    if np.any(large):
        out[large] = _continued_fraction(n, flat[large])
    if np.ndim(x) == 0:
        return float(out[0])
    return out.reshape(xa.shape)


def _series(n, x):
    if n == 1:
        ans = -np.log(x) - EULER_GAMMA
    else:
        ans = np.full_like(x, 1.0 / (n - 1))
    fact = np.ones_like(x)
    psi = -EULER_GAMMA + sum(1.0 / i for i in range(1, n))
    for i in range(1, _MAX_TERMS):
        fact = -fact * x / i
        if i != n - 1:
            term = -fact / (i - n + 1)
        else:
            term = fact * (-np.log(x) + psi)
        ans = ans + term
        if np.all(np.abs(term) <= _EPS * np.abs(ans)):
            return ans
    raise RuntimeError("E_n series did not converge")  # pragma: no cover


def _continued_fraction(n, x):
    b = x + n
    c = np.full_like(x, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, _MAX_TERMS):
        an = -i * (n - 1 + i)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = b + an / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = c * d
        h = h * delta
        if np.all(np.abs(delta - 1.0) <= _CF_EPS):
            return h * np.exp(-x)
    raise RuntimeError("E_n continued fraction did not converge")  # pragma: no cover


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and positive weights of a quadrature rule on ``[a, b]``."""

    nodes: np.ndarray
    weights: np.ndarray
    a: float
    b: float

    def integrate(self, f):
        """Apply the rule to a callable or to samples at the nodes."""
        values = f(self.nodes) if callable(f) else np.asarray(f)
        return np.tensordot(values, self.weights, axes=([-1], [0]))


def gauss_legendre(n, a=-1.0, b=1.0):
    """n-point Gauss-Legendre rule mapped to ``[a, b]``."""
    if n < 1:
        raise DomainError("need at least one node")
    if not a < b:
        raise DomainError("interval must satisfy a < b")
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return QuadratureRule(half * x + 0.5 * (a + b), half * w, float(a), float(b))


def composite_gauss_legendre(edges, order):
    """Gauss-Legendre rule of fixed order on each panel ``[edges[i], edges[i+1]]``."""
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise DomainError("panel edges must be strictly increasing")
    x, w = np.polynomial.legendre.leggauss(order)
    left, right = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (right - left) * x + 0.5 * (right + left)
    weights = 0.5 * (right - left) * w
    return QuadratureRule(nodes.ravel(), weights.ravel(), float(edges[0]), float(edges[-1]))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples of a real or complex profile on a strictly increasing grid.

    Evaluation between nodes uses a not-a-knot cubic spline (C2, exact
    at the nodes); with fewer than four nodes a cubic Hermite interpolant
    with finite-difference slopes is used instead.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values)
        if not np.iscomplexobj(values):
            values = values.astype(float)
        if grid.ndim != 1 or grid.size < 2:
            raise DomainError("grid must be one-dimensional with at least two nodes")
        if values.shape != grid.shape:
            raise DomainError("grid and values must have equal length")
        if np.any(np.diff(grid) <= 0):
            raise DomainError("grid must be strictly increasing")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def slopes(self):
        edge = 2 if self.grid.size > 2 else 1
        return np.gradient(self.values, self.grid, edge_order=edge)

    def _spline(self):
        spline = self.__dict__.get("_cached_spline")
        if spline is None:
            if self.grid.size >= 4:
                spline = CubicSpline(self.grid, self.values)
            else:
                spline = CubicHermiteSpline(self.grid, self.values, self.slopes)
            object.__setattr__(self, "_cached_spline", spline)
        return spline

    def __call__(self, x, nu=0):
        return interpolate(self, x, nu=nu)

    def derivative(self):
        """Derivative of the interpolant, sampled back on the grid."""
        return GridFunction(self.grid, self._spline()(self.grid, 1))

    def integral(self):
        """Integral of the samples over the whole grid (Simpson's rule)."""
        total = cumulative_integral(self.grid, self.values)[-1]
        return complex(total) if np.iscomplexobj(total) else float(total)


def interpolate(f, x, nu=0):
    """Evaluate the cubic interpolant of ``f`` (or its ``nu``-th derivative) at ``x``."""
    xa = np.asarray(x, dtype=float)
    lo, hi = f.grid[0], f.grid[-1]
    slack = 1e-12 * max(1.0, hi - lo)
    if np.any(xa < lo - slack) or np.any(xa > hi + slack):
        raise DomainError(f"query outside grid range [{lo}, {hi}]")
    val = f._spline()(np.clip(xa, lo, hi), nu)
    if np.ndim(x) == 0:
        return val.item()
    return val


def cumulative_integral(grid, values):
    """Running integral ``int_{grid[0]}^{z} values`` at every node, starting from 0."""
    values = np.asarray(values)
    if np.iscomplexobj(values):
        return cumulative_integral(grid, values.real) + 1j * cumulative_integral(grid, values.imag)
    if values.shape[-1] < 3:
        steps = 0.5 * (values[..., 1:] + values[..., :-1]) * np.diff(grid)
        return np.concatenate([np.zeros(values.shape[:-1] + (1,)), np.cumsum(steps, -1)], -1)
    return cumulative_simpson(values, x=grid, initial=0)


def uniform_grid(n_points):
    """Uniform grid on ``[0, 1]``."""
    if n_points < 2:
        raise DomainError("grid needs at least two points")
    return np.linspace(0.0, 1.0, int(n_points))
