"""Phototactic response of the cells to the local light intensity G.

    M(G) = a1 sin(3 pi Lambda / 2) - a2 sin(pi Lambda / 2)
    Lambda(G) = (G / c1) exp[c2 (c1 - G)]

M > 0 (positive phototaxis, upward swimming) below the critical intensity
and M < 0 above it.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError


@dataclass(frozen=True)
class TaxisModel:
    a1: float = 0.8
    a2: float = 0.1
    c1: float = 2.5
    c2: float = 0.32
    critical_intensity: float = 1.0

    def shape(self, G):
        G = np.asarray(G, dtype=float)
        return G / self.c1 * np.exp(self.c2 * (self.c1 - G))

    def shape_derivative(self, G):
        G = np.asarray(G, dtype=float)
        return np.exp(self.c2 * (self.c1 - G)) / self.c1 * (1.0 - self.c2 * G)

    def zero(self, lo=0.2, hi=2.0):
        """Intensity at which the response changes sign (close to ``critical_intensity``)."""
        return brentq(lambda g: taxis(self, g), lo, hi, xtol=1e-14)


def _check(G):
    G = np.asarray(G, dtype=float)
    if np.any(G < 0):
        raise DomainError("light intensity must be non-negative")
    return G


def taxis(model, G):
    """Taxis response M(G)."""
    G = _check(G)
    lam = model.shape(G)
    out = model.a1 * np.sin(1.5 * np.pi * lam) - model.a2 * np.sin(0.5 * np.pi * lam)
    return float(out) if out.ndim == 0 else out


def taxis_derivative(model, G):
    """dM/dG by the chain rule through Lambda(G)."""
    G = _check(G)
    lam = model.shape(G)
    dm_dlam = (model.a1 * 1.5 * np.pi * np.cos(1.5 * np.pi * lam)
               - model.a2 * 0.5 * np.pi * np.cos(0.5 * np.pi * lam))
    out = dm_dlam * model.shape_derivative(G)
    return float(out) if out.ndim == 0 else out
