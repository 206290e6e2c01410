from dataclasses import replace

import numpy as np
import pytest

from bioconvect.base_state import Parameters, base_state_residual, solve_base_state
from bioconvect.errors import DomainError
from bioconvect.specfun import cumulative_integral
from bioconvect.taxis import taxis
from conftest import cached_base
from oracles import lambert_beer_base_state

MATRIX = [(om, ka, vc) for om in (0.0, 0.43, 0.48, 0.7) for ka in (0.5, 1.0) for vc in (10.0, 20.0)]


def crossing(z, g, level):
    i = np.flatnonzero(np.diff(np.sign(g - level)))
    j = i[0]
    return z[j] + (level - g[j]) * (z[j + 1] - z[j]) / (g[j + 1] - g[j])


@pytest.mark.parametrize("omega,kappa,Vc", MATRIX)
def test_conservation_and_residual(omega, kappa, Vc):
    p, b = cached_base(omega, kappa, Vc)
    assert abs(cumulative_integral(b.z_grid, b.n_s)[-1] - 1.0) < 1e-8
    assert np.all(b.n_s > 0)
    assert base_state_residual(b, p) < 1e-6
    assert np.allclose(b.G_s, b.G_sc + b.G_sd, rtol=0, atol=1e-15)
    assert np.allclose(b.Dn_s, Vc * b.M_s * b.n_s)


def test_absorbing_layer_accumulates_at_top(base_absorbing):
    # M(1) < 0 with the taxis law as written, so n_s turns over only in the
    # last cell, above the point where G_s passes the taxis zero
    p, b = base_absorbing
    below = b.G_s < p.taxis.zero()
    assert np.all(np.diff(b.n_s)[below[1:]] > 0)
    assert b.z_grid[np.argmax(b.n_s)] >= 1.0 - 1.5 * (b.z_grid[1] - b.z_grid[0])


def test_absorbing_layer_against_refined_integration(base_absorbing):
    p, b = base_absorbing
    ref = lambert_beer_base_state(p.Vc, p.kappa, lambda g: taxis(p.taxis, g), b.z_grid)
    assert np.max(np.abs(ref - b.n_s)) < 1e-6


def test_scattering_layer_peaks_mid_height(base_scattering):
    _, b = base_scattering
    assert 0.35 < b.z_grid[np.argmax(b.n_s)] < 0.65


def test_sublayer_moves_down_with_albedo():
    _, b48 = cached_base(0.48, 0.5)
    _, b70 = cached_base(0.7, 0.5)
    z48 = crossing(b48.z_grid, b48.G_s, 1.0)
    z70 = crossing(b70.z_grid, b70.G_s, 1.0)
    assert z70 < z48


@pytest.mark.parametrize("omega", [0.48, 0.7])
def test_grid_doubling(omega):
    _, coarse = cached_base(omega, 0.5)
    _, fine = cached_base(omega, 0.5, n_grid=801)
    assert np.max(np.abs(fine.n_s[::2] - coarse.n_s)) < 1e-6


def test_residual_detects_perturbation(base_scattering):
    p, b = base_scattering
    n = b.n_s.copy()
    n[200] *= 1.01
    assert base_state_residual(replace(b, n_s=n), p) > 1e-3


def test_profiles_are_consistent(base_scattering):
    p, b = base_scattering
    assert b.z_grid.size == 401
    assert np.all(b.q_s > 0)
    assert abs(b.tau[0] - p.kappa) < 1e-10 and b.tau[-1] == 0.0
    assert np.allclose(b.G_sc, np.exp(-b.tau), atol=1e-14)
    assert b.profile("n_s")(0.5) == pytest.approx(np.interp(0.5, b.z_grid, b.n_s), rel=1e-4)


@pytest.mark.parametrize("field,value", [("Sc", 0.0), ("Vc", -1.0), ("kappa", 0.0),
                                         ("omega", 1.5), ("Lt", 0.0), ("Ta", -1.0)])
def test_parameter_validation(field, value):
    with pytest.raises(DomainError):
        Parameters(**{field: value})


def test_grid_size_validation():
    with pytest.raises(DomainError):
        solve_base_state(Parameters(), n_grid=50)


def test_base_key_ignores_rayleigh_and_rotation():
    assert Parameters(R=10, Ta=100).base_key() == Parameters().base_key()
    assert Parameters(omega=0.4).base_key() != Parameters().base_key()
