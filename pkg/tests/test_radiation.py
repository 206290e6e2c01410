import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bioconvect.errors import DomainError
from bioconvect.radiation import (flux_by_ordinates, solve_fie, steady_flux,
                                  total_intensity_on_z)
from bioconvect.specfun import GridFunction, uniform_grid
from oracles import fie_trapezoid


def uniform_intensity(omega, kappa=0.5, n=2001):
    z = uniform_grid(n)
    rad = solve_fie(omega, kappa, m=128)
    return z, total_intensity_on_z(rad, GridFunction(z, np.ones_like(z)), kappa).values


def crossing(z, g, level):
    i = np.flatnonzero(np.diff(np.sign(g - level)))[0]
    return z[i] + (level - g[i]) * (z[i + 1] - z[i]) / (g[i + 1] - g[i])


@pytest.mark.parametrize("tau_max", [0.1, 0.5, 3.0])
def test_lambert_beer_limit(tau_max):
    rad = solve_fie(0.0, tau_max)
    assert np.max(np.abs(rad.upsilon - np.exp(-rad.tau_grid))) < 1e-12
    tau = np.linspace(0, tau_max, 37)
    assert np.max(np.abs(rad.upsilon_at(tau) - np.exp(-tau))) < 1e-12


@pytest.mark.parametrize("omega", [0.2, 0.48, 0.7, 0.99])
def test_discrete_residual_and_lower_bound(omega):
    rad = solve_fie(omega, 0.5, m=64)
    assert rad.residual < 1e-10
    assert np.all(rad.upsilon >= np.exp(-rad.tau_grid))


@pytest.mark.parametrize("omega", [0.2, 0.48, 0.7, 0.99])
def test_quadrature_doubling(omega):
    a = solve_fie(omega, 0.5, m=64)
    b = solve_fie(omega, 0.5, m=128)
    tau = np.linspace(0, 0.5, 101)
    assert np.max(np.abs(a.upsilon_at(tau) - b.upsilon_at(tau))) < 1e-8


@pytest.mark.parametrize("omega,tau_max,n", [(0.48, 0.5, 800), (0.9, 2.0, 1600)])
def test_against_trapezoid_oracle(omega, tau_max, n):
    tau, ref = fie_trapezoid(omega, tau_max, n)
    rad = solve_fie(omega, tau_max, m=128)
    assert np.max(np.abs(rad.upsilon_at(tau) - ref)) < 2e-6


def test_monotone_in_albedo():
    tau = np.linspace(0, 0.5, 51)
    values = [solve_fie(w, 0.5).upsilon_at(tau) for w in (0, 0.2, 0.48, 0.7, 1.0)]
    assert all(np.all(b >= a) for a, b in zip(values, values[1:]))


def test_strong_scattering_profile():
    z, g = uniform_intensity(0.7)
    assert abs(z[np.argmax(g)] - 0.94) <= 0.02
    assert abs(crossing(z, g, 1.0) - 0.20) <= 0.02


def test_weak_scattering_is_monotone():
    z, g = uniform_intensity(0.2)
    assert np.all(np.diff(g) > 0)


def test_lambert_beer_on_z():
    z, g = uniform_intensity(0.0)
    assert np.max(np.abs(g - np.exp(-0.5 * (1 - z)))) < 1e-12
    assert abs(g[0] - 0.60653066) < 1e-8


def test_flux_closed_form_matches_ordinates():
    rad = steady_flux(solve_fie(0.48, 0.5, m=128))
    tau = np.linspace(0.0, 0.5, 10)
    ref = flux_by_ordinates(rad, tau)
    got = rad.flux_at(tau)
    assert np.max(np.abs(got - ref) / ref) < 1e-3
    mid = rad.flux_at(0.25)
    assert abs(mid - flux_by_ordinates(rad, [0.25])[0]) / mid < 1e-3


def test_flux_limits():
    rad = steady_flux(solve_fie(0.0, 0.8))
    assert np.max(np.abs(rad.flux - np.exp(-rad.tau_grid))) < 1e-14
    for omega in (0.3, 0.7, 0.95):
        assert np.all(steady_flux(solve_fie(omega, 1.0)).flux > 0)


@settings(max_examples=15, deadline=None)
@given(omega=st.floats(0.0, 0.99), tau_max=st.floats(0.05, 3.0))
def test_fie_properties(omega, tau_max):
    rad = steady_flux(solve_fie(omega, tau_max, m=48))
    assert np.all(rad.upsilon >= np.exp(-rad.tau_grid) - 1e-14)
    assert np.all(rad.flux > 0)


def test_fie_domain():
    with pytest.raises(DomainError):
        solve_fie(1.2, 0.5)
    with pytest.raises(DomainError):
        solve_fie(0.5, 0.0)
    with pytest.raises(DomainError):
        solve_fie(0.5, 0.5, m=8)
    with pytest.raises(DomainError):
        total_intensity_on_z(solve_fie(0.5, 0.5), GridFunction([0.0, 1.0], [-1.0, 1.0]))
