import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bioconvect.errors import DomainError
from bioconvect.taxis import TaxisModel, taxis, taxis_derivative
from oracles import taxis_mp

MODEL = TaxisModel()
# M(1) from the 30-digit evaluation in tests/oracles.py
M_AT_ONE = -0.0087939001


def test_values():
    assert taxis(MODEL, 0.0) == 0.0
    assert abs(taxis(MODEL, 2.5) + 0.9) < 1e-14
    assert abs(taxis(MODEL, 1.0) - M_AT_ONE) < 1e-6
    assert abs(taxis_mp(1.0) - M_AT_ONE) < 1e-6


@settings(max_examples=50, deadline=None)
@given(G=st.floats(0.0, 4.0))
def test_against_high_precision(G):
    assert abs(taxis(MODEL, G) - taxis_mp(G)) < 1e-13


def test_derivative_zero_where_shape_peaks():
    assert abs(taxis_derivative(MODEL, 1 / 0.32)) < 1e-14


def test_derivative_at_zero():
    expected = (1.5 * np.pi * 0.8 - 0.5 * np.pi * 0.1) * np.exp(0.8) / 2.5
    assert abs(taxis_derivative(MODEL, 0.0) - expected) < 1e-13


def test_gradient_check():
    G = np.random.default_rng(7).uniform(0.0, 4.0, 50)
    h = 1e-6
    fd = (taxis(MODEL, G + h) - taxis(MODEL, np.maximum(G - h, 0.0))) / (G + h - np.maximum(G - h, 0.0))
    assert np.max(np.abs(taxis_derivative(MODEL, G) - fd)) < 1e-6
    fd1 = (taxis(MODEL, 1 + h) - taxis(MODEL, 1 - h)) / (2 * h)
    assert abs(taxis_derivative(MODEL, 1.0) - fd1) < 1e-6


def test_sign_pattern():
    zero = MODEL.zero()
    assert 0.98 < zero < 1.0
    assert taxis(MODEL, 0.5) > 0
    assert taxis(MODEL, 2.0) < 0
    G = np.linspace(zero + 1e-3, 3.4, 200)
    assert np.all(taxis(MODEL, G) < 0)


def test_configurable_constants():
    m = TaxisModel(a1=1.0, a2=0.0, c1=2.0, c2=0.0)
    assert abs(taxis(m, 2.0) + 1.0) < 1e-14


def test_negative_intensity_rejected():
    with pytest.raises(DomainError):
        taxis(MODEL, -0.1)
    with pytest.raises(DomainError):
        taxis_derivative(MODEL, [0.5, -1.0])
