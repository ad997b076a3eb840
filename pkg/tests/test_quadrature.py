"""Tests of the one-dimensional quadrature rules used by assembly.

The log-weighted rules integrate ``f(x) * (-log x)`` on ``(0, 1)``; the
monomial moments of that weight are ``int_0^1 x^k (-log x) dx =
(k + 1)^{-2}``, which gives an exactness check with rational targets.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokesbem._quadrature import (
    LOG_GAUSS_RULES,
    gauss_legendre_01,
    graded_panels,
    log_gauss_01,
)


def test_log_gauss_orders_available():
    assert set(LOG_GAUSS_RULES) == {8, 10, 12, 16}


@pytest.mark.parametrize("order", sorted(LOG_GAUSS_RULES))
def test_log_gauss_moment_exactness(order):
    """An n-point Gauss rule is exact for polynomials up to degree 2n-1."""
    nodes, weights = log_gauss_01(order)
    for k in range(2 * order):
        moment = float(np.dot(weights, nodes**k))
        assert moment == pytest.approx(1.0 / (k + 1) ** 2, rel=5e-15), k


@pytest.mark.parametrize("order", sorted(LOG_GAUSS_RULES))
def test_log_gauss_nodes_interior_weights_positive(order):
    nodes, weights = log_gauss_01(order)
    assert nodes.shape == weights.shape == (order,)
    assert ((nodes > 0.0) & (nodes < 1.0)).all()
    assert (weights > 0.0).all()
    assert (np.diff(nodes) > 0.0).all()


def test_log_gauss_rejects_unknown_order():
    with pytest.raises(ValueError):
        log_gauss_01(7)


def test_log_gauss_log_integrand():
    """Integrates exp(x) * (-log x) on (0, 1): value e - Ei-type constant."""
    nodes, weights = log_gauss_01(16)
    got = float(np.dot(weights, np.exp(nodes)))
    # int_0^1 exp(x) (-log x) dx = sum_{k>=0} 1/(k! (k+1)^2)
    ref = sum(1.0 / (math.factorial(k) * (k + 1) ** 2) for k in range(20))
    assert got == pytest.approx(ref, rel=1e-14)


@pytest.mark.parametrize("order", [4, 6, 8, 12, 16])
def test_gauss_legendre_polynomial_exactness(order):
    nodes, weights = gauss_legendre_01(order)
    for k in range(2 * order):
        moment = float(np.dot(weights, nodes**k))
        assert moment == pytest.approx(1.0 / (k + 1), rel=1e-13), k


def test_gauss_legendre_cached_arrays_read_only():
    nodes, _ = gauss_legendre_01(8)
    with pytest.raises(ValueError):
        nodes[0] = 0.5


def test_graded_panels_basic():
    edges = graded_panels(0.125, 1.0)
    assert edges[0] == pytest.approx(0.125)
    assert edges[-1] == pytest.approx(1.0)
    assert (np.diff(edges) > 0.0).all()


def test_graded_panels_rejects_bad_interval():
    with pytest.raises(ValueError):
        graded_panels(0.0, 1.0)
    with pytest.raises(ValueError):
        graded_panels(0.5, 0.5)


@settings(deadline=None, max_examples=50)
@given(
    st.floats(1e-6, 0.4),
    st.floats(0.5, 10.0),
    st.floats(1.5, 4.0),
)
def test_graded_panels_partition_property(a, b, ratio):
    """Edges partition [a, b] with bounded geometric growth toward a."""
    edges = graded_panels(a, b, ratio=ratio)
    assert edges[0] == pytest.approx(a)
    assert edges[-1] == pytest.approx(b)
    widths = np.diff(edges)
    assert (widths > 0.0).all()
    # each panel spans at most `ratio` times the distance of its left
    # edge from the singular endpoint, the defining grading property
    assert (edges[1:-1] / edges[:-2] <= ratio * (1 + 1e-12)).all()
