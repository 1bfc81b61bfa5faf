import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from lagr import (BandwidthSpec, ConfigurationError, DegenerateNeighborhoodError, InputError, adaptive_bandwidth,
                  default_bandwidth, kernel_moments, kernel_value, local_weights)
from lagr.kernels import EPANECHNIKOV, KernelSpec, bandwidth_ratio


@pytest.mark.parametrize("x, expected", [(0.0, 0.75), (1.0, 0.0), (0.5, 0.5625), (2.5, 0.0)])
def test_kernel_value_examples(x, expected):
    assert kernel_value(x) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("x", [-0.1, float("nan"), float("inf")])
def test_kernel_value_rejects_bad_input(x):
    with pytest.raises(InputError):
        kernel_value(x)


def test_unknown_kernel_family():
    with pytest.raises(ConfigurationError):
        KernelSpec("gaussian")


@given(st.floats(0, 10, allow_nan=False))
def test_kernel_nonnegative_and_supported(x):
    k = kernel_value(x)
    assert k >= 0
    if x >= 1:
        assert k == 0


def test_local_weights_single_coincident_point():
    w = local_weights((0.3, 0.3), np.array([[0.3, 0.3]]), BandwidthSpec.fixed(1.0))
    assert w.weights[0] == 0.75
    assert w.support_count == 1


def test_local_weights_boundary_is_zero():
    with pytest.raises(DegenerateNeighborhoodError, match="no observation"):
        local_weights((0.0, 0.0), np.array([[2.0, 0.0]]), BandwidthSpec.fixed(2.0))


def test_local_weights_three_collinear_points():
    locs = np.array([[0.0, 0.0], [0.5, 0.0], [2.0, 0.0]])
    w = local_weights((0.0, 0.0), locs, BandwidthSpec.fixed(1.0))
    np.testing.assert_allclose(w.weights, [0.75, 0.5625, 0.0], atol=1e-15)
    assert w.support.tolist() == [0, 1]


def test_weights_scale_as_inverse_square():
    rng = np.random.default_rng(0)
    locs = rng.uniform(size=(30, 2))
    w1 = local_weights((0.5, 0.5), locs, BandwidthSpec.fixed(0.6)).weights
    # doubling h while halving every distance (relative to the centre)
    half = 0.5 + (locs - 0.5) / 2.0
    w2 = local_weights((0.5, 0.5), half, BandwidthSpec.fixed(0.3)).weights
    np.testing.assert_allclose(w2, 4.0 * w1, rtol=1e-12)


def test_bandwidth_two_points():
    locs = np.array([[0.0, 0.0], [1.0, 0.0]])
    h = adaptive_bandwidth((0.0, 0.0), locs, 0.375)
    assert h == pytest.approx(1.0, rel=1e-9)


def test_bandwidth_single_point_limit():
    locs = np.array([[0.2, 0.2]])
    h = adaptive_bandwidth((0.2, 0.2), locs, 0.75 - 1e-9)
    assert h > 0
    assert bandwidth_ratio((0.2, 0.2), locs, h) == pytest.approx(0.75, abs=1e-8)


@pytest.mark.parametrize("target", [0.75, 0.9, 0.0, -1.0])
def test_bandwidth_unattainable_target(target):
    with pytest.raises(ConfigurationError):
        adaptive_bandwidth((0.0, 0.0), np.array([[0.0, 0.0], [1.0, 1.0]]), target)


@settings(max_examples=120, deadline=None)
@given(
    seed=st.integers(0, 2 ** 31),
    n=st.integers(2, 60),
    target=st.floats(0.01, 0.7),
)
def test_bandwidth_hits_target_on_random_sets(seed, n, target):
    rng = np.random.default_rng(seed)
    locs = rng.uniform(size=(n, 2))
    s = rng.uniform(size=2)
    h = adaptive_bandwidth(s, locs, target)
    ratio = bandwidth_ratio(s, locs, h)
    # with n points the ratio can only reach the target when a point lies at finite distance
    assert ratio == pytest.approx(target, abs=1e-8)


def test_bandwidth_backends_agree(backend):
    rng = np.random.default_rng(5)
    locs = rng.uniform(size=(50, 2))
    h = adaptive_bandwidth((0.4, 0.6), locs, 0.2185)
    assert bandwidth_ratio((0.4, 0.6), locs, h) == pytest.approx(0.2185, abs=1e-10)


def test_nearest_neighbor_weights_use_resolved_bandwidth():
    rng = np.random.default_rng(2)
    locs = rng.uniform(size=(40, 2))
    w = local_weights((0.5, 0.5), locs, BandwidthSpec.nearest_neighbor(0.3))
    d = np.hypot(*(locs - 0.5).T)
    h = w.bandwidth_used
    np.testing.assert_allclose(w.weights, EPANECHNIKOV.profile(d / h) / h ** 2)


def test_bandwidth_spec_validation():
    with pytest.raises(ConfigurationError):
        BandwidthSpec("knn", 0.2)
    with pytest.raises(ConfigurationError):
        BandwidthSpec.fixed(0.0)


def test_kernel_moments_closed_forms():
    m = kernel_moments()
    assert m.kappa0 == pytest.approx(3 * math.pi / 8, abs=1e-10)
    assert m.kappa2 == pytest.approx(math.pi / 16, abs=1e-10)
    assert m.nu0 == pytest.approx(3 * math.pi / 16, abs=1e-10)
    assert m.kappa0 > m.kappa2 > 0


def test_kernel_moments_against_cartesian_quadrature():
    K = lambda x, y: max(0.0, 0.75 * (1.0 - x * x - y * y))
    lo, hi = lambda x: -math.sqrt(max(0.0, 1 - x * x)), lambda x: math.sqrt(max(0.0, 1 - x * x))
    k0 = integrate.dblquad(lambda y, x: K(x, y), -1, 1, lo, hi)[0]
    k2 = integrate.dblquad(lambda y, x: x * x * K(x, y), -1, 1, lo, hi)[0]
    n0 = integrate.dblquad(lambda y, x: K(x, y) ** 2, -1, 1, lo, hi)[0]
    m = kernel_moments()
    assert (m.kappa0, m.kappa2, m.nu0) == pytest.approx((k0, k2, n0), abs=1e-7)


@pytest.mark.parametrize("n, expected", [(400, 1.5 * 400 ** (-1 / 6) - 0.36), (1, 1.14)])
def test_default_bandwidth(n, expected):
    assert default_bandwidth(n) == pytest.approx(expected, abs=1e-12)


def test_default_bandwidth_values():
    # independent evaluation: 400**(1/6) = 2**(2/3) * 5**(1/3)
    root = 2 ** (2 / 3) * 5 ** (1 / 3)
    assert default_bandwidth(400) == pytest.approx(1.5 / root - 0.36, abs=1e-12)
    assert default_bandwidth(400) == pytest.approx(0.1926, abs=5e-5)
    assert default_bandwidth(200) == pytest.approx(0.2603, abs=5e-5)
    assert default_bandwidth(100) == pytest.approx(0.3362, abs=5e-5)


def test_default_bandwidth_nonpositive():
    with pytest.raises(ConfigurationError, match="explicit bandwidth"):
        default_bandwidth(10 ** 12)
