import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ghap.mixture import (DegenerateComponentError, GaussianMixture, GaussianPrimitive, cost,
                          density, density_at, pairwise_cost)

from conftest import random_mixture


def test_standard_normal_at_mode():
    mix = GaussianMixture(np.zeros((1, 2)), np.eye(2)[None], [1.0])
    assert density_at(mix, [0, 0]) == pytest.approx(1 / (2 * math.pi), rel=1e-14)


def test_empty_mixture_density_is_zero():
    assert density_at(GaussianMixture.empty(3), [1.0, 2.0, 3.0]) == 0.0


def test_two_coincident_unit_components_1d():
    mix = GaussianMixture(np.zeros((2, 1)), np.ones((2, 1, 1)), [1.0, 1.0])
    assert density_at(mix, [0.0]) == pytest.approx(2 / math.sqrt(2 * math.pi), rel=1e-14)


def test_density_matches_scipy(rng):
    from scipy.stats import multivariate_normal

    mix = random_mixture(rng, 30, dim=3, scale=0.3)
    pts = rng.uniform(0, 1, (50, 3))
    ref = sum(w * multivariate_normal(m, c).pdf(pts)
              for m, c, w in zip(mix.means, mix.covariances, mix.weights))
    np.testing.assert_allclose(density(mix, pts), ref, rtol=1e-10)


def test_degenerate_component_names_index():
    covs = np.stack([np.eye(2), np.diag([1.0, 1e-14])])
    mix = GaussianMixture(np.zeros((2, 2)), covs, [1.0, 1.0])
    with pytest.raises(DegenerateComponentError, match="component 1"):
        density_at(mix, [0.0, 0.0])


def test_density_rejects_wrong_point_dimension():
    mix = GaussianMixture(np.zeros((1, 2)), np.eye(2)[None], [1.0])
    with pytest.raises(ValueError):
        density_at(mix, [0.0, 0.0, 0.0])


def _prim(mean, cov, w=1.0):
    return GaussianPrimitive(np.asarray(mean, float), np.asarray(cov, float), w)


def test_cost_examples():
    a = _prim([0, 0, 0], np.eye(3))
    assert cost(a, a) == 0.0
    assert cost(a, _prim([1, 2, 2], np.eye(3))) == 9.0
    assert cost(a, _prim([0, 0, 0], 2 * np.eye(3))) == 3.0


def test_cost_dimension_mismatch():
    with pytest.raises(ValueError):
        cost(_prim([0, 0], np.eye(2)), _prim([0, 0, 0], np.eye(3)))


def test_pairwise_matches_scalar_cost(rng):
    x = random_mixture(rng, 7, dim=2)
    y = random_mixture(rng, 4, dim=2)
    c = pairwise_cost(x, y)
    for i in range(7):
        for j in range(4):
            assert c[i, j] == pytest.approx(cost(x[i], y[j]), rel=1e-13)


def test_validation_rejects_bad_components():
    with pytest.raises(ValueError, match="non-positive weight"):
        GaussianMixture(np.zeros((1, 2)), np.eye(2)[None], [0.0])
    with pytest.raises(ValueError, match="non-symmetric"):
        GaussianMixture(np.zeros((1, 2)), np.array([[[1.0, 0.5], [0.0, 1.0]]]), [1.0])
    with pytest.raises(ValueError, match="not PSD"):
        GaussianMixture(np.zeros((1, 2)), np.diag([1.0, -1.0])[None], [1.0])


def test_components_round_trip(rng):
    mix = random_mixture(rng, 5, dim=3, with_appearance=True)
    again = GaussianMixture.from_components(mix.components)
    np.testing.assert_array_equal(again.means, mix.means)
    np.testing.assert_array_equal(again.covariances, mix.covariances)
    np.testing.assert_array_equal(again.appearance.sh_rest, mix.appearance.sh_rest)


def _spd(dim):
    return arrays(np.float64, (dim, dim), elements=st.floats(-2, 2)).map(
        lambda a: a @ a.T + 0.1 * np.eye(dim))


primitive_pairs = st.integers(1, 3).flatmap(lambda d: st.tuples(
    arrays(np.float64, d, elements=st.floats(-10, 10)), _spd(d),
    arrays(np.float64, d, elements=st.floats(-10, 10)), _spd(d)))


@given(primitive_pairs)
def test_cost_symmetric_and_zero_on_diagonal(pair):
    ma, ca, mb, cb = pair
    a, b = _prim(ma, ca), _prim(mb, cb)
    assert cost(a, b) == cost(b, a)
    assert cost(a, a) == 0.0
    assert cost(a, b) >= 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_density_homogeneous_and_additive(seed, scale):
    rng = np.random.default_rng(seed)
    mix = random_mixture(rng, 6, dim=2, scale=0.3)
    pts = rng.uniform(-0.5, 1.5, (20, 2))
    base = density(mix, pts)
    scaled = density(mix.replace(weights=mix.weights * scale), pts)
    np.testing.assert_allclose(scaled, scale * base, rtol=1e-12, atol=0)
    parts = sum(density(mix.subset([i]), pts) for i in range(len(mix)))
    np.testing.assert_allclose(parts, base, rtol=1e-12, atol=1e-300)


def test_density_independent_of_component_order(rng):
    mix = random_mixture(rng, 40, dim=2, scale=0.2)
    perm = rng.permutation(40)
    pts = rng.uniform(0, 1, (100, 2))
    np.testing.assert_array_equal(density(mix, pts), density(mix.subset(perm), pts))
