"""
Границы правдоподобия и классификация устойчивости.
"""

import logging

import numpy as np
import pytest

from shared.models.errors import InvalidArgumentError

from learner.gmm import LOG_2PI, GmmModel, component_log_density
from learner.stability import classify, likelihood_bounds


def _surface_point(component, m, direction):
    direction = direction / np.linalg.norm(direction)
    return component.mean + m * component.chol @ direction


def _dense_min_mahalanobis(model, nodes):
    result = []
    for c in model.components:
        diff = nodes - c.mean
        result.append(np.sqrt(np.einsum("ni,ij,nj->n", diff, np.linalg.inv(c.covariance), diff)))
    return np.min(np.column_stack(result), axis=1)


@pytest.mark.parametrize("m", [1.0, 2.0, 3.0])
def test_bounds_width(model_factory, m):
    bounds = likelihood_bounds(model_factory(3), m)
    np.testing.assert_allclose(bounds.upper - bounds.lower, 0.5 * m * m, atol=1e-12)


def test_standard_normal_bounds():
    model = GmmModel.from_parameters([1.0], [np.zeros(50)], [np.eye(50)])
    bounds = likelihood_bounds(model, 1.0)
    assert bounds.upper[0] == pytest.approx(-25.0 * LOG_2PI, abs=1e-12)
    assert bounds.lower[0] == pytest.approx(-25.0 * LOG_2PI - 0.5, abs=1e-12)


def test_upper_bound_is_peak(model_factory):
    model = model_factory(4)
    bounds = likelihood_bounds(model, 2.0)
    for k, c in enumerate(model.components):
        assert component_log_density(model, k, c.mean) == bounds.upper[k]


def test_bounds_match_sampled_region(rng, model_factory):
    model = model_factory(2)
    m = 2.0
    bounds = likelihood_bounds(model, m)
    component = model.components[0]

    directions = rng.normal(size=(100_000, 50))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = m * rng.random(100_000) ** (1.0 / 50)
    radii[:1000] = m
    radii[1000] = 0.0
    points = component.mean + (radii[:, None] * directions) @ component.chol.T

    log_liks = model.component_log_densities(points)[:, 0]
    assert log_liks.min() == pytest.approx(bounds.lower[0], abs=1e-6)
    assert log_liks.max() == pytest.approx(bounds.upper[0], abs=1e-6)


def test_mean_is_stable(model_factory):
    model = model_factory(5)
    bounds = likelihood_bounds(model, 1.0)
    for k, c in enumerate(model.components):
        verdict = classify(model, bounds, c.mean)
        assert verdict.stable
        assert verdict.best_component == k


def test_boundary_construction(rng, spd):
    means = [np.zeros(50), np.full(50, 100.0)]
    model = GmmModel.from_parameters([0.5, 0.5], means, [spd(50), spd(50)])
    bounds = likelihood_bounds(model, 2.0)
    direction = rng.normal(size=50)

    on_boundary = _surface_point(model.components[0], 2.0, direction)
    assert classify(model, bounds, on_boundary).stable

    outside = _surface_point(model.components[0], 2.0 + 1e-6, direction)
    assert not classify(model, likelihood_bounds(model, 2.0 - 1e-6), on_boundary).stable
    assert not classify(model, bounds, _surface_point(model.components[0], 2.5, direction)).stable
    assert classify(model, bounds, outside).best_component == 0


def test_far_node_is_unstable(model_factory):
    model = model_factory(3)
    verdict = classify(model, likelihood_bounds(model, 3.0), np.full(50, 1e3))
    assert not verdict.stable
    assert np.all(verdict.mahalanobis > 3.0)


def test_matches_mahalanobis_oracle(rng, model_factory):
    model = model_factory(16)
    labels = rng.integers(0, 16, size=10_000)
    directions = rng.normal(size=(10_000, 50))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = rng.uniform(0.0, 4.0, size=10_000)
    nodes = np.vstack([
        model.components[k].mean + model.components[k].chol @ (r * u)
        for k, r, u in zip(labels, radii, directions)
    ])
    nearest = _dense_min_mahalanobis(model, nodes)

    for m in (1.0, 2.0, 3.0):
        bounds = likelihood_bounds(model, m)
        expected = nearest <= m
        clear = np.abs(nearest - m) > 1e-9
        verdicts = np.array([classify(model, bounds, d).stable for d in nodes])
        assert np.array_equal(verdicts[clear], expected[clear])
        assert 0 < expected.sum() < len(nodes)


def test_stability_is_monotone_in_sigma(rng, model_factory):
    model = model_factory(4)
    nodes = model.means[rng.integers(0, 4, size=300)] + rng.normal(0.0, 1.0, size=(300, 50))
    previous = np.zeros(len(nodes), dtype=bool)
    for m in (0.5, 1.0, 2.0, 3.0, 5.0, 8.0):
        bounds = likelihood_bounds(model, m)
        current = np.array([classify(model, bounds, d).stable for d in nodes])
        assert np.all(current[previous])
        previous = current


def test_verdict_is_permutation_invariant(rng, model_factory):
    model = model_factory(4)
    order = [2, 3, 0, 1]
    permuted = GmmModel.from_parameters(
        model.weights[order],
        [model.components[k].mean for k in order],
        [model.components[k].covariance for k in order],
    )
    for d in model.means[rng.integers(0, 4, size=50)] + rng.normal(0.0, 1.5, size=(50, 50)):
        a = classify(model, likelihood_bounds(model, 2.0), d)
        b = classify(permuted, likelihood_bounds(permuted, 2.0), d)
        assert a.stable == b.stable
        assert order[b.best_component] == a.best_component


def test_rejects_mismatched_bounds(model_factory):
    bounds = likelihood_bounds(model_factory(3), 2.0)
    with pytest.raises(InvalidArgumentError):
        classify(model_factory(4), bounds, np.zeros(50))


@pytest.mark.parametrize("m", [0.0, -1.0, float("nan")])
def test_rejects_bad_sigma(model_factory, m):
    with pytest.raises(InvalidArgumentError):
        likelihood_bounds(model_factory(2), m)


def test_empirical_bounds_within_analytic(rng, model_factory):
    model = model_factory(3)
    nodes = model.means[rng.integers(0, 3, size=500)] + rng.normal(0.0, 0.3, size=(500, 50))
    analytic = likelihood_bounds(model, 3.0)
    empirical = likelihood_bounds(model, 3.0, mode="empirical", nodes=nodes)
    assert np.all(empirical.lower >= analytic.lower - 1e-9)
    assert np.all(empirical.upper <= analytic.upper + 1e-9)
    assert empirical.mode == "empirical"


def test_empirical_falls_back_for_empty_region(model_factory, caplog):
    model = model_factory(2)
    nodes = np.full((10, 50), 1e3)
    with caplog.at_level(logging.WARNING):
        bounds = likelihood_bounds(model, 1.0, mode="empirical", nodes=nodes)
    analytic = likelihood_bounds(model, 1.0)
    np.testing.assert_array_equal(bounds.lower, analytic.lower)
    assert caplog.records
