"""
Смесь гауссиан: EM, плотность, расстояние Махаланобиса, формат модели.
"""

import numpy as np
import pytest

from shared.models.errors import InvalidArgumentError

from learner.gmm import (
    LOG_2PI,
    EmConfig,
    GaussianComponent,
    GmmModel,
    component_log_density,
    fit_em,
    format_cluster_summary,
    load_gmm,
    log_density,
    mahalanobis,
    save_gmm,
    summarize_clusters,
)


def _naive_log_density(model: GmmModel, d: np.ndarray) -> float:
    total = 0.0
    for weight, c in zip(model.weights, model.components):
        diff = d - c.mean
        maha2 = diff @ np.linalg.inv(c.covariance) @ diff
        total += weight * np.exp(-0.5 * (maha2 + np.linalg.slogdet(c.covariance)[1] + model.dim * LOG_2PI))
    return float(np.log(total))


def _sample(model: GmmModel, n: int, rng) -> np.ndarray:
    labels = rng.choice(model.n_components, size=n, p=model.weights)
    return np.vstack([rng.multivariate_normal(model.components[k].mean, model.components[k].covariance)
                      for k in labels])


def test_single_component_matches_moments(rng, spd):
    cov = spd(3)
    data = rng.multivariate_normal([1.0, -2.0, 0.5], cov, size=2000)
    model = fit_em(data, 1, EmConfig(seed=0), input_dim=2)
    component = model.components[0]
    np.testing.assert_allclose(component.mean, data.mean(axis=0), atol=1e-10)
    sample_cov = np.cov(data, rowvar=False, bias=True)
    assert np.linalg.norm(component.covariance - sample_cov) <= 0.1 * np.linalg.norm(sample_cov)
    assert model.weights[0] == pytest.approx(1.0, abs=1e-12)


def test_two_separated_clusters(rng):
    data = np.vstack([
        rng.normal([5.0, 5.0], 1.0, size=(500, 2)),
        rng.normal([-5.0, -5.0], 1.0, size=(500, 2)),
    ])
    model = fit_em(data, 2, EmConfig(seed=1), input_dim=1)
    means = sorted(model.means.tolist())
    np.testing.assert_allclose(means[0], [-5.0, -5.0], atol=0.5)
    np.testing.assert_allclose(means[1], [5.0, 5.0], atol=0.5)
    np.testing.assert_allclose(model.weights, [0.5, 0.5], atol=0.1)

    history = np.array(model.log_likelihood_history)
    assert len(history) >= 2
    assert np.all(np.diff(history) >= -1e-9 * np.maximum(1.0, np.abs(history[:-1])))


def test_as_many_components_as_points(rng):
    data = rng.normal(size=(5, 50))
    model = fit_em(data, 5, EmConfig(seed=0, max_iter=20))
    assert np.isfinite(model.total_log_likelihood(data))
    assert abs(model.weights.sum() - 1.0) <= 1e-12


def test_weights_sum_to_one(rng):
    data = rng.normal(size=(300, 6))
    model = fit_em(data, 4, EmConfig(seed=2), input_dim=3)
    assert abs(model.weights.sum() - 1.0) <= 1e-12
    assert np.all(model.weights > 0)


@pytest.mark.parametrize("bad", [
    lambda rng: (rng.normal(size=(3, 50)), 4),
    lambda rng: (np.full((20, 50), np.nan), 2),
])
def test_fit_rejects_bad_input(rng, bad):
    data, k = bad(rng)
    with pytest.raises(InvalidArgumentError):
        fit_em(data, k)


def test_density_at_mean_of_standard_normal():
    model = GmmModel.from_parameters([1.0], [np.zeros(50)], [np.eye(50)])
    assert log_density(model, np.zeros(50)) == pytest.approx(-25.0 * LOG_2PI, abs=1e-12)


def test_log_density_matches_naive_sum(rng, model_factory):
    model = model_factory(16)
    for d in _sample(model, 100, rng):
        assert log_density(model, d) == pytest.approx(_naive_log_density(model, d), abs=1e-9)


def test_log_density_bounds_weighted_components(rng, model_factory):
    model = model_factory(4)
    for d in _sample(model, 20, rng):
        best = max(np.log(model.weights[k]) + component_log_density(model, k, d) for k in range(4))
        assert log_density(model, d) >= best - 1e-12


def test_log_density_is_permutation_invariant(rng, model_factory):
    model = model_factory(5)
    order = [3, 0, 4, 1, 2]
    permuted = GmmModel.from_parameters(
        model.weights[order],
        [model.components[k].mean for k in order],
        [model.components[k].covariance for k in order],
    )
    for d in _sample(model, 10, rng):
        assert log_density(permuted, d) == pytest.approx(log_density(model, d), abs=1e-9)


def test_log_density_rejects_wrong_dimension(model_factory):
    with pytest.raises(InvalidArgumentError):
        log_density(model_factory(2), np.zeros(49))


def test_mahalanobis_identity_cases():
    model = GmmModel.from_parameters([1.0], [np.zeros(50)], [np.eye(50)])
    assert mahalanobis(model, 0, np.zeros(50)) == 0.0
    unit = np.zeros(50)
    unit[7] = 1.0
    assert mahalanobis(model, 0, unit) == pytest.approx(1.0, abs=1e-12)


def test_mahalanobis_matches_dense_inverse(rng, model_factory):
    model = model_factory(3)
    for d in rng.normal(0.0, 3.0, size=(20, 50)):
        for k, c in enumerate(model.components):
            diff = d - c.mean
            expected = np.sqrt(diff @ np.linalg.inv(c.covariance) @ diff)
            assert mahalanobis(model, k, d) == pytest.approx(expected, rel=1e-8)


def test_mahalanobis_triangle_inequality(rng, model_factory):
    model = model_factory(1)
    c = model.components[0]
    inv = np.linalg.inv(c.covariance)
    for a, b in rng.normal(0.0, 2.0, size=(20, 2, 50)):
        between = np.sqrt((a - b) @ inv @ (a - b))
        assert mahalanobis(model, 0, a) <= between + mahalanobis(model, 0, b) + 1e-9


def test_component_index_out_of_range(model_factory):
    model = model_factory(2)
    with pytest.raises(InvalidArgumentError):
        mahalanobis(model, 2, np.zeros(50))
    with pytest.raises(InvalidArgumentError):
        component_log_density(model, -1, np.zeros(50))


def test_logdet_matches_slogdet(spd):
    cov = spd(50)
    component = GaussianComponent.from_moments(np.zeros(50), cov)
    assert component.logdet == pytest.approx(np.linalg.slogdet(cov)[1], abs=1e-9)


def test_rejects_non_spd_covariance():
    cov = np.eye(3)
    cov[2, 2] = -1.0
    with pytest.raises(InvalidArgumentError):
        GaussianComponent.from_moments(np.zeros(3), cov)


def test_save_load_roundtrip(tmp_path, model_factory):
    model = model_factory(3)
    save_gmm(model, tmp_path / "gmm.txt")
    loaded = load_gmm(tmp_path / "gmm.txt")
    assert loaded.n_components == 3
    assert (loaded.input_dim, loaded.output_dim) == (40, 10)
    np.testing.assert_array_equal(loaded.weights, model.weights)
    for a, b in zip(loaded.components, model.components):
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.covariance, b.covariance)


def test_cluster_summary(rng, model_factory):
    model = model_factory(4, unit_quaternions=True)
    nodes = _sample(model, 200, rng)
    summaries = summarize_clusters(model, nodes)
    assert sum(s.n_assigned for s in summaries) == 200
    text = format_cluster_summary(summaries)
    assert text.splitlines()[0].startswith("component,weight")
    assert len(text.splitlines()) == 5
