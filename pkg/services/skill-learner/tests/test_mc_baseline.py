"""
Базовый метод Монте-Карло с MLP-оценщиком.
"""

import time

import numpy as np
import pytest

from shared.models.errors import InvalidArgumentError

from learner.mc_baseline import (
    MlpConfig,
    SampleBounds,
    best_candidate,
    init_mlp,
    load_mlp,
    mc_predict,
    mc_search,
    mlp_loss,
    sample_candidates,
    save_mlp,
    score,
    train_mlp,
)

SMALL = MlpConfig(hidden=(16, 8), learning_rate=0.1, epochs=300, seed=0)


def _demo_nodes(rng, n=200):
    """Узлы с сосредоточенной нормальной силой около 8 Н"""
    v = rng.normal(size=(n, 40))
    q = np.column_stack([np.ones(n), rng.normal(0.0, 0.05, size=(n, 3))])
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    force = np.column_stack([rng.normal(0.0, 0.1, size=n), rng.normal(0.0, 0.1, size=n), rng.normal(8.0, 0.3, size=n)])
    force[0, 2] = 0.0
    torque = rng.normal(0.0, 0.01, size=(n, 3))
    return np.hstack([v, q, force, torque])


@pytest.fixture
def trained(rng):
    nodes = _demo_nodes(rng)
    mlp, bounds = train_mlp(nodes, SMALL)
    return nodes, mlp, bounds


def test_separates_demonstrations_from_random(rng, trained):
    nodes, mlp, bounds = trained
    negatives = nodes.copy()
    negatives[:, 40:] = sample_candidates(bounds, len(nodes), rng)
    assert score(mlp, nodes).mean() > score(mlp, negatives).mean()
    assert mlp.loss_history[-1] < mlp.loss_history[0]


def test_loss_history_length(trained):
    _, mlp, _ = trained
    assert len(mlp.loss_history) == SMALL.epochs + 1


def test_zero_epochs_keeps_initial_weights(rng):
    cfg = MlpConfig(hidden=(4,), epochs=0, seed=3)
    mlp, _ = train_mlp(_demo_nodes(rng, 20), cfg)
    initial = init_mlp(cfg)
    for a, b in zip(mlp.weights, initial.weights):
        np.testing.assert_array_equal(a, b)
    assert len(mlp.loss_history) == 1


def test_gradient_matches_finite_differences(rng):
    sizes = [4, 3, 2, 1]
    weights = [rng.normal(size=(a, b)) for a, b in zip(sizes, sizes[1:])]
    biases = [rng.normal(size=b) for b in sizes[1:]]
    inputs = rng.normal(size=(5, 4))
    targets = rng.random(5)
    _, grad_w, grad_b = mlp_loss(weights, biases, inputs, targets)

    eps = 1e-6
    for params, grads in ((weights, grad_w), (biases, grad_b)):
        for layer, grad in zip(params, grads):
            numeric = np.zeros_like(layer)
            for idx in np.ndindex(layer.shape):
                original = layer[idx]
                layer[idx] = original + eps
                plus, _, _ = mlp_loss(weights, biases, inputs, targets)
                layer[idx] = original - eps
                minus, _, _ = mlp_loss(weights, biases, inputs, targets)
                layer[idx] = original
                numeric[idx] = (plus - minus) / (2 * eps)
            rel = np.linalg.norm(grad - numeric) / max(1e-12, np.linalg.norm(grad) + np.linalg.norm(numeric))
            assert rel < 1e-4


def test_loss_is_non_increasing_with_small_step(rng):
    mlp, _ = train_mlp(_demo_nodes(rng, 60), MlpConfig(hidden=(8,), learning_rate=0.05, epochs=30))
    history = np.array(mlp.loss_history)
    assert np.all(np.diff(history) <= 1e-12)


def test_rejects_too_few_nodes(rng):
    with pytest.raises(InvalidArgumentError):
        train_mlp(_demo_nodes(rng, 9), SMALL)


def test_rejects_degenerate_bounds(rng):
    nodes = _demo_nodes(rng, 20)
    nodes[:, 40:] = nodes[0, 40:]
    with pytest.raises(InvalidArgumentError):
        train_mlp(nodes, SMALL)


def test_single_sample_returns_that_candidate(rng, trained):
    _, mlp, bounds = trained
    v = rng.normal(size=40)
    candidate = sample_candidates(bounds, 1, np.random.default_rng(17), mlp.quaternion_sampling)[0]
    np.testing.assert_allclose(mc_predict(mlp, bounds, v, 1, 17).flatten(), candidate, atol=1e-12)


def test_duplicated_candidates_do_not_change_choice(rng, trained):
    _, mlp, bounds = trained
    v = rng.normal(size=40)
    candidates = sample_candidates(bounds, 50, rng)
    index, _ = best_candidate(mlp, v, candidates)
    doubled_index, _ = best_candidate(mlp, v, np.vstack([candidates, candidates]))
    np.testing.assert_array_equal(candidates[index], np.vstack([candidates, candidates])[doubled_index])


def test_chosen_candidate_has_max_score(rng, trained):
    _, mlp, bounds = trained
    result = mc_search(mlp, bounds, rng.normal(size=40), 200, seed=5)
    assert result.scores[result.index] == result.scores.max()
    assert result.candidates.shape == (200, 10)


def test_more_samples_never_score_lower(rng, trained):
    _, mlp, bounds = trained
    v = rng.normal(size=40)
    small = mc_search(mlp, bounds, v, 100, seed=9)
    large = mc_search(mlp, bounds, v, 1000, seed=9)
    np.testing.assert_array_equal(large.candidates[:100], small.candidates)
    assert large.scores.max() >= small.scores.max()


def test_prediction_is_deterministic(rng, trained):
    _, mlp, bounds = trained
    v = rng.normal(size=40)
    assert mc_predict(mlp, bounds, v, 300, 4) == mc_predict(mlp, bounds, v, 300, 4)


def test_candidates_stay_in_bounds(rng, trained):
    _, _, bounds = trained
    candidates = sample_candidates(bounds, 500, rng)
    assert np.all(candidates[:, 4:] >= bounds.low[4:])
    assert np.all(candidates[:, 4:] <= bounds.high[4:])
    np.testing.assert_allclose(np.linalg.norm(candidates[:, :4], axis=1), 1.0, atol=1e-12)


def test_sphere_sampling_uses_center_hemisphere(rng, trained):
    _, _, bounds = trained
    candidates = sample_candidates(bounds, 500, rng, mode="sphere")
    center = 0.5 * (bounds.low[:4] + bounds.high[:4])
    np.testing.assert_allclose(np.linalg.norm(candidates[:, :4], axis=1), 1.0, atol=1e-12)
    assert np.all(candidates[:, :4] @ center >= 0.0)


def test_sample_bounds_validation():
    with pytest.raises(InvalidArgumentError):
        SampleBounds(np.ones(10), np.zeros(10))
    with pytest.raises(InvalidArgumentError):
        sample_candidates(SampleBounds(np.zeros(10), np.ones(10)), 0, np.random.default_rng(0))


def test_save_load_roundtrip(tmp_path, rng, trained):
    nodes, mlp, bounds = trained
    save_mlp(mlp, bounds, tmp_path / "mlp.txt")
    loaded, loaded_bounds = load_mlp(tmp_path / "mlp.txt")
    np.testing.assert_array_equal(score(loaded, nodes), score(mlp, nodes))
    np.testing.assert_array_equal(loaded_bounds.low, bounds.low)
    assert loaded.layer_sizes == mlp.layer_sizes


@pytest.mark.slow
def test_prediction_time_grows_linearly_with_samples(rng, trained):
    _, _, bounds = trained
    mlp = init_mlp(MlpConfig())
    v = rng.normal(size=40)

    def timed(n, repeats=7):
        best = float("inf")
        for seed in range(repeats):
            started = time.perf_counter()
            mc_predict(mlp, bounds, v, n, seed)
            best = min(best, time.perf_counter() - started)
        return best

    timed(100)
    ratio = timed(10_000) / timed(100)
    assert 50 <= ratio <= 200
