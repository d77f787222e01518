import numpy as np
import pytest

from tubeil.mlp import (
    MlpWeights,
    Normalizer,
    TrainConfig,
    TrainingDiverged,
    forward,
    gradient_check,
    loss_and_grads,
    normalized_mse,
    train,
)

FAST = TrainConfig(epochs=200, polish_iters=0, layer_sizes=(4, 8, 8, 1))


def test_zero_network_outputs_zero(rng):
    w = MlpWeights.zeros()
    assert np.all(forward(w, rng.normal(size=(20, 4))) == 0.0)


def test_two_node_hand_example():
    # tanh(1 * 0.5 + 0) * 2 + 1
    w = MlpWeights((1, 1, 1), [np.array([[1.0]]), np.array([[2.0]])], [np.zeros(1), np.ones(1)],
                   Normalizer.identity(1))
    assert forward(w, np.array([0.5])) == pytest.approx(2.0 * np.tanh(0.5) + 1.0, abs=1e-15)


def test_normalization_is_applied():
    norm = Normalizer(np.array([1.0]), np.array([2.0]), out_mean=3.0, out_scale=4.0)
    w = MlpWeights((1, 1, 1), [np.array([[1.0]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)], norm)
    # input (5 - 1) / 2 = 2, output tanh(2) * 4 + 3
    assert forward(w, np.array([5.0])) == pytest.approx(np.tanh(2.0) * 4.0 + 3.0, abs=1e-14)


def test_normalizer_round_trip(rng):
    X = rng.normal(size=(50, 4)) * [1, 10, 0.1, 3]
    y = rng.normal(size=50) * 7 + 2
    n = Normalizer.fit(X, y)
    assert np.allclose(n.denormalize_inputs(n.normalize_inputs(X)), X, atol=1e-12)
    assert np.allclose(n.denormalize_outputs(n.normalize_outputs(y)), y, atol=1e-12)
    Z = n.normalize_inputs(X)
    assert np.allclose(Z.mean(axis=0), 0, atol=1e-12) and np.allclose(Z.std(axis=0), 1, atol=1e-12)


def test_constant_columns_keep_unit_scale():
    X = np.column_stack([np.arange(5.0), np.zeros(5), np.ones(5), np.arange(5.0)])
    n = Normalizer.fit(X, np.ones(5))
    assert n.in_scale[1] == 1.0 and n.in_scale[2] == 1.0 and n.out_scale == 1.0


def test_backprop_matches_finite_differences_small(rng):
    w = MlpWeights.initialize((2, 2, 1), seed=3)
    assert gradient_check(w, rng.normal(size=(7, 2)), rng.normal(size=7)) < 1e-5


def test_backprop_matches_finite_differences_cartpole_net(rng):
    w = MlpWeights.initialize(seed=1)
    assert gradient_check(w, rng.normal(size=(10, 4)), rng.normal(size=10)) < 1e-5


def test_gradient_vanishes_at_exact_fit(rng):
    w = MlpWeights.initialize((4, 5, 1), seed=2)
    X = rng.normal(size=(6, 4))
    y = forward(w, X)
    loss, dWs, dbs = loss_and_grads(w, w.norm.normalize_inputs(X), w.norm.normalize_outputs(y))
    assert loss == 0.0
    assert max(np.max(np.abs(g)) for g in dWs + dbs) == 0.0


def test_finite_difference_error_shrinks_with_step(rng):
    w = MlpWeights.initialize((3, 4, 1), seed=4)
    X, y = rng.normal(size=(5, 3)), rng.normal(size=5)
    coarse = gradient_check(w, X, y, h=1e-2)
    fine = gradient_check(w, X, y, h=1e-4)
    assert fine < coarse / 50


def test_singleton_memorized():
    X = np.array([[0.3, -0.2, 0.1, 0.5]])
    w, _ = train(X, np.array([2.5]), FAST)
    assert forward(w, X[0]) == pytest.approx(2.5, abs=1e-6)


def test_linear_target_learned(rng):
    X = rng.uniform(-1, 1, size=(200, 4))
    y = X @ np.array([1.0, -2.0, 0.5, 3.0]) + 0.7
    w, hist = train(X, y, TrainConfig(epochs=300, layer_sizes=(4, 8, 8, 1), polish_iters=500))
    assert normalized_mse(w, X, y) < 1e-4
    assert hist[-1] < hist[0]


def test_polish_never_increases_loss(rng):
    X = rng.uniform(-1, 1, size=(60, 4))
    y = np.sin(X[:, 0]) + X[:, 1] * X[:, 2]
    w, _ = train(X, y, TrainConfig(epochs=50, layer_sizes=(4, 8, 1), polish_iters=200))
    assert w.meta["final_mse"] <= w.meta["adam_mse"]
    assert w.meta["polish_iterations"] > 0


def test_training_is_reproducible(rng):
    X = rng.normal(size=(40, 4))
    y = X[:, 0] - X[:, 3]
    cfg = TrainConfig(epochs=30, layer_sizes=(4, 6, 1), polish_iters=30)
    a, _ = train(X, y, cfg)
    b, _ = train(X, y, cfg)
    assert np.array_equal(a.flat(), b.flat())


def test_save_load_bit_exact(tmp_path):
    w = MlpWeights.initialize(seed=9, norm=Normalizer(np.arange(4.0), np.full(4, 0.3), 1.5, 2.5))
    w.meta = {"note": "x"}
    w.save(tmp_path / "w.json")
    back = MlpWeights.load(tmp_path / "w.json")
    assert np.array_equal(back.flat(), w.flat())
    assert np.array_equal(back.norm.in_scale, w.norm.in_scale)
    x = np.array([0.1, 0.2, -0.3, 0.4])
    assert forward(back, x) == forward(w, x)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        train(np.zeros((0, 4)), np.zeros(0), FAST)
    with pytest.raises(ValueError):
        train(np.zeros((2, 4)), np.array([1.0, np.nan]), FAST)
    with pytest.raises(ValueError):
        forward(MlpWeights.zeros(), np.zeros(3))
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_divergence_raised(rng):
    X = rng.normal(size=(20, 4))
    with pytest.raises(TrainingDiverged), np.errstate(all="ignore"):
        train(X, X[:, 0] * 1e3, TrainConfig(epochs=5, learning_rate=1e300, layer_sizes=(4, 4, 1), polish_iters=0))


def test_nominal_network_fits_demonstration(nominal_net, demo_traj):
    from tubeil.demo import nominal_dataset

    ds = nominal_dataset(demo_traj)
    assert normalized_mse(nominal_net, ds.states, ds.labels) <= 1e-3
    assert np.max(np.abs(forward(nominal_net, ds.states) - ds.labels)) < 0.05
