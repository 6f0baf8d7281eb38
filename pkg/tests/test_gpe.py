import warnings

import numpy as np
import pytest

from romcex.exceptions import DomainError, SizeError
from romcex.gpe import GpeEmulator, KernelSpec, gpe_predict, gpe_train, gpe_weights, loo_errors


def smooth(x):
    x = np.atleast_2d(x)
    return np.sin(3 * x[:, 0]) + 0.5 * np.cos(2 * x[:, 1])


def test_one_point_exact():
    em = gpe_train([[0.2, 0.4]], [1.7])
    assert np.allclose(gpe_predict(em, [0.2, 0.4]), [1.7])


def test_zero_values_zero_predictor():
    rng = np.random.default_rng(0)
    em = gpe_train(rng.random((5, 2)), np.zeros(5))
    assert np.all(gpe_predict(em, rng.random((10, 2))) == 0)


def test_weights_solve_kriging_system():
    rng = np.random.default_rng(1)
    x = rng.random((5, 1))
    em = gpe_train(x, np.sin(4 * x[:, 0]))
    mu = np.array([0.37])
    w = gpe_weights(em, mu)
    k = em.kernel(x, x)
    assert np.max(np.abs(k @ w - em.kernel(x, mu[None, :])[:, 0])) <= 1e-8


@pytest.mark.parametrize("kind", ["squared-exponential", "exponential"])
@pytest.mark.parametrize("mean_mode", ["zero", "constant-fit"])
def test_interpolates_training_points(kind, mean_mode):
    rng = np.random.default_rng(2)
    x = rng.random((10, 2))
    y = smooth(x)
    em = gpe_train(x, y, KernelSpec(kind), mean_mode)
    pred = gpe_predict(em, x)[:, 0]
    assert np.max(np.abs(pred - y)) <= 1e-6 * np.max(np.abs(y))


def test_decay_far_away():
    rng = np.random.default_rng(3)
    x = rng.random((6, 2))
    y = smooth(x)
    em = gpe_train(x, y, KernelSpec(length_scale=0.2))
    far = gpe_predict(em, [5.0, 5.0])
    assert np.linalg.norm(far) <= 1e-6 * np.max(np.abs(y))


def test_loo_beats_constant_mean():
    rng = np.random.default_rng(4)
    x = rng.random((8, 2))
    y = smooth(x)
    loo = loo_errors(x, y, mean_mode="constant-fit")
    const = np.array([abs(np.delete(y, i).mean() - y[i]) for i in range(8)])
    assert np.sqrt(np.mean(loo**2)) < np.sqrt(np.mean(const**2))


def test_vector_outputs_both_solvers():
    rng = np.random.default_rng(5)
    x = rng.random((7, 2))
    y = np.column_stack([smooth(x), x[:, 0] ** 2, np.exp(x[:, 1])])
    s = np.array([[1.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 1.0]])
    kern = KernelSpec(cross_covariance=s)
    sep = gpe_train(x, y, kern, "constant-fit", "separable")
    blk = gpe_train(x, y, kern, "constant-fit", "blocked")
    for em in (sep, blk):
        assert np.max(np.abs(gpe_predict(em, x) - y)) <= 1e-6 * np.max(np.abs(y))
    q = rng.random((4, 2))
    assert np.allclose(gpe_predict(sep, q), gpe_predict(blk, q), atol=1e-8)


def test_blocked_size_cap():
    x = np.linspace(0, 1, 1001)[:, None]
    with pytest.raises(SizeError):
        gpe_train(x, np.column_stack([x[:, 0], x[:, 0]]), KernelSpec(length_scale=0.01), solver="blocked")


def test_duplicates_collapsed_with_warning():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        em = gpe_train([[0.0], [0.0], [1.0]], [1.0, 1.0, 2.0])
    assert em.train_inputs.shape[0] == 2
    assert any("duplicate" in str(w.message) for w in caught)


def test_empirical_gram_kernel():
    feats = lambda p: np.array([1.0, p[0], p[0] ** 2])  # noqa: E731
    kern = KernelSpec("empirical-gram", feature_map=feats)
    x = np.array([[0.0], [0.5], [1.0]])
    em = gpe_train(x, x[:, 0] ** 2, kern)
    assert np.allclose(gpe_predict(em, [[0.25]]), [[0.0625]], atol=1e-6)
    with pytest.raises(DomainError):
        KernelSpec("empirical-gram")


def test_kernel_validation():
    with pytest.raises(DomainError):
        KernelSpec("matern")
    with pytest.raises(DomainError):
        KernelSpec(length_scale=-1.0)
    with pytest.raises(DomainError):
        gpe_train([[0.0]], [1.0], mean_mode="linear")


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    x = rng.random((6, 2))
    em = gpe_train(x, smooth(x), mean_mode="constant-fit")
    em.save(tmp_path / "em.json")
    back = GpeEmulator.load(tmp_path / "em.json")
    q = rng.random((3, 2))
    assert np.allclose(gpe_predict(back, q), gpe_predict(em, q), atol=1e-14)
