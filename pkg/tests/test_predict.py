import math

import numpy as np
import pytest

from aggregp.data import TaskDataset
from aggregp.inference import ModelConfig, TrainConfig, fit, init_model
from aggregp.likelihoods import Gaussian, Poisson
from aggregp.lmc import kff_diag
from aggregp.predict import predict_f, predict_y, smse, snlp
from aggregp.supports import Box, Point, SupportError, quadrature


@pytest.fixture(scope="module")
def fitted():
    x = np.linspace(0, 4, 7)
    y = np.sin(x)
    ds = TaskDataset("clean", Gaussian(1e-4), [Point([v]) for v in x], y)
    # hyperparameters held at their true values; only q(u) is optimised
    model = fit([ds], TrainConfig(e_steps=50, m_steps=0, cycles=200, lr=0.01, tol=0.0),
                ModelConfig(Z=x[:, None], lengthscales=[[1.2]], A=[[[1.0]]], learn_lengthscales=False))
    return model, ds


def test_interpolates_noise_free_training_data(fitted):
    model, ds = fitted
    m, _ = predict_f(model, 0, ds.supports)
    np.testing.assert_allclose(m[:, 0], ds.y, atol=1e-3)


def test_far_field_reverts_to_prior(fitted):
    model, _ = fitted
    m, v = predict_f(model, 0, [Point([500.0])])
    assert m[0, 0] == pytest.approx(0.0, abs=1e-6)
    prior = kff_diag([(0, Point([500.0]))], model.params)[0]
    assert v[0, 0] == pytest.approx(prior, abs=1e-6)


def test_box_prediction_is_average_of_points(fitted):
    model, _ = fitted
    box = Box([0.7], [2.9])
    q = quadrature(box, 400)
    pts, _ = predict_f(model, 0, [Point(n) for n in q.nodes])
    m, _ = predict_f(model, 0, [box])
    assert m[0, 0] == pytest.approx(float(q.weights @ pts[:, 0]) / (2.9 - 0.7), abs=1e-3)


def test_posterior_variance_below_prior(fitted):
    model, _ = fitted
    tests = [Point([v]) for v in np.linspace(-2, 6, 17)] + [Box([0.0], [1.0]), Box([2.0], [5.0])]
    _, v = predict_f(model, 0, tests)
    prior = kff_diag([(0, s) for s in tests], model.params)
    assert np.all(v[:, 0] <= prior + 1e-8)


def test_predict_y_gaussian(fitted):
    model, ds = fitted
    out = predict_y(model, 0, ds.supports[:3], ds.y[:3])
    np.testing.assert_allclose(out.y_var, out.f_var[:, 0] + model.likelihoods[0].noise_variance)
    assert out.log_density.shape == (3,)
    assert predict_y(model, 0, ds.supports[:3]).log_density is None


def test_predict_y_poisson_mean():
    ds = TaskDataset("c", Poisson(), [Box([a], [a + 1]) for a in range(6)], [0, 2, 1, 4, 3, 1])
    model = init_model([ds], ModelConfig(num_inducing=3))
    out = predict_y(model, 0, ds.supports, ds.y)
    np.testing.assert_allclose(out.y_mean, np.exp(out.f_mean[:, 0] + out.f_var[:, 0] / 2))


def test_predict_errors(fitted):
    model, _ = fitted
    with pytest.raises(IndexError):
        predict_f(model, 3, [Point([0.0])])
    with pytest.raises(SupportError):
        predict_f(model, 0, [Point([0.0, 1.0])])
    with pytest.raises(ValueError):
        predict_y(model, 0, [Point([0.0])], [1.0, 2.0])


def test_smse_examples():
    y = np.array([1.0, 3.0, 2.0, 7.0])
    assert smse(y, y) == 0.0
    assert smse(y, np.full(4, y.mean())) == pytest.approx(1.0)
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, 50))
    mse = sum((ai - bi) ** 2 for ai, bi in zip(a, b)) / 50
    mean = sum(a) / 50
    var = sum((ai - mean) ** 2 for ai in a) / 50
    assert smse(a, b) == pytest.approx(mse / var, rel=1e-12)
    c = 1024.0
    assert smse(a + c, b + c) == pytest.approx(smse(a, b), rel=1e-9)
    with pytest.raises(ValueError):
        smse([1.0, 1.0], [1.0, 2.0])


def test_snlp_examples():
    rng = np.random.default_rng(2)
    train = rng.normal(2.0, 1.5, 40)
    test = rng.normal(2.0, 1.5, 25)
    mu, var = train.mean(), train.var()
    base = -0.5 * np.log(2 * np.pi * var) - 0.5 * (test - mu) ** 2 / var
    assert snlp(base, test, train) == pytest.approx(0.0, abs=1e-12)
    sharp = -0.5 * np.log(2 * np.pi * 1e-6) * np.ones(25)
    assert snlp(sharp, test, train) < 0
    logp = rng.normal(-1.0, 0.3, 25)
    want = -logp.mean() - np.mean(0.5 * np.log(2 * math.pi * var) + 0.5 * (test - mu) ** 2 / var)
    assert snlp(logp, test, train) == pytest.approx(want, rel=1e-12)
