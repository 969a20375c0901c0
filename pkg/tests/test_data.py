import numpy as np
import pytest
from scipy.stats import norm

from aggregp.data import (
    FERTILITY_GRID,
    TaskDataset,
    aggregate,
    inducing_from_tasks,
    kmeans_init,
    synth_fertility_analog,
    synth_poisson_two_task,
)
from aggregp.kernels import EQParams, gram
from aggregp.likelihoods import Gaussian, Poisson
from aggregp.supports import Box, Point, SupportError


def fertility_grid():
    ages = np.arange(15, 55)
    years = np.arange(1944, 2010)
    pts = [Point([a, t]) for a in ages for t in years]
    y = np.random.default_rng(0).normal(size=len(pts))
    return TaskDataset("grid", Gaussian(0.1), pts, y)


def test_poisson_generator_row_counts():
    (t1, t2), test = synth_poisson_two_task(0)
    assert len(t1) + len(test) == 250
    assert len(t2) == 125
    mids = np.array([s.centroid()[0] for s in test.supports])
    assert np.all((mids >= 130) & (mids <= 180))
    assert len(test) == 50
    train_mids = np.array([s.centroid()[0] for s in t1.supports])
    assert not np.any((train_mids >= 130) & (train_mids <= 180))
    assert all(s.upper[0] - s.lower[0] == 2 for s in t2.supports)
    for ds in (t1, t2, test):
        assert np.all(ds.y >= 0) and np.all(ds.y == np.round(ds.y))


def test_poisson_generator_deterministic():
    a, ta = synth_poisson_two_task(3)
    b, tb = synth_poisson_two_task(3)
    for x, y in zip(a + [ta], b + [tb]):
        assert x.y.tobytes() == y.y.tobytes()
        assert [s.lower.tobytes() for s in x.supports] == [s.lower.tobytes() for s in y.supports]
    assert not np.array_equal(synth_poisson_two_task(4)[1].y, tb.y)


def test_poisson_generator_mean_count_in_prior_band():
    (t1, _), test = synth_poisson_two_task(0)
    a = t1.metadata["A"][0]
    supports = t1.supports + test.supports
    k = np.diag(gram(supports, supports, EQParams([t1.metadata["lengthscale"]])))
    # per-row log rate ~ N(0, a^2 k); the mean over 20 seeds of 250-row averages has a small spread
    expected = np.mean(np.exp(0.5 * a * a * k))
    means = []
    for seed in range(20):
        (t1, _), test = synth_poisson_two_task(seed)
        means.append(np.concatenate([t1.y, test.y]).mean())
    # one seed's mean varies mostly through the shared latent sample; bound it by the lognormal spread
    s = a * np.sqrt(k.max())
    lo, hi = np.exp(-norm.ppf(0.995) * s), np.exp(norm.ppf(0.995) * s) * np.exp(0.5 * s * s)
    assert lo <= np.mean(means) <= hi
    assert expected > 0


def test_generator_rejects_unknown_settings():
    with pytest.raises(TypeError):
        synth_poisson_two_task(0, gap_size=3)


def test_fertility_grid_aggregation_counts():
    grid = fertility_grid()
    assert len(aggregate(grid, (5, 5))) == 104
    assert len(aggregate(grid, (2, 2))) == 660


def test_single_point_blocks_keep_targets():
    ds = TaskDataset("g", Gaussian(0.1), [Point([float(i)]) for i in range(6)], np.arange(6.0))
    out = aggregate(ds, 1.0)
    np.testing.assert_array_equal(out.y, ds.y)


def test_complete_blocks_preserve_mean():
    grid = fertility_grid()
    out = aggregate(grid, (2, 2))
    assert out.y.mean() == pytest.approx(grid.y.mean(), rel=1e-12)


def test_aggregate_idempotent_on_aligned_blocks():
    boxes = [Box([i, j], [i + 1, j + 1]) for i in range(8) for j in range(6)]
    ds = TaskDataset("b", Gaussian(0.1), boxes, np.random.default_rng(1).normal(size=48))
    once = aggregate(ds, (2, 2))
    twice = aggregate(once, (2, 2))
    np.testing.assert_array_equal(once.y, twice.y)
    assert [(tuple(a.lower), tuple(a.upper)) for a in once.supports] == \
           [(tuple(b.lower), tuple(b.upper)) for b in twice.supports]


def test_aggregate_errors():
    mixed = TaskDataset("m", Gaussian(0.1), [Point([0.0]), Box([0.0], [1.0])], [1.0, 2.0])
    with pytest.raises(SupportError):
        aggregate(mixed, 1.0)
    with pytest.raises(ValueError):
        aggregate(fertility_grid(), (0, 2))


def test_fertility_analog_shapes():
    (high, agg), test = synth_fertility_analog(0, n_high=100)
    assert len(high) == 100 and len(test) == FERTILITY_GRID["n_test"]
    assert all(isinstance(s, Box) for s in agg.supports)
    assert 600 <= len(agg) <= 660
    train_pts = {tuple(s.coords) for s in high.supports}
    assert not train_pts & {tuple(s.coords) for s in test.supports}


def test_task_dataset_validation():
    with pytest.raises(ValueError):
        TaskDataset("p", Poisson(), [Point([0.0])], [0.5])
    with pytest.raises(ValueError):
        TaskDataset("p", Gaussian(0.1), [Point([0.0])], [0.5, 1.0])
    with pytest.raises(SupportError):
        TaskDataset("p", Gaussian(0.1), [Point([0.0]), Point([0.0, 1.0])], [0.5, 1.0])


def test_kmeans_examples():
    pts = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]])
    centres = kmeans_init(pts, 3, seed=0)
    assert sorted(map(tuple, centres)) == sorted(map(tuple, pts))

    line = np.arange(10.0)[:, None]
    # brute force over split points: the best 2-partition is {0..4}, {5..9}
    costs = {k: ((line[:k] - line[:k].mean()) ** 2).sum() + ((line[k:] - line[k:].mean()) ** 2).sum()
             for k in range(1, 10)}
    k = min(costs, key=costs.get)
    want = sorted([line[:k].mean(), line[k:].mean()])
    np.testing.assert_allclose(sorted(kmeans_init(line, 2, seed=0)[:, 0]), want, atol=0.5)

    a = kmeans_init(np.random.default_rng(0).normal(size=(50, 2)), 5, seed=4)
    b = kmeans_init(np.random.default_rng(0).normal(size=(50, 2)), 5, seed=4)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        kmeans_init(np.zeros((5, 1)), 2)


def test_inducing_from_box_centroids():
    ds = TaskDataset("b", Gaussian(0.1), [Box([0], [2]), Box([4], [6])], [0.0, 1.0])
    np.testing.assert_allclose(sorted(inducing_from_tasks([ds], 2)[:, 0]), [1.0, 5.0])
