import numpy as np
import pytest

from aggregp.kernels import EQParams, gram, k_interval_point_1d, k_support
from aggregp.lmc import (
    LatentIndexMap,
    LMCParams,
    build_Kfu,
    build_Kuu,
    cov_ff,
    kff_diag,
    prior_gram,
)
from aggregp.supports import Bag, Box, Point, Polytope, SupportError, quadrature

from oracles import random_supports

S1, S2 = Box([0.0, 0.0], [1.0, 2.0]), Polytope([(0.5, 0.5), (2, 0), (1.5, 1.5)])


def test_unit_mixing_is_plain_kernel():
    p = LMCParams.create([[0.8, 1.2]], [[[1.0]]])
    assert cov_ff(0, 0, S1, S2, p) == pytest.approx(k_support(S1, S2, EQParams([0.8, 1.2])), rel=1e-12)


def test_mixing_weights_scale_cross_covariance():
    p = LMCParams.create([[0.8, 1.2]], [[[2.0], [3.0]]])
    assert cov_ff(0, 1, S1, S2, p) == pytest.approx(6 * k_support(S1, S2, EQParams([0.8, 1.2])), rel=1e-12)


def test_cov_ff_matches_explicit_expansion():
    rng = np.random.default_rng(3)
    ls = [rng.uniform(0.5, 2, 2) for _ in range(2)]
    A = [rng.normal(size=(3, 2)), rng.normal(size=(3, 1))]
    p = LMCParams.create(ls, A)
    for j, j2 in [(0, 0), (0, 2), (1, 2)]:
        want = sum(A[q][j, i] * A[q][j2, i] * k_support(S1, S2, EQParams(ls[q]))
                   for q in range(2) for i in range(A[q].shape[1]))
        assert cov_ff(j, j2, S1, S2, p) == pytest.approx(want, rel=1e-10)


def test_kuu_block_structure():
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(3, 2))
    p = LMCParams.create([[1.0, 1.0], [0.5, 2.0]], [np.ones((2, 1)), np.ones((2, 1))])
    K = build_Kuu(Z, p, 1e-6)
    assert K.shape == (6, 6)
    assert np.all(K[:3, 3:] == 0) and np.all(K[3:, :3] == 0)
    np.testing.assert_allclose(np.diag(K), 1 + 1e-6)


def test_kuu_repeats_blocks_per_realisation():
    Z = np.linspace(0, 1, 4)[:, None]
    p = LMCParams.create([[1.0]], [np.ones((2, 3))])
    K = build_Kuu(Z, p)
    assert K.shape == (12, 12)
    np.testing.assert_array_equal(K[:4, :4], K[8:, 8:])


def test_kuu_cholesky_succeeds():
    rng = np.random.default_rng(1)
    for _ in range(50):
        Z = rng.uniform(-2, 2, size=(rng.integers(2, 30), 2))
        p = LMCParams.create([rng.uniform(0.2, 5, 2)], [np.ones((1, 1))])
        np.linalg.cholesky(build_Kuu(Z, p, 1e-6))


def test_kfu_entries():
    Z = np.array([[0.0], [1.0], [2.5]])
    p = LMCParams.create([[1.0]], [[[1.0]]])
    assert build_Kfu([(0, Point([1.0]))], Z, p)[0, 1] == pytest.approx(1.0)

    p = LMCParams.create([[0.7]], [[[1.3], [-0.4]]])
    K = build_Kfu([(1, Box([0.2], [1.9]))], Z, p)
    want = [-0.4 * k_interval_point_1d(0.2, 1.9, z, EQParams([0.7])) for z in Z[:, 0]]
    np.testing.assert_allclose(K[0], want, rtol=1e-12)

    eps = 1e-4
    narrow = build_Kfu([(0, Box([0.6 - eps], [0.6 + eps]))], Z, p)
    point = build_Kfu([(0, Point([0.6]))], Z, p)
    np.testing.assert_allclose(narrow, point, atol=1e-6)


def test_kff_diag():
    p = LMCParams.create([[1.0]], [[[1.0]]])
    assert kff_diag([(0, Point([0.3]))], p)[0] == pytest.approx(1.0)
    assert kff_diag([(0, Box([0.0], [4.0]))], LMCParams.create([[0.3]], [[[1.0]]]))[0] < 1.0

    rng = np.random.default_rng(2)
    p = LMCParams.create([[0.9, 1.1]], [rng.normal(size=(2, 1))])
    rows = [(int(j), s) for j, s in zip(rng.integers(0, 2, 6), random_supports(rng, 6))]
    np.testing.assert_allclose(kff_diag(rows, p), np.diag(prior_gram(rows, p)), rtol=1e-10)


def test_wide_interval_variance_matches_quadrature():
    p = LMCParams.create([[0.3]], [[[1.0]]])
    q = quadrature(Box([0.0], [4.0]), 2000)
    K = np.exp(-((q.nodes - q.nodes.T) / 0.3) ** 2)
    want = q.weights @ K @ q.weights / 16.0
    assert kff_diag([(0, Box([0.0], [4.0]))], p)[0] == pytest.approx(want, rel=1e-5)


def test_bag_of_one_point_is_a_point():
    p = LMCParams.create([[0.8, 1.5]], [[[1.0], [0.5]]])
    pt = Point([0.2, 0.7])
    bag = Bag([[0.2, 0.7]])
    Z = np.array([[0.0, 0.0], [1.0, 1.0]])
    np.testing.assert_allclose(build_Kfu([(1, bag)], Z, p), build_Kfu([(1, pt)], Z, p), rtol=1e-14)
    assert cov_ff(0, 1, bag, S1, p) == pytest.approx(cov_ff(0, 1, pt, S1, p), rel=1e-14)
    assert kff_diag([(0, bag)], p)[0] == pytest.approx(1.0)


def test_bag_of_midpoint_nodes_approaches_interval():
    p = EQParams([1.0])
    q = quadrature(Box([0.0], [2.0]), 64)
    bag = Bag(q.nodes)
    assert k_support(bag, bag, p) == pytest.approx(k_support(Box([0.0], [2.0]), Box([0.0], [2.0]), p), abs=1e-3)


def test_bag_grams_psd():
    rng = np.random.default_rng(5)
    bags = [Bag(rng.normal(size=(rng.integers(1, 8), 2))) for _ in range(10)]
    K = gram(bags, bags, EQParams([1.0, 0.7]))
    w = np.linalg.eigvalsh(K)
    assert w.min() >= -1e-8 * w.max()


def test_prior_gram_symmetric_psd():
    rng = np.random.default_rng(6)
    p = LMCParams.create([[1.0, 0.6], [2.0, 2.0]], [rng.normal(size=(3, 1)), rng.normal(size=(3, 2))])
    rows = [(int(j), s) for j, s in zip(rng.integers(0, 3, 15), random_supports(rng, 15))]
    K = prior_gram(rows, p, 16)
    np.testing.assert_allclose(K, K.T, atol=1e-12)
    w = np.linalg.eigvalsh(K)
    assert w.min() >= -1e-8 * w.max()


def test_swapping_tasks_transposes_blocks():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(2, 1))
    p = LMCParams.create([[1.0, 1.0]], [A])
    q = LMCParams.create([[1.0, 1.0]], [A[::-1]])
    s = random_supports(rng, 4)
    rows0, rows1 = [(0, x) for x in s], [(1, x) for x in s]
    np.testing.assert_array_equal(prior_gram(rows0, p, rows2=rows1), prior_gram(rows1, q, rows2=rows0))


def test_perfectly_correlated_tasks():
    p = LMCParams.create([[1.0, 1.0]], [np.ones((3, 1))])
    vals = {cov_ff(j, j2, S1, S2, p) for j in range(3) for j2 in range(3)}
    assert len(vals) == 1


def test_slot_map():
    m = LatentIndexMap.from_counts([1, 2, 1])
    assert m.slots == ((0,), (1, 2), (3,)) and m.J == 4
    with pytest.raises(ValueError):
        LatentIndexMap.from_counts([1, 0])


def test_errors():
    p = LMCParams.create([[1.0]], [[[1.0]]])
    with pytest.raises(IndexError):
        kff_diag([(3, Point([0.0]))], p)
    with pytest.raises(SupportError):
        build_Kfu([(0, Point([0.0, 1.0]))], np.zeros((2, 1)), p)
    with pytest.raises(ValueError):
        LMCParams.create([[1.0], [2.0]], [[[1.0]]])
