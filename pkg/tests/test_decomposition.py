import itertools

import numpy as np
import pytest

from losparse.decomposition import (
    CompressionBudget,
    DenseLayer,
    FactorizedLayer,
    backward,
    forward,
    init_from_pretrained,
    rank_from_budget,
    reconstruct,
    remaining_ratio,
)
from losparse.errors import BudgetError, ShapeError
from losparse.linalg import frobenius_norm, svd


def random_layer(rng, d1, d2, r):
    return FactorizedLayer(rng.standard_normal((d1, r)), rng.standard_normal((r, d2)), rng.standard_normal((d1, d2)))


def fd_gradient(f, x, h=1e-5):
    """Central differences of scalar ``f`` with respect to every entry of ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rel=1e-5, floor=1e-8):
    err = np.abs(analytic - numeric)
    assert np.all(err <= rel * np.abs(numeric) + floor), err.max()


def test_init_diagonal():
    layer = init_from_pretrained(np.diag([3.0, 1.0]), 1)
    np.testing.assert_allclose(layer.U, [[np.sqrt(3)], [0.0]], atol=1e-15)
    np.testing.assert_allclose(layer.V, [[np.sqrt(3), 0.0]], atol=1e-15)
    np.testing.assert_allclose(layer.U @ layer.V, np.diag([3.0, 0.0]), atol=1e-15)
    np.testing.assert_allclose(layer.S, np.diag([0.0, 1.0]), atol=1e-15)
    assert layer.live_columns.all()


def test_init_full_rank_leaves_tiny_residual():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((7, 5))
    layer = init_from_pretrained(w, 5)
    assert np.abs(layer.S).max() < 1e-9


def test_init_matches_eckart_young_tail():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((8, 6))
    layer = init_from_pretrained(w, 2)
    s = svd(w).singular_values
    err = frobenius_norm(w - layer.U @ layer.V) ** 2
    assert abs(err - np.sum(s[2:] ** 2)) <= 1e-8 * np.sum(s[2:] ** 2)


def test_init_factors_are_balanced():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((9, 6))
    layer = init_from_pretrained(w, 3)
    s = svd(w).singular_values[:3]
    np.testing.assert_allclose(np.linalg.norm(layer.U, axis=0), np.sqrt(s), rtol=1e-10)
    np.testing.assert_allclose(np.linalg.norm(layer.V, axis=1), np.sqrt(s), rtol=1e-10)


def test_init_reconstructs_pretrained():
    rng = np.random.default_rng(3)
    w = rng.standard_normal((10, 12))
    layer = init_from_pretrained(w, 4)
    assert frobenius_norm(reconstruct(layer) - w) <= 1e-9 * frobenius_norm(w)


@pytest.mark.parametrize("rank", [0, 4])
def test_init_rank_out_of_range(rank):
    with pytest.raises(BudgetError):
        init_from_pretrained(np.ones((3, 5)), rank)


def test_forward_hand_case():
    layer = FactorizedLayer([[1.0], [0.0]], [[2.0, 3.0]], np.zeros((2, 2)))
    np.testing.assert_array_equal(forward(layer, [[1.0, 0.0]]), [[2.0, 3.0]])


def test_forward_after_init_equals_dense():
    rng = np.random.default_rng(4)
    w = rng.standard_normal((6, 5))
    x = rng.standard_normal((3, 6))
    np.testing.assert_allclose(forward(init_from_pretrained(w, 2), x), x @ w, atol=1e-10)


def test_forward_matches_reconstruction():
    rng = np.random.default_rng(5)
    for _ in range(10):
        layer = random_layer(rng, 6, 4, 2)
        x = rng.standard_normal((5, 6))
        np.testing.assert_allclose(forward(layer, x), x @ reconstruct(layer), atol=1e-10)
        np.testing.assert_allclose(forward(layer, np.eye(6)), reconstruct(layer), atol=1e-10)


def test_forward_shape_error():
    layer = random_layer(np.random.default_rng(0), 3, 2, 1)
    with pytest.raises(ShapeError):
        forward(layer, np.ones((2, 4)))


def test_backward_zero_upstream():
    rng = np.random.default_rng(6)
    layer = random_layer(rng, 4, 5, 2)
    g = backward(layer, rng.standard_normal((3, 4)), np.zeros((3, 5)))
    assert all(not v.any() for v in g.values())


def test_backward_scalar_chain_rule():
    layer = FactorizedLayer([[1.0]], [[3.0]], [[0.0]])
    g = backward(layer, [[2.0]], [[1.0]])
    assert g["U"].tolist() == [[6.0]]
    assert g["V"].tolist() == [[2.0]]
    assert g["S"].tolist() == [[2.0]]
    assert g["X"].tolist() == [[3.0]]


def test_backward_matches_finite_differences_sum_loss():
    rng = np.random.default_rng(7)
    layer = random_layer(rng, 4, 5, 2)
    x = rng.standard_normal((3, 4))
    g = backward(layer, x, np.ones((3, 5)))

    def loss():
        return forward(layer, x).sum()

    for name in ("U", "V", "S"):
        assert_grad_close(g[name], fd_gradient(loss, getattr(layer, name)))
    assert_grad_close(g["X"], fd_gradient(loss, x))


def test_backward_matches_finite_differences_random_losses():
    rng = np.random.default_rng(8)
    for _ in range(5):
        d1, d2, n = rng.integers(2, 7), rng.integers(2, 7), rng.integers(1, 5)
        r = int(rng.integers(1, min(d1, d2) + 1))
        layer = random_layer(rng, d1, d2, r)
        x = rng.standard_normal((n, d1))
        target = rng.standard_normal((n, d2))

        def loss():
            return 0.5 * np.sum((np.tanh(forward(layer, x)) - target) ** 2)

        y = forward(layer, x)
        dy = (np.tanh(y) - target) * (1 - np.tanh(y) ** 2)
        g = backward(layer, x, dy)
        for name in ("U", "V", "S"):
            assert_grad_close(g[name], fd_gradient(loss, getattr(layer, name)))


def test_backward_shape_error():
    layer = random_layer(np.random.default_rng(0), 3, 2, 1)
    with pytest.raises(ShapeError):
        backward(layer, np.ones((2, 3)), np.ones((3, 2)))


def test_reconstruct_with_pruned_sparse_part():
    rng = np.random.default_rng(9)
    layer = random_layer(rng, 4, 3, 1)
    layer.S[:] = 0.0
    assert np.array_equal(reconstruct(layer), layer.U @ layer.V)


def test_rank_from_budget_examples():
    assert rank_from_budget(768, 768, 0.05) == 19
    assert rank_from_budget(100, 100, 0.001) == 1
    assert rank_from_budget(100, 100, 0.05) == 2


def test_rank_from_budget_grid():
    for d1, d2 in itertools.product(range(1, 13), repeat=2):
        for f in np.linspace(0.01, 0.99, 25):
            r = rank_from_budget(d1, d2, f)
            assert 1 <= r <= min(d1, d2)
            assert r == 1 or r * (d1 + d2) <= f * d1 * d2 * (1 + 1e-9)
            # largest such rank
            if r < min(d1, d2):
                assert (r + 1) * (d1 + d2) > f * d1 * d2


def test_remaining_ratio_examples():
    layer = FactorizedLayer(np.zeros((100, 5)), np.zeros((5, 100)), np.zeros((100, 100)))
    assert remaining_ratio([layer], 10000) == pytest.approx(1.1)
    layer.live_columns[:] = False
    assert remaining_ratio([layer], 10000) == pytest.approx(0.10)
    layer.live_columns[:10] = True
    # stored entries: U (500) + V (500) + ten 100-entry columns
    assert remaining_ratio([layer], 10000) == pytest.approx(0.20)


def test_remaining_ratio_dense_layer():
    layer = DenseLayer(np.ones((10, 20)))
    layer.live_columns[5:] = False
    assert remaining_ratio([layer], 200) == pytest.approx(0.25)


def test_budget_validation():
    CompressionBudget(0.2, 0.05)
    CompressionBudget(0.2, 0.0)
    for total, low in [(0.0, 0.0), (1.2, 0.1), (0.2, 0.2), (0.2, -0.1)]:
        with pytest.raises(BudgetError):
            CompressionBudget(total, low)


def test_sparse_gradient_equals_dense_gradient():
    # the gradient reaching S is exactly the one a dense layer with W = UV + S would see
    rng = np.random.default_rng(10)
    w = rng.standard_normal((7, 5))
    layer = init_from_pretrained(w, 2)
    x, dy = rng.standard_normal((4, 7)), rng.standard_normal((4, 5))
    np.testing.assert_allclose(backward(layer, x, dy)["S"], x.T @ dy, rtol=0, atol=1e-14)
    np.testing.assert_allclose(backward(layer, x, dy)["X"], dy @ w.T, atol=1e-12)
