import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.errors import DegenerateMaskError, NonFiniteError, ShapeError
from src.tensor import (Tensor, add, embedding, grad_check, layer_norm, log_softmax, matmul, mean, mul, relu,
                        reshape, softmax_rows, total, transpose)
from tests.oracles import oracle_matmul


def weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return total(mul(out, weights))


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_tensor_rejects_empty_dimensions():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 0)))


def test_tensor_copies_and_tracks_grad():
    source = np.ones((2, 2))
    t = Tensor(source, requires_grad=True)
    source[0, 0] = 5.0
    assert t.data[0, 0] == 1.0
    assert t.data.dtype == np.float64
    assert_array_equal(t.grad, np.zeros((2, 2)))
    assert Tensor(source).grad is None


def test_item_requires_single_element():
    assert Tensor(3.5).item() == 3.5
    with pytest.raises(ShapeError):
        Tensor([1.0, 2.0]).item()


def test_add_unbroadcasts_gradient(rng):
    a = leaf(rng, 2, 3)
    b = leaf(rng, 3)
    total(add(a, b)).backward()
    assert_array_equal(a.grad, np.ones((2, 3)))
    assert_array_equal(b.grad, np.full(3, 2.0))


def test_shared_node_gradient_accumulates():
    x = Tensor([3.0], requires_grad=True)
    y = add(mul(x, x), x)
    total(y).backward()
    assert_allclose(x.grad, [7.0])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(42)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    assert_allclose(matmul(Tensor(a), Tensor(b)).data, oracle_matmul(a, b), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_matmul_random_shapes_match_triple_loop(seed):
    rng = np.random.default_rng(seed)
    n, k, m = rng.integers(1, 9, size=3)
    a, b = rng.standard_normal((n, k)), rng.standard_normal((k, m))
    assert_allclose(matmul(Tensor(a), Tensor(b)).data, oracle_matmul(a, b), atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError, match="matmul"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_add_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError) as info:
        add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    assert "(2, 3)" in str(info.value) and "(4,)" in str(info.value)


def test_softmax_masked_entries_are_exact_zeros(rng):
    x = Tensor(rng.standard_normal((3, 4)))
    mask = np.tril(np.ones((3, 4), dtype=bool))
    y = softmax_rows(x, mask).data
    assert np.all(y[~mask] == 0.0)
    assert_allclose(y.sum(axis=-1), np.ones(3), atol=1e-12)


def test_softmax_fully_masked_row_raises():
    mask = np.array([[True, False], [False, False]])
    with pytest.raises(DegenerateMaskError):
        softmax_rows(Tensor(np.zeros((2, 2))), mask)


def test_softmax_is_shift_invariant(rng):
    x = rng.standard_normal((2, 5))
    assert_allclose(softmax_rows(Tensor(x)).data, softmax_rows(Tensor(x + 100.0)).data, atol=1e-12)


def test_log_softmax_matches_log_of_softmax(rng):
    x = Tensor(rng.standard_normal((3, 6)))
    assert_allclose(log_softmax(x).data, np.log(softmax_rows(x).data), atol=1e-12)


def test_layer_norm_output_statistics(rng):
    x = Tensor(rng.standard_normal((4, 6)) * 3 + 2)
    y = layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6))).data
    assert_allclose(y.mean(axis=-1), np.zeros(4), atol=1e-12)
    assert_allclose(y.var(axis=-1), np.ones(4), atol=1e-5)


def test_layer_norm_rejects_width_one():
    with pytest.raises(ShapeError):
        layer_norm(Tensor(np.ones((2, 1))), Tensor(np.ones(1)), Tensor(np.zeros(1)))


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    total(relu(x)).backward()
    assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_embedding_scatters_repeated_ids():
    table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    out = embedding(table, np.array([[1, 1, 3]]))
    assert_array_equal(out.data[0, 0], [3.0, 4.0, 5.0])
    total(out).backward()
    assert_array_equal(table.grad[:, 0], [0.0, 2.0, 0.0, 1.0])


def test_embedding_rejects_out_of_range_ids():
    with pytest.raises(ShapeError):
        embedding(Tensor(np.zeros((4, 2))), np.array([4]))


@pytest.mark.parametrize("name", ["add", "mul", "matmul", "transpose", "reshape", "mean", "relu",
                                  "softmax", "masked_softmax", "log_softmax", "layer_norm", "embedding"])
def test_op_gradients_match_finite_differences(name):
    rng = np.random.default_rng(7)
    a = leaf(rng, 3, 4)
    b = leaf(rng, 3, 4)
    w = rng.standard_normal((3, 4))
    gain, bias = leaf(rng, 4), leaf(rng, 4)
    table = leaf(rng, 5, 4)
    mask = np.tril(np.ones((3, 4), dtype=bool))
    ids = np.array([[0, 2, 2], [4, 1, 0]])
    # keep relu inputs away from the kink
    a.data[np.abs(a.data) < 0.1] += 0.3
    cases = {
        "add": (lambda: weighted(add(a, b), w), [a, b]),
        "mul": (lambda: weighted(mul(a, b), w), [a, b]),
        "matmul": (lambda: total(mul(matmul(a, transpose(b, (1, 0))), rng_matrix(3, 3))), [a, b]),
        "transpose": (lambda: weighted(transpose(transpose(a, (1, 0)), (1, 0)), w), [a]),
        "reshape": (lambda: weighted(reshape(reshape(a, (2, 6)), (3, 4)), w), [a]),
        "mean": (lambda: mean(mul(a, a)), [a]),
        "relu": (lambda: weighted(relu(a), w), [a]),
        "softmax": (lambda: weighted(softmax_rows(a), w), [a]),
        "masked_softmax": (lambda: weighted(softmax_rows(a, mask), w), [a]),
        "log_softmax": (lambda: weighted(log_softmax(a), w), [a]),
        "layer_norm": (lambda: weighted(layer_norm(a, gain, bias), w), [a, gain, bias]),
        "embedding": (lambda: total(mul(embedding(table, ids), rng_matrix(2, 3, 4))), [table]),
    }
    f, params = cases[name]
    assert grad_check(f, params) < 1e-4


def rng_matrix(*shape):
    return np.random.default_rng(99).standard_normal(shape)


def test_grad_check_restores_parameters(rng):
    a = leaf(rng, 2, 2)
    before = a.data.copy()
    grad_check(lambda: total(mul(a, a)), [a])
    assert_array_equal(a.data, before)


def test_grad_check_rejects_non_finite_value():
    a = Tensor([np.inf], requires_grad=True)
    with pytest.raises(NonFiniteError):
        grad_check(lambda: total(a), [a])


def test_grad_check_requires_scalar(rng):
    a = leaf(rng, 2)
    with pytest.raises(ShapeError):
        grad_check(lambda: mul(a, 2.0), [a])
