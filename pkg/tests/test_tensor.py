import numpy as np
import pytest

from actionseg.errors import ShapeError
from actionseg import tensor as T
from actionseg.tensor import Tensor


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    m = Tensor([[3.0, 4.0], [5.0, 6.0]])
    assert T.matmul(eye, m).tolist() == [[3.0, 4.0], [5.0, 6.0]]


def test_matmul_zero():
    out = T.matmul(Tensor.zeros((2, 3)), Tensor.ones((3, 2)))
    assert out.tolist() == [[0.0, 0.0], [0.0, 0.0]]


def test_matmul_hand():
    out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        T.matmul(Tensor.zeros((2, 3)), Tensor.zeros((4, 2)))
    assert "(2, 3)" in str(err.value) and "(4, 2)" in str(err.value)


def test_matmul_associativity_random_chains():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m, k, n, p = rng.integers(1, 6, size=4)
        a = Tensor(rng.normal(size=(m, k)))
        b = Tensor(rng.normal(size=(k, n)))
        c = Tensor(rng.normal(size=(n, p)))
        left = T.matmul(T.matmul(a, b), c)
        right = T.matmul(a, T.matmul(b, c))
        assert np.max(np.abs(left.data - right.data)) <= 1e-9


def test_elementwise_add_hand():
    assert T.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).tolist() == [4.0, 6.0]


def test_elementwise_mul_zero():
    x = Tensor([[1.5, -2.0], [0.25, 9.0]])
    assert T.mul(x, Tensor.zeros((2, 2))).tolist() == [[0.0, 0.0], [0.0, 0.0]]


def test_elementwise_bias_broadcast():
    m = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    bias = Tensor([[10.0, 20.0, 30.0]])
    out = T.add(m, bias)
    assert out.tolist() == [[11.0, 22.0, 33.0], [14.0, 25.0, 36.0]]
    flat_bias = Tensor([10.0, 20.0, 30.0])
    assert T.add(m, flat_bias).tolist() == out.tolist()


def test_elementwise_shape_error():
    with pytest.raises(ShapeError):
        T.add(Tensor.zeros((2, 3)), Tensor.zeros((3, 2)))


def test_reduce_examples():
    assert T.reduce(Tensor([1.0, 5.0, 3.0]), 0, "max").item() == 5.0
    assert T.reduce(Tensor([[1.0, 2.0], [3.0, 4.0]]), 0, "sum").tolist() == [4.0, 6.0]
    assert T.reduce(Tensor([2.0, 4.0]), 0, "mean").item() == 3.0


def test_reduce_bad_axis():
    with pytest.raises(IndexError):
        T.reduce(Tensor([1.0, 2.0]), 1, "sum")


def test_reduce_sum_matches_sequential_accumulation_exactly():
    rng = np.random.default_rng(1)
    for _ in range(20):
        rows, cols = rng.integers(1, 9, size=2)
        ints = rng.integers(-(2 ** 45), 2 ** 45, size=(rows, cols)).astype(np.float64)
        t = Tensor(ints)
        total = np.zeros(cols)
        for i in range(rows):
            total = total + T.slice_axis(t, 0, i, i + 1).data[0]
        assert np.array_equal(T.reduce(t, 0, "sum").data, total)


def test_concat_slice_examples():
    assert T.concat(Tensor([1.0]), Tensor([2.0]), 0).tolist() == [1.0, 2.0]
    assert T.slice_axis(Tensor([1.0, 2.0, 3.0]), 0, 1, 3).tolist() == [2.0, 3.0]


def test_transpose_involution():
    m = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3))
    assert np.array_equal(T.transpose(T.transpose(m)).data, m.data)


def test_concat_slice_round_trip_random():
    rng = np.random.default_rng(2)
    for _ in range(30):
        ndim = int(rng.integers(1, 4))
        shape_a = tuple(rng.integers(1, 5, size=ndim))
        axis = int(rng.integers(ndim))
        shape_b = list(shape_a)
        shape_b[axis] = int(rng.integers(1, 5))
        a = Tensor(rng.normal(size=shape_a))
        b = Tensor(rng.normal(size=tuple(shape_b)))
        joined = T.concat(a, b, axis)
        back_a = T.slice_axis(joined, axis, 0, shape_a[axis])
        back_b = T.slice_axis(joined, axis, shape_a[axis], joined.shape[axis])
        assert np.array_equal(back_a.data, a.data)
        assert np.array_equal(back_b.data, b.data)


def test_slice_bounds_error():
    with pytest.raises(ShapeError):
        T.slice_axis(Tensor([1.0, 2.0]), 0, 1, 4)


def test_zero_size_dimension_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.empty((0, 3)))


def test_operations_preserve_finiteness():
    rng = np.random.default_rng(3)
    a = Tensor(rng.normal(size=(4, 4)) * 1e6)
    b = Tensor(rng.normal(size=(4, 4)) * 1e6)
    for out in (T.matmul(a, b), T.add(a, b), T.mul(a, b),
                T.reduce(a, 0, "sum"), T.concat(a, b, 1), T.transpose(a)):
        assert np.all(np.isfinite(out.data))


def test_tensors_are_immutable_buffers():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0
