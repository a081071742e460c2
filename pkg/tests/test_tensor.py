import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffattn.tensor import ShapeError, add, dot, hadamard, l2_norm_sq, matmul, scale, softmax, sub, tanh_elem

finite = st.floats(-1e3, 1e3, allow_nan=False)


def naive_matmul(a, b):
    n, m = len(a), len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(len(b)):
                acc += a[i][k] * b[k][j]
            out[i][j] = acc
    return np.array(out)


def test_matmul_identity(rng):
    m = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(matmul(np.eye(3), m), m)


def test_matmul_hand_value():
    assert matmul([[1.0, 2.0]], [[3.0], [4.0]])[0, 0] == 11.0


@pytest.mark.parametrize("shape", [(4, 5, 3), (1, 1, 1), (64, 64, 64), (7, 2, 9)])
def test_matmul_matches_loop_oracle(rng, shape):
    n, k, m = shape
    a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
    ref = naive_matmul(a.tolist(), b.tolist())
    np.testing.assert_allclose(matmul(a, b), ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_softmax_uniform_and_stable():
    np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=0, atol=1e-15)
    out = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_direct_formula():
    e = np.exp([1.0, 2.0, 3.0])
    np.testing.assert_allclose(softmax([1.0, 2.0, 3.0]), e / e.sum(), rtol=0, atol=1e-12)


@given(arrays(np.float64, st.integers(1, 40), elements=finite))
def test_softmax_sums_to_one(v):
    out = softmax(v)
    assert abs(out.sum() - 1.0) < 1e-9
    assert np.all(out >= 0)


def test_elementwise_hand_values():
    assert dot([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert l2_norm_sq([3.0, 4.0]) == 25.0
    np.testing.assert_array_equal(hadamard([1.0, 2.0], [3.0, 4.0]), [3.0, 8.0])
    np.testing.assert_array_equal(add([1.0, 2.0], [3.0, 4.0]), [4.0, 6.0])
    np.testing.assert_array_equal(sub([1.0, 2.0], [3.0, 4.0]), [-2.0, -2.0])
    np.testing.assert_array_equal(scale([1.0, -2.0], 3.0), [3.0, -6.0])
    np.testing.assert_array_equal(tanh_elem([0.0]), [0.0])


@given(arrays(np.float64, st.integers(1, 30), elements=finite))
def test_norm_is_self_dot(a):
    assert l2_norm_sq(a) == dot(a, a)


def test_length_mismatch_raises():
    with pytest.raises(ShapeError):
        dot([1.0, 2.0], [1.0])
