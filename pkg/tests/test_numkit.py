import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragtuner.errors import NumericError, RangeError, ShapeError
from ragtuner.numkit import (
    RngStream,
    as_matrix,
    as_vector,
    column_l2_norms,
    finite_difference_gradient,
    matmul,
    uniform_matrix,
)


class TestRngStream:
    def test_same_seed_same_samples(self):
        a = RngStream(42).uniform(-1, 1, 100)
        b = RngStream(42).uniform(-1, 1, 100)
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        a = RngStream(1).uniform(-1, 1, 50)
        b = RngStream(2).uniform(-1, 1, 50)
        assert not np.array_equal(a, b)

    def test_derive_is_stable_and_independent_of_draw_order(self):
        root = RngStream(7)
        child_before = root.derive("noise")
        root.uniform(0, 1, 10)  # consuming the parent must not move children
        child_after = root.derive("noise")
        np.testing.assert_array_equal(
            child_before.uniform(0, 1, 5), child_after.uniform(0, 1, 5)
        )

    def test_derive_labels_are_distinct(self):
        root = RngStream(7)
        a = root.derive("a").uniform(0, 1, 20)
        b = root.derive("b").uniform(0, 1, 20)
        assert not np.array_equal(a, b)

    def test_negative_seed_is_masked_not_rejected(self):
        assert RngStream(-1).seed == (1 << 64) - 1

    def test_integers_half_open(self):
        draws = RngStream(3).integers(0, 4, 1000)
        assert draws.min() >= 0 and draws.max() <= 3


class TestValidators:
    def test_as_matrix_accepts_lists(self):
        m = as_matrix([[1, 2], [3, 4]])
        assert m.dtype == np.float64 and m.shape == (2, 2)

    def test_as_matrix_rejects_vector(self):
        with pytest.raises(ShapeError):
            as_matrix([1.0, 2.0])

    def test_as_matrix_rejects_nan(self):
        with pytest.raises(NumericError):
            as_matrix([[np.nan, 1.0]])

    def test_as_vector_rejects_empty(self):
        with pytest.raises(ShapeError):
            as_vector([])

    def test_as_vector_rejects_matrix(self):
        with pytest.raises(ShapeError):
            as_vector([[1.0], [2.0]])

    def test_matmul_conformance_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.ones((2, 3)), np.ones((2, 2)))

    def test_matmul_matches_numpy(self):
        a = RngStream(0).uniform(-1, 1, (3, 4))
        b = RngStream(1).uniform(-1, 1, (4, 2))
        np.testing.assert_allclose(matmul(a, b), a @ b)


class TestColumnNorms:
    def test_hand_example(self):
        m = [[3.0, 0.0], [4.0, 2.0]]
        np.testing.assert_allclose(column_l2_norms(m), [5.0, 2.0])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_matches_numpy_linalg(self, rows, cols, seed):
        m = RngStream(seed).uniform(-5, 5, (rows, cols))
        np.testing.assert_allclose(
            column_l2_norms(m), np.linalg.norm(m, axis=0), rtol=1e-12
        )


class TestUniformMatrix:
    def test_range_and_shape(self):
        m = uniform_matrix(5, 7, -0.25, 0.25, RngStream(0))
        assert m.shape == (5, 7)
        assert m.min() >= -0.25 and m.max() < 0.25

    def test_bad_range(self):
        with pytest.raises(RangeError):
            uniform_matrix(2, 2, 1.0, 1.0, RngStream(0))

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            uniform_matrix(0, 2, 0.0, 1.0, RngStream(0))


class TestFiniteDifference:
    def test_quadratic_gradient(self):
        # f(x) = sum(x^2) has gradient 2x; central differences are exact for
        # quadratics up to roundoff.
        x = np.array([1.0, -2.0, 0.5])
        grad = finite_difference_gradient(lambda v: float(v @ v), x)
        np.testing.assert_allclose(grad, 2 * x, atol=1e-9)

    def test_linear_gradient(self):
        c = np.array([3.0, -1.0, 0.0, 2.0])
        grad = finite_difference_gradient(lambda v: float(c @ v), np.zeros(4))
        np.testing.assert_allclose(grad, c, atol=1e-10)

    def test_rejects_bad_eps(self):
        with pytest.raises(RangeError):
            finite_difference_gradient(lambda v: 0.0, np.ones(2), eps=0.0)

    def test_nonfinite_function_value(self):
        with pytest.raises(NumericError):
            finite_difference_gradient(lambda v: float("inf"), np.ones(2))
