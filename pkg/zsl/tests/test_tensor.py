"""
DEDN Toolkit Tensor Tests

Primitive values, shape errors and reverse-mode gradients.
"""

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from zsl import tensor as T
from zsl.exceptions import ContractError, DimensionError


def numeric_gradient(fn, x, step=1e-3):
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[index] += step
        minus[index] -= step
        grad[index] = (fn(plus) - fn(minus)) / (2 * step)
    return grad


class MatmulTests(SimpleTestCase):
    """Tests for matrix products."""

    def test_identity(self):
        """Test the identity leaves a matrix unchanged."""
        out = T.matmul(np.eye(2), np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert_array_equal(out.numpy(), [[1, 2], [3, 4]])

    def test_hand_evaluated_product(self):
        """Test a row times a column."""
        out = T.matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
        assert_array_equal(out.numpy(), [[11]])

    def test_zero_matrix(self):
        """Test the zero matrix annihilates."""
        out = T.matmul(np.zeros((2, 3)), np.arange(12.0).reshape(3, 4))
        assert_array_equal(out.numpy(), np.zeros((2, 4)))

    def test_shape_mismatch_names_both_shapes(self):
        """Test the dimension error names both operand shapes."""
        with self.assertRaises(DimensionError) as ctx:
            T.matmul(np.zeros((2, 3)), np.zeros((2, 2)))
        self.assertIn('(2, 3)', str(ctx.exception))
        self.assertIn('(2, 2)', str(ctx.exception))

    def test_batched_operand_shares_matrix(self):
        """Test a 2-D operand is applied to every batch entry."""
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((5, 4, 2))
        out = T.matmul(a, b).numpy()
        for i in range(5):
            assert_allclose(out[i], a @ b[i])

    def test_associativity(self):
        """Test (AB)C equals A(BC) on random triples."""
        rng = np.random.default_rng(1)
        a, b, c = (rng.standard_normal((4, 4)).astype(np.float32) for _ in range(3))
        left = T.matmul(T.matmul(a, b), c).numpy()
        right = T.matmul(a, T.matmul(b, c)).numpy()
        assert_allclose(left, right, rtol=1e-4, atol=1e-4)


class SoftmaxTests(SimpleTestCase):
    """Tests for row softmax."""

    def test_uniform_input(self):
        """Test equal logits give equal weights."""
        assert_allclose(T.softmax_rows(np.zeros((1, 2))).numpy(), [[0.5, 0.5]])

    def test_known_values(self):
        """Test softmax of [1, 3]."""
        assert_allclose(T.softmax_rows(np.array([[1.0, 3.0]])).numpy(),
                        [[0.11920, 0.88080]], atol=1e-4)

    def test_shift_invariance(self):
        """Test adding a row constant changes nothing."""
        x = np.array([[0.3, -1.2, 2.0], [5.0, 5.5, 4.0]])
        shifted = x + np.array([[7.0], [-3.0]])
        assert_allclose(T.softmax_rows(x).numpy(), T.softmax_rows(shifted).numpy(), atol=1e-12)

    def test_rows_sum_to_one_for_large_logits(self):
        """Test max subtraction keeps large logits finite."""
        out = T.softmax_rows(np.array([[1000.0, 999.0, -1000.0]])).numpy()
        self.assertTrue(np.all(np.isfinite(out)))
        assert_allclose(out.sum(axis=-1), [1.0], atol=1e-6)


class DivergenceTests(SimpleTestCase):
    """Tests for KL divergence and squared distance."""

    def test_kl_identical(self):
        """Test KL(p || p) is exactly zero."""
        p = np.array([0.2, 0.0, 0.8])
        self.assertEqual(T.kl_div(p, p).item(), 0.0)

    def test_kl_known_value(self):
        """Test KL of uniform against softmax([1, 3])."""
        value = T.kl_div(np.array([0.5, 0.5]), np.array([0.11920, 0.88080])).item()
        self.assertAlmostEqual(value, 0.4338, delta=1e-3)

    def test_kl_non_negative(self):
        """Test Gibbs' inequality on random distributions."""
        rng = np.random.default_rng(2)
        for _ in range(20):
            p = rng.dirichlet(np.ones(4))
            q = rng.dirichlet(np.ones(4))
            self.assertGreaterEqual(T.kl_div(p, q).item(), 0.0)

    def test_kl_length_mismatch(self):
        """Test distributions of different length are rejected."""
        with self.assertRaises(DimensionError):
            T.kl_div(np.ones(2) / 2, np.ones(3) / 3)

    def test_mse(self):
        """Test the un-averaged squared distance."""
        self.assertEqual(T.mse(np.array([1.0, 1.0]), np.array([1.0, 3.0])).item(), 4.0)
        self.assertEqual(T.mse(np.array([1.0, 3.0]), np.array([1.0, 1.0])).item(), 4.0)
        self.assertEqual(T.mse(np.ones(3), np.ones(3)).item(), 0.0)


class BackwardTests(SimpleTestCase):
    """Tests for reverse-mode differentiation."""

    def test_sum_gradient_is_ones(self):
        """Test d sum(W) / dW is all ones."""
        tape = T.Tape()
        w = tape.leaf(np.arange(6.0).reshape(2, 3))
        grads = tape.backward(T.total(w))
        assert_array_equal(grads[w.node_id], np.ones((2, 3)))

    def test_unused_leaf_gets_zeros(self):
        """Test a leaf the loss ignores gets a zero gradient of its shape."""
        tape = T.Tape()
        w = tape.leaf(np.ones(3))
        unused = tape.leaf(np.ones((2, 2)))
        grads = tape.backward(T.total(w))
        assert_array_equal(grads[unused.node_id], np.zeros((2, 2)))

    def test_non_scalar_loss_rejected(self):
        """Test backward needs a scalar loss."""
        tape = T.Tape()
        w = tape.leaf(np.ones(3))
        with self.assertRaises(ContractError):
            tape.backward(T.scale(w, 2.0))

    def test_loss_from_other_tape_rejected(self):
        """Test backward refuses a loss recorded elsewhere."""
        loss = T.total(T.Tape().leaf(np.ones(2)))
        with self.assertRaises(ContractError):
            T.Tape().backward(loss)

    def test_mixed_tapes_rejected(self):
        """Test operands from two tapes cannot be combined."""
        a = T.Tape().leaf(np.ones(2))
        b = T.Tape().leaf(np.ones(2))
        with self.assertRaises(ContractError):
            T.add(a, b)

    def test_mse_of_linear_map_matches_finite_differences(self):
        """Test mse(Wx, y) gradients in float64."""
        rng = np.random.default_rng(3)
        w0 = rng.standard_normal((2, 3))
        x = rng.standard_normal(3)
        y = rng.standard_normal(2)

        tape = T.Tape(dtype=T.CHECK_DTYPE)
        w = tape.leaf(w0)
        loss = T.mse(T.matmul(x, T.transpose(w)), y)
        analytic = tape.backward(loss)[w.node_id]

        numeric = numeric_gradient(lambda m: float(((m @ x - y) ** 2).sum()), w0)
        assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-6)

    def test_gather_and_concat_gradients(self):
        """Test take, concat and pick route gradients back to their sources."""
        rng = np.random.default_rng(4)
        a0 = rng.standard_normal((2, 2))
        b0 = rng.standard_normal((2, 3))
        index = np.array([4, 0, 2, 1, 3])
        labels = np.array([1, 3])

        def forward(a, b):
            return T.total(T.pick(T.log_softmax_rows(T.take(T.concat([a, b]), index)), labels))

        tape = T.Tape(dtype=T.CHECK_DTYPE)
        a, b = tape.leaf(a0), tape.leaf(b0)
        grads = tape.backward(forward(a, b))

        assert_allclose(grads[a.node_id],
                        numeric_gradient(lambda m: forward(m, b0).item(), a0), atol=1e-6)
        assert_allclose(grads[b.node_id],
                        numeric_gradient(lambda m: forward(a0, m).item(), b0), atol=1e-6)

    def test_tensor_data_is_read_only(self):
        """Test tensors cannot be modified in place."""
        source = np.zeros(3)
        t = T.Tensor(source)
        with self.assertRaises(ValueError):
            t.numpy()[0] = 1.0
        source[0] = 2.0
        self.assertEqual(t.numpy()[0], 2.0)
