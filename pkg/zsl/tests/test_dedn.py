"""
DEDN Toolkit Expert Tests

Partitions, both experts' forward passes, class scores and the
combined prediction rule.
"""

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from zsl import tensor as T
from zsl.dan import DanParams
from zsl.data import SplitSpec
from zsl.dedn import (
    ClusterPartition,
    DednModel,
    Dims,
    Mode,
    candidate_classes,
    cexp_forward,
    class_scores,
    combined_prediction,
    combined_predictions,
    dedn_forward,
    distill_loss,
    fexp_forward,
    initialize_model,
)
from zsl.exceptions import ContractError, DimensionError, PartitionError

from .reference import sample_forward


def constant_params(value):
    m = np.array([[float(value)]])
    return DanParams(m, m, m, m)


class ClusterPartitionTests(SimpleTestCase):
    """Tests for attribute partitions."""

    def test_overlap_names_index(self):
        """Test an index in two clusters is reported."""
        with self.assertRaises(PartitionError) as ctx:
            ClusterPartition.from_lists([[0, 1], [1, 2]], 3)
        self.assertEqual(ctx.exception.index, 1)

    def test_gap_names_index(self):
        """Test an uncovered index is reported."""
        with self.assertRaises(PartitionError) as ctx:
            ClusterPartition.from_lists([[0], [2]], 3)
        self.assertEqual(ctx.exception.index, 1)

    def test_out_of_range_and_empty(self):
        """Test out-of-range indices and empty clusters are rejected."""
        with self.assertRaises(PartitionError) as ctx:
            ClusterPartition.from_lists([[0, 1, 5]], 3)
        self.assertEqual(ctx.exception.index, 5)
        with self.assertRaises(PartitionError):
            ClusterPartition.from_lists([[0, 1], []], 2)

    def test_order_and_inverse(self):
        """Test concatenation order and its inverse permutation."""
        partition = ClusterPartition.from_lists([[2, 0], [1, 3]])
        assert_array_equal(partition.order, [2, 0, 1, 3])
        assert_array_equal(partition.order[partition.inverse], [0, 1, 2, 3])
        self.assertEqual(partition.q, 2)
        self.assertEqual(partition.d, 4)
        self.assertEqual(partition.sizes, [2, 2])


class ExpertForwardTests(SimpleTestCase):
    """Tests for the coarse and fine experts."""

    def setUp(self):
        """Set up a random model with two clusters."""
        self.rng = np.random.default_rng(0)
        self.dims = Dims(c=3, r=4, g=2, d=5)
        self.partition = ClusterPartition.from_lists([[3, 0], [1, 4, 2]])
        self.model = initialize_model(self.dims, self.partition, seed=11)
        self.v = self.rng.standard_normal((5, 2)).astype(np.float32)
        self.f = self.rng.standard_normal((3, 4)).astype(np.float32)

    def test_zero_weights_give_zero_scores(self):
        """Test the coarse expert scores zero with zero weights."""
        zero = DednModel(DanParams.zeros(2, 3, 4), self.model.fexp, self.partition, self.dims)
        o_ec, _ = cexp_forward(zero, self.v, self.f, 0.8)
        assert_array_equal(o_ec.numpy(), np.zeros(5))

    def test_single_cluster_matches_coarse_expert(self):
        """Test Q = 1 with copied weights is bit-identical to the coarse expert."""
        partition = ClusterPartition.from_lists([list(range(5))])
        model = initialize_model(self.dims, partition, seed=3)
        model = DednModel(model.cexp, (model.cexp,), partition, self.dims)
        f = self.rng.standard_normal((100, 3, 4)).astype(np.float32)
        o_ec, _ = cexp_forward(model, self.v, f, 0.8)
        o_ef, _ = fexp_forward(model, self.v, f, 0.8)
        assert_array_equal(o_ec.numpy(), o_ef.numpy())

    def test_scatter_to_canonical_order(self):
        """Test cluster outputs land on their own attribute indices."""
        dims = Dims(c=1, r=1, g=1, d=2)
        partition = ClusterPartition.from_lists([[1], [0]])
        model = DednModel(constant_params(1), (constant_params(3), constant_params(5)),
                          partition, dims)
        v = np.array([[1.0], [2.0]])
        o_ef, _ = fexp_forward(model, v, np.array([[1.0]]), 0.5)
        assert_allclose(o_ef.numpy(), [5.0, 6.0])

    def test_zeroing_one_cluster_changes_only_its_attributes(self):
        """Test each fused score depends only on its own cluster's network."""
        before, _ = fexp_forward(self.model, self.v, self.f, 0.8)
        zeroed = DednModel(self.model.cexp, (DanParams.zeros(2, 3, 4), self.model.fexp[1]),
                           self.partition, self.dims)
        after, _ = fexp_forward(zeroed, self.v, self.f, 0.8)
        changed = np.flatnonzero(before.numpy() != after.numpy())
        self.assertTrue(set(changed.tolist()) <= {0, 3})
        assert_array_equal(after.numpy()[[0, 3]], [0.0, 0.0])

    def test_cluster_order_does_not_matter(self):
        """Test reordering clusters together with their networks keeps o_ef."""
        swapped = DednModel(
            self.model.cexp, self.model.fexp[::-1],
            ClusterPartition(self.partition.clusters[::-1]), self.dims,
        )
        f = self.rng.standard_normal((6, 3, 4)).astype(np.float32)
        before, _ = fexp_forward(self.model, self.v, f, 0.8)
        after, _ = fexp_forward(swapped, self.v, f, 0.8)
        assert_array_equal(after.numpy(), before.numpy())

    def test_experts_match_loop_implementation(self):
        """Test both experts and their class scores against a per-attribute recomputation."""
        model = self.model.with_parameters({
            name: np.asarray(m, dtype=np.float64) for name, m in self.model.parameters()
        })
        v = self.v.astype(np.float64)
        a = self.rng.uniform(0, 1, size=(4, 5))
        batch = self.rng.standard_normal((3, 3, 4))
        out = dedn_forward(model, v, batch, a, 0.7)
        for b, f in enumerate(batch):
            expected = sample_forward(model, v, f, a, 0.7)
            for name in ('o_ec', 'o_ef', 'p_ec', 'p_ef'):
                assert_allclose(getattr(out, name).numpy()[b], expected[name],
                                rtol=1e-10, atol=1e-12, err_msg=name)

    def test_wrong_attribute_count(self):
        """Test v must have one row per partitioned attribute."""
        with self.assertRaises(DimensionError):
            fexp_forward(self.model, self.v[:4], self.f, 0.8)

    def test_model_rejects_mismatched_networks(self):
        """Test a model needs one fine network per cluster."""
        with self.assertRaises(DimensionError):
            DednModel(self.model.cexp, self.model.fexp[:1], self.partition, self.dims)

    def test_parameter_names(self):
        """Test parameters are listed coarse first, then per cluster."""
        names = [name for name, _ in self.model.parameters()]
        self.assertEqual(names[:4], ['cexp.w1', 'cexp.w2', 'cexp.w3', 'cexp.w4'])
        self.assertEqual(names[4], 'fexp.0.w1')
        self.assertEqual(names[-1], 'fexp.1.w4')
        self.assertEqual(len(names), 12)


class ClassScoreTests(SimpleTestCase):
    """Tests for class scores and distillation."""

    def test_hand_evaluated(self):
        """Test o . A^T on a two-class example."""
        p = class_scores(np.array([1.0, 0.0]), np.array([[1.0, 0.0], [0.0, 2.0]]))
        assert_allclose(p.numpy(), [1.0, 0.0])

    def test_identity_attributes(self):
        """Test an identity class-attribute matrix returns the scores."""
        o = np.array([0.5, -2.0, 3.0])
        assert_allclose(class_scores(o, np.eye(3)).numpy(), o)
        assert_array_equal(class_scores(np.zeros(3), np.eye(3)).numpy(), np.zeros(3))

    def test_distill_loss(self):
        """Test distillation values and symmetry."""
        self.assertEqual(distill_loss(np.ones(3), np.ones(3)).item(), 0.0)
        self.assertAlmostEqual(
            distill_loss(np.array([1.0, 1.0]), np.array([1.0, 3.0])).item(), 4.3808, delta=1e-3
        )
        rng = np.random.default_rng(5)
        x, y = rng.standard_normal(4), rng.standard_normal(4)
        self.assertAlmostEqual(distill_loss(x, y).item(), distill_loss(y, x).item(), delta=1e-7)
        self.assertGreater(distill_loss(x, y).item(), 0.0)


class CombinedPredictionTests(SimpleTestCase):
    """Tests for the expert vote."""

    def setUp(self):
        """Set up two seen and two unseen classes."""
        self.splits = SplitSpec([0, 1], [2, 3], [], [])

    def test_coarse_expert_only(self):
        """Test lambda_e = 1 follows the coarse expert."""
        p_ec = np.array([0.1, 0.9, 0.3, 0.2])
        p_ef = np.array([5.0, 0.0, 0.0, 0.0])
        self.assertEqual(combined_prediction(p_ec, p_ef, 1.0, Mode.GZSL, self.splits), 1)

    def test_zsl_restricts_to_unseen(self):
        """Test ZSL mode returns the best unseen class."""
        p = np.array([9.0, 0.0, 1.0, 2.0])
        self.assertEqual(combined_prediction(p, p, 0.5, Mode.GZSL, self.splits), 0)
        self.assertEqual(combined_prediction(p, p, 0.5, Mode.ZSL, self.splits), 3)

    def test_tie_goes_to_lowest_id(self):
        """Test an exact tie picks class 0."""
        splits = SplitSpec([0], [1], [], [])
        prediction = combined_prediction(np.array([0.0, 2.0]), np.array([2.0, 0.0]), 0.5,
                                          Mode.GZSL, splits)
        self.assertEqual(prediction, 0)

    def test_common_shift_keeps_predictions(self):
        """Test adding one constant to both experts changes nothing."""
        rng = np.random.default_rng(6)
        p_ec, p_ef = rng.standard_normal((20, 4)), rng.standard_normal((20, 4))
        candidates = candidate_classes(Mode.GZSL, self.splits, 4)
        assert_array_equal(
            combined_predictions(p_ec, p_ef, 0.7, candidates),
            combined_predictions(p_ec + 3.5, p_ef + 3.5, 0.7, candidates),
        )

    def test_empty_candidates(self):
        """Test ZSL without unseen classes is a contract error."""
        with self.assertRaises(ContractError):
            candidate_classes(Mode.ZSL, SplitSpec([0, 1], [], [], []), 2)

    def test_works_on_tensors(self):
        """Test tensor inputs are accepted."""
        p = T.Tensor(np.array([0.0, 1.0, 3.0, 2.0]))
        self.assertEqual(combined_prediction(p, p, 0.9, Mode.GZSL, self.splits), 2)
