"""
DEDN Toolkit Trainer Tests

The RMSProp update, the training loop and checkpoint files.
"""

import json
import struct
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from zsl.dedn import initialize_model
from zsl.exceptions import (
    CheckpointDimensionError,
    CheckpointFormatError,
    CheckpointSizeError,
    CheckpointVersionError,
    ConfigError,
    ContractError,
    DimensionError,
    NonFiniteLossError,
)
from zsl.objectives import ClassificationLoss, LossWeights
from zsl.trainer import (
    LOG_FIELDS,
    RmspropState,
    TrainConfig,
    load_checkpoint,
    rmsprop_step,
    save_checkpoint,
    train,
)

from .factories import small_bundle, small_config, small_model


class TrainConfigTests(SimpleTestCase):
    """Tests for training configuration."""

    def test_defaults(self):
        """Test the default hyperparameters."""
        cfg = TrainConfig()
        self.assertEqual(cfg.batch_size, 50)
        self.assertEqual(cfg.weights, LossWeights(beta=0.001, gamma=0.1, epsilon=1.0))
        self.assertEqual(cfg.classification_loss, ClassificationLoss.MAL)

    def test_invalid_values(self):
        """Test out-of-range values are configuration errors."""
        for bad in ({'lr': 0.0}, {'batch_size': 0}, {'momentum': 1.0}, {'lambda_e': 1.5},
                    {'classification_loss': 'focal'}, {'seed': -1}):
            with self.assertRaises(ConfigError):
                TrainConfig(**bad)

    def test_region_only_fusion(self):
        """Test disabling channel attention fuses with the region branch only."""
        self.assertEqual(TrainConfig(lambda_rc=0.6).fusion_lambda_rc, 0.6)
        self.assertEqual(TrainConfig(lambda_rc=0.6, channel_attention=False).fusion_lambda_rc, 1.0)

    def test_hyperparameters_round_trip(self):
        """Test the checkpoint form rebuilds the same config."""
        cfg = TrainConfig(lr=3e-3, classification_loss='ce', weights=LossWeights(gamma=0.0))
        values = cfg.hyperparameters()
        self.assertEqual(values['classification_loss'], 'ce')
        self.assertEqual(TrainConfig.from_hyperparameters(values), cfg)
        with self.assertRaises(ConfigError):
            TrainConfig.from_hyperparameters({**values, 'schedule': 'cosine'})


class RmspropTests(SimpleTestCase):
    """Tests for rmsprop_step."""

    def setUp(self):
        """Set up the reference optimizer settings."""
        self.cfg = TrainConfig(lr=0.1, momentum=0.9, smoothing_alpha=0.99, weight_decay=0.0)

    def test_first_step(self):
        """Test one step from a fresh state with a unit gradient."""
        params = {'w': np.zeros(1)}
        new, state = rmsprop_step(params, {'w': np.ones(1)}, RmspropState.zeros(params), self.cfg)
        assert_allclose(state.square_avg['w'], [0.01])
        assert_allclose(state.momentum['w'], [10.0], atol=1e-5)
        assert_allclose(new['w'], [-1.0], atol=1e-6)
        assert_array_equal(params['w'], [0.0])

    def test_zero_gradient_is_a_fixed_point(self):
        """Test g = 0 without decay leaves parameters unchanged."""
        params = {'w': np.arange(6.0).reshape(2, 3)}
        state = RmspropState.zeros(params)
        new, state = rmsprop_step(params, {'w': np.zeros((2, 3))}, state, self.cfg)
        assert_array_equal(new['w'], params['w'])

    def test_identical_parameters_stay_identical(self):
        """Test equal tensors with equal gradients evolve together."""
        rng = np.random.default_rng(0)
        start = rng.standard_normal((3, 2))
        params = {'a': start.copy(), 'b': start.copy()}
        state = RmspropState.zeros(params)
        for _ in range(10):
            g = rng.standard_normal((3, 2))
            params, state = rmsprop_step(params, {'a': g, 'b': g.copy()}, state, self.cfg)
            assert_array_equal(params['a'], params['b'])
            self.assertTrue(np.all(state.square_avg['a'] >= 0))

    def test_shape_mismatch(self):
        """Test gradients must match parameter shapes."""
        params = {'w': np.zeros((2, 2))}
        with self.assertRaises(DimensionError):
            rmsprop_step(params, {'w': np.zeros(3)}, RmspropState.zeros(params), self.cfg)

    def test_missing_gradient(self):
        """Test every parameter needs a gradient."""
        params = {'w': np.zeros(2)}
        with self.assertRaises(ContractError):
            rmsprop_step(params, {}, RmspropState.zeros(params), self.cfg)


class TrainTests(SimpleTestCase):
    """Tests for the training loop."""

    def setUp(self):
        """Set up a small bundle with a two-cluster partition."""
        self.partition = small_model(small_bundle()).partition
        self.bundle = small_bundle().with_partition(self.partition)

    def test_zero_epochs_returns_initial_model(self):
        """Test epochs = 0 returns the seeded initialization."""
        model, history = train(self.bundle, small_config(epochs=0, seed=7))
        expected = initialize_model(model.dims, self.partition, 7)
        self.assertEqual(history, [])
        for (name, a), (_, b) in zip(model.parameters(), expected.parameters()):
            assert_array_equal(a, b, err_msg=name)

    def test_log_records(self):
        """Test one record per epoch whose terms add up to the total."""
        _, history = train(self.bundle, small_config(epochs=3))
        self.assertEqual([r['epoch'] for r in history], [1, 2, 3])
        for record in history:
            self.assertEqual(set(record), {'epoch', *LOG_FIELDS})
            parts = sum(record[name] for name in LOG_FIELDS if name != 'mean_total')
            self.assertAlmostEqual(parts, record['mean_total'],
                                   delta=1e-5 * max(1.0, abs(record['mean_total'])))

    def test_training_changes_parameters(self):
        """Test every weight matrix moves during training."""
        initial = initialize_model(small_model(self.bundle).dims, self.partition, 0)
        model, _ = train(self.bundle, small_config(epochs=1))
        for (name, a), (_, b) in zip(model.parameters(), initial.parameters()):
            self.assertFalse(np.array_equal(a, b), msg=name)
            self.assertEqual(np.asarray(a).dtype, np.float32)

    def test_partition_argument_overrides_bundle(self):
        """Test an explicit partition is used over the bundle's own."""
        model, _ = train(small_bundle(), small_config(epochs=0), self.partition)
        self.assertEqual(model.partition, self.partition)

    def test_missing_partition(self):
        """Test training needs an attribute partition."""
        with self.assertRaises(ContractError):
            train(small_bundle(), small_config())

    def test_non_finite_loss(self):
        """Test infinite features abort with the offending term."""
        features = np.full_like(self.bundle.features, np.inf)
        with self.assertRaises(NonFiniteLossError) as ctx:
            with np.errstate(all='ignore'):
                train(replace(self.bundle, features=features), small_config())
        self.assertEqual(ctx.exception.term, 'mal_ec')


class CheckpointTests(SimpleTestCase):
    """Tests for checkpoint files."""

    def setUp(self):
        """Set up a trained model and a scratch directory."""
        bundle = small_bundle().with_partition(small_model(small_bundle()).partition)
        self.bundle = bundle
        self.cfg = small_config(epochs=1)
        self.model, _ = train(bundle, self.cfg)
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / 'model.dedn'
        save_checkpoint(self.model, self.cfg, self.path)

    def rewrite(self, raw):
        self.path.write_bytes(raw)

    def test_round_trip(self):
        """Test a checkpoint loads back the same model and config."""
        model, cfg = load_checkpoint(self.path)
        self.assertEqual(cfg, self.cfg)
        self.assertEqual(model.partition, self.model.partition)
        self.assertEqual(model.dims, self.model.dims)
        for (name, a), (_, b) in zip(model.parameters(), self.model.parameters()):
            assert_array_equal(a, b, err_msg=name)

    def test_layout(self):
        """Test magic, version and a sorted JSON header."""
        raw = self.path.read_bytes()
        self.assertEqual(raw[:4], b'DEDN')
        version, header_len = struct.unpack('<II', raw[4:12])
        self.assertEqual(version, 1)
        header = json.loads(raw[12:12 + header_len])
        self.assertEqual(header['partition'], self.model.partition.to_lists())
        self.assertEqual(header['blobs'][0], {'name': 'cexp.w1', 'shape': [3, 3]})
        n_values = sum(np.size(m) for _, m in self.model.parameters())
        self.assertEqual(len(raw), 12 + header_len + 4 * n_values)

    def test_same_inputs_same_bytes(self):
        """Test training and saving twice gives identical files."""
        model, _ = train(self.bundle, self.cfg)
        again = Path(self.tmp.name) / 'again.dedn'
        save_checkpoint(model, self.cfg, again)
        self.assertEqual(again.read_bytes(), self.path.read_bytes())

    def test_bad_magic(self):
        """Test a file without the magic bytes is rejected."""
        self.rewrite(b'XXXX' + self.path.read_bytes()[4:])
        with self.assertRaises(CheckpointFormatError):
            load_checkpoint(self.path)

    def test_bad_version(self):
        """Test an unknown format version is rejected."""
        raw = self.path.read_bytes()
        self.rewrite(raw[:4] + struct.pack('<I', 99) + raw[8:])
        with self.assertRaises(CheckpointVersionError):
            load_checkpoint(self.path)

    def test_truncated_payload(self):
        """Test a short payload is a size error."""
        self.rewrite(self.path.read_bytes()[:-4])
        with self.assertRaises(CheckpointSizeError):
            load_checkpoint(self.path)

    def test_header_dims_disagree_with_blobs(self):
        """Test header dims that do not match the blob list are rejected."""
        raw = self.path.read_bytes()
        _, header_len = struct.unpack('<II', raw[4:12])
        header = json.loads(raw[12:12 + header_len])
        header['dims']['g'] += 1
        encoded = json.dumps(header, sort_keys=True).encode('utf-8')
        self.rewrite(raw[:8] + struct.pack('<I', len(encoded)) + encoded
                     + raw[12 + header_len:])
        with self.assertRaises(CheckpointDimensionError):
            load_checkpoint(self.path)
