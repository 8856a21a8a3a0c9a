"""
DEDN Toolkit Trainer

This module defines the training configuration, the RMSProp-with-momentum
update, the deterministic mini-batch loop over seen-class samples, and
the checkpoint file format.

Checkpoint layout (all integers little-endian):

    b'DEDN' | uint32 version | uint32 header length | JSON header | blobs

The header holds dims, partition, hyperparameters and the blob list
(name and shape of every weight matrix, in payload order). Blobs are
little-endian float32, row-major.
"""

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from django.conf import settings

from . import tensor as T
from .dan import MATRIX_NAMES, DanParams
from .dedn import ClusterPartition, DednModel, Dims, dedn_forward, initialize_model
from .data import normalize_features
from .exceptions import (
    CheckpointDimensionError,
    CheckpointFormatError,
    CheckpointSizeError,
    CheckpointVersionError,
    ConfigError,
    ContractError,
    DednError,
    DimensionError,
    EmptySplitError,
    NonFiniteLossError,
)
from .objectives import ClassificationLoss, LossWeights, total_loss


logger = logging.getLogger(__name__)

LOG_FIELDS = ('mean_total', 'mean_mal_ec', 'mean_mal_ef', 'mean_align', 'mean_distill')


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 50
    momentum: float = 0.9
    smoothing_alpha: float = 0.99
    weight_decay: float = 1e-4
    epochs: int = 200
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    lambda_rc: float = 0.8
    lambda_e: float = 0.9
    eps: float = 1e-8
    classification_loss: str = ClassificationLoss.MAL
    channel_attention: bool = True
    normalize_features: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f'lr must be > 0, got {self.lr}')
        if self.batch_size < 1:
            raise ConfigError(f'batch_size must be >= 1, got {self.batch_size}')
        if self.epochs < 0:
            raise ConfigError(f'epochs must be >= 0, got {self.epochs}')
        for name in ('momentum', 'smoothing_alpha'):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f'{name} must lie in [0, 1), got {getattr(self, name)}')
        for name in ('lambda_rc', 'lambda_e'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f'{name} must lie in [0, 1], got {getattr(self, name)}')
        if self.weight_decay < 0:
            raise ConfigError(f'weight_decay must be >= 0, got {self.weight_decay}')
        if not self.eps > 0:
            raise ConfigError(f'eps must be > 0, got {self.eps}')
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f'seed must be a 64-bit unsigned integer, got {self.seed}')
        if self.classification_loss not in ClassificationLoss.values:
            raise ConfigError(
                f'classification_loss must be one of {ClassificationLoss.values}, '
                f'got {self.classification_loss!r}'
            )
        object.__setattr__(self, 'classification_loss', ClassificationLoss(self.classification_loss))

    @property
    def fusion_lambda_rc(self):
        """Branch weight used in fused scores; region only without channel attention."""
        return self.lambda_rc if self.channel_attention else 1.0

    def hyperparameters(self):
        values = asdict(self)
        values['classification_loss'] = str(self.classification_loss.value)
        return values

    @classmethod
    def from_hyperparameters(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f'Unknown hyperparameters: {sorted(unknown)}')
        values = dict(values)
        if 'weights' in values:
            values['weights'] = LossWeights(**values['weights'])
        return cls(**values)


# =============================================================================
# OPTIMIZER
# =============================================================================

@dataclass(frozen=True)
class RmspropState:
    """Square-average and momentum buffers, keyed by parameter name."""

    square_avg: dict
    momentum: dict

    @classmethod
    def zeros(cls, params):
        return cls(
            {name: np.zeros_like(value) for name, value in params.items()},
            {name: np.zeros_like(value) for name, value in params.items()},
        )


def rmsprop_step(params, grads, state, cfg):
    """
    One RMSProp-with-momentum update.

    g' = g + weight_decay * theta
    v  = alpha * v + (1 - alpha) * g'^2
    m  = momentum * m + g' / (sqrt(v) + eps)
    theta = theta - lr * m

    Args:
        params: name -> ndarray
        grads: name -> ndarray, same shapes
        state: RmspropState
        cfg: TrainConfig

    Returns:
        (new params, new state); the inputs are left untouched.
    """
    alpha = cfg.smoothing_alpha
    new_params, square_avg, momentum = {}, {}, {}
    for name, theta in params.items():
        if name not in grads:
            raise ContractError(f'No gradient for parameter {name!r}')
        grad = np.asarray(grads[name])
        v = state.square_avg[name]
        m = state.momentum[name]
        if not grad.shape == theta.shape == v.shape == m.shape:
            raise DimensionError(
                f'rmsprop_step: {name} has shape {theta.shape}, gradient '
                f'{grad.shape}, state {v.shape} / {m.shape}'
            )

        grad = grad + cfg.weight_decay * theta
        v = alpha * v + (1.0 - alpha) * grad * grad
        m = cfg.momentum * m + grad / (np.sqrt(v) + cfg.eps)
        new_params[name] = (theta - cfg.lr * m).astype(theta.dtype)
        square_avg[name] = v.astype(theta.dtype)
        momentum[name] = m.astype(theta.dtype)
    return new_params, RmspropState(square_avg, momentum)


# =============================================================================
# TRAINING LOOP
# =============================================================================

def _check_finite(terms, epoch, step):
    for name, value in terms.named():
        if not np.all(np.isfinite(T.as_array(value))):
            raise NonFiniteLossError(name, epoch, step)


def train(bundle, cfg, partition=None):
    """
    Train both experts on the seen-class training samples.

    Batches are drawn from the training indices shuffled by a generator
    keyed on (seed, epoch); the last incomplete batch is kept.

    Args:
        bundle: DatasetBundle
        cfg: TrainConfig
        partition: ClusterPartition; defaults to ``bundle.partition``

    Returns:
        (DednModel, list of per-epoch log records)
    """
    if partition is None:
        partition = bundle.partition
    if partition is None:
        raise ContractError('Training needs an attribute partition.')
    if partition.d != bundle.d:
        raise DimensionError(f'Partition covers {partition.d} attributes, bundle has {bundle.d}')

    dims = Dims(c=bundle.c, r=bundle.r, g=bundle.g, d=bundle.d)
    model = initialize_model(dims, partition, cfg.seed)
    params = dict(model.parameters())
    state = RmspropState.zeros(params)

    features = bundle.flat_features()
    if cfg.normalize_features:
        features = normalize_features(features)
    train_idx = np.asarray(bundle.splits.train_indices, dtype=np.intp)
    if cfg.epochs and train_idx.size == 0:
        raise EmptySplitError('The training split has no samples.')

    weights = cfg.weights
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(train_idx)
        sums = dict.fromkeys(LOG_FIELDS, 0.0)

        for step, start in enumerate(range(0, order.size, cfg.batch_size), start=1):
            batch = order[start:start + cfg.batch_size]
            tape = T.Tape()
            bound = model.bind(tape)
            forward = dedn_forward(
                bound, bundle.attr_vectors, features[batch], bundle.attributes,
                cfg.fusion_lambda_rc,
            )
            terms = total_loss(
                forward, bundle.labels[batch], bundle.splits, weights,
                kind=cfg.classification_loss, channel_attention=cfg.channel_attention,
            )
            _check_finite(terms, epoch, step)

            leaf_grads = tape.backward(terms.total)
            grads = {name: leaf_grads[leaf.node_id] for name, leaf in bound.parameters()}
            params, state = rmsprop_step(params, grads, state, cfg)
            model = model.with_parameters(params)

            share = batch.size / order.size
            sums['mean_total'] += share * terms.total.item()
            sums['mean_mal_ec'] += share * terms.mal_ec.item()
            sums['mean_mal_ef'] += share * terms.mal_ef.item()
            sums['mean_align'] += share * weights.beta * (
                terms.align_ec.item() + terms.align_ef.item()
            )
            sums['mean_distill'] += share * weights.gamma * terms.distill.item()

        record = {'epoch': epoch, **sums}
        history.append(record)
        logger.info(
            'Epoch %d/%d: total %.6f mal_ec %.6f mal_ef %.6f align %.6f distill %.6f',
            epoch, cfg.epochs, *(record[name] for name in LOG_FIELDS),
        )

    return model, history


# =============================================================================
# CHECKPOINTS
# =============================================================================

def _checkpoint_settings():
    conf = settings.DEDN['CHECKPOINT']
    return bytes(conf['magic']), int(conf['version'])


def save_checkpoint(model, cfg, path):
    """Write ``model`` and ``cfg``; identical inputs give identical bytes."""
    magic, version = _checkpoint_settings()
    named = model.parameters()
    header = {
        'dims': model.dims.as_dict(),
        'partition': model.partition.to_lists(),
        'hyperparameters': cfg.hyperparameters(),
        'blobs': [{'name': name, 'shape': list(np.shape(m))} for name, m in named],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    payload = b''.join(
        np.ascontiguousarray(T.as_array(m), dtype='<f4').tobytes() for _, m in named
    )
    with open(path, 'wb') as fh:
        fh.write(magic)
        fh.write(struct.pack('<II', version, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    logger.info('Saved checkpoint %s (%d matrices)', path, len(named))


def _expected_blobs(dims, q):
    shapes = {'w1': [dims.g, dims.c], 'w2': [dims.g, dims.c],
              'w3': [dims.g, dims.r], 'w4': [dims.g, dims.r]}
    prefixes = ['cexp'] + [f'fexp.{i}' for i in range(q)]
    return [
        {'name': f'{prefix}.{name}', 'shape': shapes[name]}
        for prefix in prefixes for name in MATRIX_NAMES
    ]


def load_checkpoint(path):
    """
    Read a checkpoint written by save_checkpoint.

    Returns:
        (DednModel, TrainConfig)

    Raises:
        CheckpointFormatError: bad magic or unreadable header
        CheckpointVersionError: unsupported version
        CheckpointDimensionError: blob shapes disagree with the header dims
        CheckpointSizeError: payload length disagrees with the blob shapes
    """
    magic, version = _checkpoint_settings()
    with open(path, 'rb') as fh:
        raw = fh.read()

    prefix = len(magic) + 8
    if len(raw) < prefix or raw[:len(magic)] != magic:
        raise CheckpointFormatError(f'{path} is not a DEDN checkpoint.')
    found_version, header_len = struct.unpack('<II', raw[len(magic):prefix])
    if found_version != version:
        raise CheckpointVersionError(
            f'{path}: format version {found_version}, expected {version}.'
        )
    if len(raw) < prefix + header_len:
        raise CheckpointFormatError(f'{path}: header is truncated.')
    try:
        header = json.loads(raw[prefix:prefix + header_len].decode('utf-8'))
        dims = Dims(**header['dims'])
        partition = ClusterPartition.from_lists(header['partition'], dims.d)
        cfg = TrainConfig.from_hyperparameters(header['hyperparameters'])
        blobs = header['blobs']
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, DednError) as exc:
        raise CheckpointFormatError(f'{path}: invalid header ({exc})') from None

    expected = _expected_blobs(dims, partition.q)
    if blobs != expected:
        raise CheckpointDimensionError(
            f'{path}: blob list does not match dims {dims.as_dict()} with '
            f'{partition.q} cluster(s).'
        )

    payload = raw[prefix + header_len:]
    sizes = [int(np.prod(blob['shape'])) for blob in blobs]
    if len(payload) != 4 * sum(sizes):
        raise CheckpointSizeError(
            f'{path}: payload is {len(payload)} bytes, header declares {4 * sum(sizes)}.'
        )

    values = {}
    offset = 0
    for blob, size in zip(blobs, sizes):
        chunk = np.frombuffer(payload, dtype='<f4', count=size, offset=offset)
        values[blob['name']] = chunk.reshape(blob['shape']).astype(np.float32)
        offset += 4 * size

    def network(prefix):
        return DanParams(*(values[f'{prefix}.{name}'] for name in MATRIX_NAMES))

    model = DednModel(
        network('cexp'),
        tuple(network(f'fexp.{i}') for i in range(partition.q)),
        partition,
        dims,
    )
    logger.info('Loaded checkpoint %s: dims %s, Q=%d', path, dims.as_dict(), partition.q)
    return model, cfg
