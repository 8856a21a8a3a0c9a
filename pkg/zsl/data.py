"""
DEDN Toolkit Dataset Bundles

This module defines the dataset bundle (features, labels, class-attribute
matrix, attribute semantic vectors and the seen/unseen split), its
on-disk layout, validation, and a synthetic generator for desk-scale
experiments.

Bundle directory layout:

    meta.json          n, c, h, w, k, d, g, seen_classes, unseen_classes,
                       train_indices, test_indices
    features.f32       N x C x H x W little-endian float32, row-major
    labels.u32         N little-endian uint32
    attributes.f32     K x D little-endian float32
    attr_vectors.f32   D x G little-endian float32
    clusters.json      optional attribute partition
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import load_manual_partition, save_partition
from .exceptions import (
    ConfigError,
    LabelRangeError,
    MetaError,
    MissingFileError,
    SizeMismatchError,
    SplitViolationError,
)


logger = logging.getLogger(__name__)

META_FILE = 'meta.json'
FEATURES_FILE = 'features.f32'
LABELS_FILE = 'labels.u32'
ATTRIBUTES_FILE = 'attributes.f32'
ATTR_VECTORS_FILE = 'attr_vectors.f32'
CLUSTERS_FILE = 'clusters.json'

FLOAT = np.dtype('<f4')
LABEL = np.dtype('<u4')


@dataclass(frozen=True)
class SplitSpec:
    """Seen/unseen classes and train/test sample indices, all sorted."""

    seen_classes: tuple
    unseen_classes: tuple
    train_indices: tuple
    test_indices: tuple

    def __post_init__(self):
        for name in ('seen_classes', 'unseen_classes', 'train_indices', 'test_indices'):
            object.__setattr__(self, name, tuple(sorted(int(i) for i in getattr(self, name))))

    @property
    def n_seen(self):
        return len(self.seen_classes)

    def as_dict(self):
        return {
            'seen_classes': list(self.seen_classes),
            'unseen_classes': list(self.unseen_classes),
            'train_indices': list(self.train_indices),
            'test_indices': list(self.test_indices),
        }


@dataclass(frozen=True)
class DatasetBundle:
    """
    Everything one experiment reads.

    features is N x C x H x W, labels N class ids, attributes the K x D
    class-attribute matrix, attr_vectors the D x G attribute semantic
    vectors.
    """

    features: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray
    attr_vectors: np.ndarray
    splits: SplitSpec
    partition: object = None

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def c(self):
        return self.features.shape[1]

    @property
    def h(self):
        return self.features.shape[2]

    @property
    def w(self):
        return self.features.shape[3]

    @property
    def r(self):
        return self.h * self.w

    @property
    def k(self):
        return self.attributes.shape[0]

    @property
    def d(self):
        return self.attributes.shape[1]

    @property
    def g(self):
        return self.attr_vectors.shape[1]

    def flat_features(self):
        """N x C x R view, regions in row-major H x W order."""
        return self.features.reshape(self.n, self.c, self.r)

    def with_partition(self, partition):
        return DatasetBundle(
            self.features, self.labels, self.attributes, self.attr_vectors,
            self.splits, partition,
        )

    def meta(self):
        meta = {
            'n': self.n, 'c': self.c, 'h': self.h, 'w': self.w,
            'k': self.k, 'd': self.d, 'g': self.g,
        }
        meta.update(self.splits.as_dict())
        return meta


def validate_bundle(bundle):
    """
    Check every bundle invariant.

    Raises:
        LabelRangeError: a label outside [0, K)
        SplitViolationError: inconsistent classes or sample indices
        MetaError: array shapes that disagree with each other
    """
    if bundle.features.ndim != 4:
        raise MetaError(f'features must be N x C x H x W, got shape {bundle.features.shape}')
    if bundle.labels.shape != (bundle.n,):
        raise MetaError(f'{bundle.labels.shape[0]} labels for {bundle.n} samples')
    if bundle.attributes.ndim != 2 or bundle.attr_vectors.ndim != 2:
        raise MetaError('attributes and attr_vectors must be matrices')
    if bundle.attr_vectors.shape[0] != bundle.d:
        raise MetaError(
            f'attr_vectors has {bundle.attr_vectors.shape[0]} rows for D = {bundle.d}'
        )

    k = bundle.k
    out_of_range = (bundle.labels < 0) | (bundle.labels >= k)
    if out_of_range.any():
        index = int(np.flatnonzero(out_of_range)[0])
        raise LabelRangeError(
            f'Sample {index} has label {int(bundle.labels[index])}, outside [0, {k}).'
        )

    splits = bundle.splits
    seen, unseen = set(splits.seen_classes), set(splits.unseen_classes)
    if seen & unseen:
        raise SplitViolationError(f'Classes {sorted(seen & unseen)} are both seen and unseen.')
    if seen | unseen != set(range(k)):
        missing = sorted(set(range(k)) - (seen | unseen))
        extra = sorted((seen | unseen) - set(range(k)))
        raise SplitViolationError(
            f'Seen and unseen classes must cover 0..{k - 1}; '
            f'missing {missing}, out of range {extra}.'
        )

    for name in ('train_indices', 'test_indices'):
        indices = getattr(splits, name)
        if indices and (indices[0] < 0 or indices[-1] >= bundle.n):
            raise SplitViolationError(f'{name} refer to samples outside 0..{bundle.n - 1}.')
        if len(set(indices)) != len(indices):
            raise SplitViolationError(f'{name} contain duplicates.')

    for index in splits.train_indices:
        label = int(bundle.labels[index])
        if label not in seen:
            raise SplitViolationError(
                f'Train sample {index} has unseen label {label}.'
            )

    if bundle.partition is not None and bundle.partition.d != bundle.d:
        raise MetaError(
            f'Partition covers {bundle.partition.d} attributes, bundle has D = {bundle.d}'
        )
    return bundle


# =============================================================================
# FILE I/O
# =============================================================================

def _read_meta(directory):
    from .serializers import BundleMetaSerializer

    path = directory / META_FILE
    if not path.is_file():
        raise MissingFileError(f'{path} is missing.')
    try:
        raw = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as exc:
        raise MetaError(f'{path}: not valid JSON ({exc})') from None

    serializer = BundleMetaSerializer(data=raw)
    if not serializer.is_valid():
        raise MetaError(f'{path}: {json.dumps(serializer.errors, sort_keys=True)}')
    return serializer.validated_data


def _read_array(directory, filename, dtype, shape):
    path = directory / filename
    if not path.is_file():
        raise MissingFileError(f'{path} is missing.')
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(raw) != expected:
        raise SizeMismatchError(filename, expected, len(raw))
    return np.frombuffer(raw, dtype=dtype).reshape(shape)


def load_bundle(directory, standardize=False):
    """
    Read and validate a bundle directory.

    Args:
        directory: bundle directory
        standardize: z-score features per channel over all samples and
            regions

    Returns:
        DatasetBundle with float32 arrays and int64 labels
    """
    directory = Path(directory)
    meta = _read_meta(directory)
    n, c, h, w = meta['n'], meta['c'], meta['h'], meta['w']
    k, d, g = meta['k'], meta['d'], meta['g']

    features = _read_array(directory, FEATURES_FILE, FLOAT, (n, c, h, w)).astype(np.float32)
    labels = _read_array(directory, LABELS_FILE, LABEL, (n,)).astype(np.int64)
    attributes = _read_array(directory, ATTRIBUTES_FILE, FLOAT, (k, d)).astype(np.float32)
    attr_vectors = _read_array(directory, ATTR_VECTORS_FILE, FLOAT, (d, g)).astype(np.float32)

    partition = None
    if (directory / CLUSTERS_FILE).is_file():
        partition = load_manual_partition(directory / CLUSTERS_FILE, d)

    if standardize:
        features = standardize_features(features)

    bundle = DatasetBundle(
        features=features,
        labels=labels,
        attributes=attributes,
        attr_vectors=attr_vectors,
        splits=SplitSpec(
            meta['seen_classes'], meta['unseen_classes'],
            meta['train_indices'], meta['test_indices'],
        ),
        partition=partition,
    )
    validate_bundle(bundle)
    logger.info('Loaded bundle %s: N=%d C=%d R=%d K=%d D=%d G=%d', directory,
                n, c, h * w, k, d, g)
    return bundle


def save_bundle(bundle, directory):
    """
    Write ``bundle`` in the layout load_bundle reads.

    Raises:
        SplitViolationError: the bundle has no unseen classes
    """
    validate_bundle(bundle)
    if not bundle.splits.unseen_classes:
        raise SplitViolationError('A bundle needs at least one unseen class.')

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / META_FILE).write_text(
        json.dumps(bundle.meta(), sort_keys=True, indent=2) + '\n', encoding='utf-8'
    )
    (directory / FEATURES_FILE).write_bytes(np.ascontiguousarray(bundle.features, FLOAT).tobytes())
    (directory / LABELS_FILE).write_bytes(np.ascontiguousarray(bundle.labels, LABEL).tobytes())
    (directory / ATTRIBUTES_FILE).write_bytes(np.ascontiguousarray(bundle.attributes, FLOAT).tobytes())
    (directory / ATTR_VECTORS_FILE).write_bytes(np.ascontiguousarray(bundle.attr_vectors, FLOAT).tobytes())
    if bundle.partition is not None:
        save_partition(bundle.partition, directory / CLUSTERS_FILE)
    logger.info('Saved bundle to %s', directory)


# =============================================================================
# FEATURE PREPROCESSING
# =============================================================================

def standardize_features(features):
    """Per-channel z-score over samples and spatial positions."""
    features = np.asarray(features, dtype=np.float64)
    mean = features.mean(axis=(0, 2, 3), keepdims=True)
    std = features.std(axis=(0, 2, 3), keepdims=True)
    return ((features - mean) / np.where(std > 0, std, 1.0)).astype(np.float32)


def normalize_features(features):
    """Scale every sample to unit L2 norm over all its entries."""
    features = np.asarray(features)
    axes = tuple(range(1, features.ndim))
    norms = np.sqrt((features.astype(np.float64) ** 2).sum(axis=axes, keepdims=True))
    return (features / np.where(norms > 0, norms, 1.0)).astype(features.dtype)


# =============================================================================
# SYNTHETIC BUNDLES
# =============================================================================

# Failed draws before a separation bound is lowered by one
MAX_CODE_DRAWS = 1000


@dataclass(frozen=True)
class SynthConfig:
    n_per_class: int = 20
    k_seen: int = 10
    k_unseen: int = 5
    c: int = 8
    h: int = 3
    w: int = 3
    d: int = 12
    g: int = 6
    noise_sigma: float = 0.1
    seed: int = 0
    train_fraction: float = 0.8
    class_separation: int = 4
    unseen_separation: int = 6

    def __post_init__(self):
        for name in ('n_per_class', 'k_seen', 'k_unseen', 'c', 'h', 'w', 'd', 'g'):
            if getattr(self, name) < 1:
                raise ConfigError(f'{name} must be >= 1, got {getattr(self, name)}')
        if self.noise_sigma < 0:
            raise ConfigError(f'noise_sigma must be >= 0, got {self.noise_sigma}')
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f'seed must be a 64-bit unsigned integer, got {self.seed}')
        if not 0 < self.train_fraction <= 1:
            raise ConfigError(f'train_fraction must lie in (0, 1], got {self.train_fraction}')
        for name in ('class_separation', 'unseen_separation'):
            if getattr(self, name) < 0:
                raise ConfigError(f'{name} must be >= 0, got {getattr(self, name)}')


def _draw_codes(rng, taken, count, d, separation):
    """Draw ``count`` rows of weight max(1, d // 2), each >= separation from all earlier rows."""
    template = np.arange(d) < max(1, d // 2)
    codes = list(taken)
    misses = 0
    while len(codes) < len(taken) + count:
        row = rng.permutation(template)
        if all(np.count_nonzero(row != other) >= separation for other in codes):
            codes.append(row)
            misses = 0
            continue
        misses += 1
        if misses == MAX_CODE_DRAWS:
            separation -= 1
            misses = 0
            logger.debug('Attribute codes: separation lowered to %d', separation)
    return codes[len(taken):]


def class_codes(rng, cfg):
    """
    Binary class-attribute rows, seen classes first.

    Every class has the same number of attributes, half of D, so no
    class's attribute set contains another's. Unseen rows are drawn first
    and kept ``unseen_separation`` attributes apart; seen rows then keep
    ``class_separation`` from every row. A bound no draw meets within
    MAX_CODE_DRAWS tries is lowered by one, so small D still yields K rows.
    """
    separation = min(cfg.class_separation, cfg.d)
    unseen = _draw_codes(rng, [], cfg.k_unseen, cfg.d,
                         max(separation, min(cfg.unseen_separation, cfg.d)))
    seen = _draw_codes(rng, unseen, cfg.k_seen, cfg.d, separation)
    return np.array(seen + unseen, dtype=np.float64)


def region_patterns(rng, attr_vectors, cfg):
    """
    Hidden D x (C*R) map from attributes to channel-region patterns.

    Attribute d lights only its home region d mod R, with a channel
    signature that is a random projection of its semantic vector, so the
    attribute vectors carry what is needed to find it.
    """
    r = cfg.h * cfg.w
    projection = rng.standard_normal((cfg.g, cfg.c)) / np.sqrt(cfg.g)
    hidden = np.zeros((cfg.d, cfg.c, r))
    rows = np.arange(cfg.d)
    hidden[rows, :, rows % r] = attr_vectors @ projection
    return hidden.reshape(cfg.d, cfg.c * r)


def gen_synthetic(cfg):
    """
    Attribute-linear synthetic bundle.

    Draw order from ``cfg.seed``: binary class codes A (see
    ``class_codes``), attribute vectors V ~ N(0, 1) centred per column,
    the hidden map of ``region_patterns``, the per-sample noise, then the
    per-class train/test shuffles. The last ``k_unseen`` classes are
    unseen; all their samples go to the test split.
    """
    rng = np.random.default_rng(cfg.seed)
    k = cfg.k_seen + cfg.k_unseen

    attributes = class_codes(rng, cfg)
    attr_vectors = rng.standard_normal((cfg.d, cfg.g))
    attr_vectors -= attr_vectors.mean(axis=0)
    hidden = region_patterns(rng, attr_vectors, cfg)

    labels = np.repeat(np.arange(k), cfg.n_per_class)
    patterns = attributes[labels] @ hidden
    features = patterns + cfg.noise_sigma * rng.standard_normal(patterns.shape)

    seen = list(range(cfg.k_seen))
    unseen = list(range(cfg.k_seen, k))
    n_train = int(round(cfg.train_fraction * cfg.n_per_class))
    train, test = [], []
    for label in seen:
        members = rng.permutation(np.flatnonzero(labels == label))
        train.extend(members[:n_train].tolist())
        test.extend(members[n_train:].tolist())
    for label in unseen:
        test.extend(np.flatnonzero(labels == label).tolist())

    bundle = DatasetBundle(
        features=features.reshape(labels.size, cfg.c, cfg.h, cfg.w).astype(np.float32),
        labels=labels.astype(np.int64),
        attributes=attributes.astype(np.float32),
        attr_vectors=attr_vectors.astype(np.float32),
        splits=SplitSpec(seen, unseen, train, test),
    )
    return validate_bundle(bundle)
