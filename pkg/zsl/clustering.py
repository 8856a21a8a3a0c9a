"""
DEDN Toolkit Attribute Clustering

This module produces the attribute partition fExp is built on: K-Means
over the attribute semantic vectors, manual partition files, the
published per-dataset divisions, and the halving used by the
cluster-count ablation.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .benchmarks import ATTRIBUTE_CLUSTER_SIZES
from .dedn import ClusterPartition, validate_clusters
from .exceptions import ConfigError, ContractError, PartitionError


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KmeansConfig:
    k: int
    seed: int = 0
    max_iters: int = 100
    tol: float = 1e-6
    unit_norm: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f'k must be >= 1, got {self.k}')
        if self.max_iters < 1:
            raise ConfigError(f'max_iters must be >= 1, got {self.max_iters}')
        if self.tol < 0:
            raise ConfigError(f'tol must be >= 0, got {self.tol}')


@dataclass(frozen=True)
class KmeansResult:
    partition: ClusterPartition
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int


def _squared_distances(x, centroids):
    diff = x[:, None, :] - centroids[None, :, :]
    return (diff * diff).sum(axis=2)


def kmeans_plusplus(x, k, rng):
    """
    k-means++ seeding.

    Each next centroid is drawn with probability proportional to its
    squared distance to the nearest chosen one. If every remaining point
    coincides with a chosen centroid the draw falls back to uniform.
    """
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    for _ in range(1, k):
        d2 = _squared_distances(x, x[chosen]).min(axis=1)
        weight = d2.sum()
        if weight > 0:
            chosen.append(int(rng.choice(n, p=d2 / weight)))
        else:
            chosen.append(int(rng.integers(n)))
    return x[chosen].copy()


def _partition_from_labels(labels, k):
    clusters = [np.flatnonzero(labels == j).tolist() for j in range(k)]
    clusters.sort(key=lambda c: c[0])
    return ClusterPartition(tuple(tuple(c) for c in clusters))


def lloyd(v, cfg):
    """
    Lloyd's algorithm from a k-means++ seeding.

    Assignment ties go to the lowest centroid index. A centroid left
    without points takes the point farthest from its own centroid among
    clusters that can spare one.

    The inertia after every assignment is logged at debug level.

    Returns:
        KmeansResult
    """
    x = np.asarray(v, dtype=np.float64)
    d = x.shape[0]
    if cfg.k > d:
        raise ConfigError(f'k = {cfg.k} exceeds the number of attributes D = {d}')
    if not np.all(np.isfinite(x)):
        raise ContractError('Attribute vectors must be finite.')
    if cfg.unit_norm:
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        x = x / np.where(norms > 0, norms, 1.0)

    rng = np.random.default_rng(cfg.seed)
    centroids = kmeans_plusplus(x, cfg.k, rng)
    history = []
    labels = None

    for iteration in range(1, cfg.max_iters + 1):
        labels, centroids, d2 = _assign(x, centroids)
        history.append(float(d2[np.arange(d), labels].sum()))

        updated = np.array([x[labels == j].mean(axis=0) for j in range(cfg.k)])
        shift = float(np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max())
        centroids = updated
        if shift <= cfg.tol:
            break

    inertia = float(_squared_distances(x, centroids)[np.arange(d), labels].sum())
    logger.debug('K-Means k=%d converged after %d iterations, inertia %.6g',
                 cfg.k, iteration, inertia)
    logger.debug('K-Means k=%d inertia by iteration: %s',
                 cfg.k, ' '.join(f'{value:.12g}' for value in history))
    return KmeansResult(
        partition=_partition_from_labels(labels, cfg.k),
        labels=labels,
        centroids=centroids,
        inertia=inertia,
        iterations=iteration,
    )


def _assign(x, centroids):
    """
    Nearest-centroid assignment with empty-cluster repair.

    Each empty centroid is moved onto the point farthest from its own
    centroid among clusters with more than one member, and that point is
    reassigned to it without a new argmin, so repeated points cannot
    empty a repaired cluster again.
    """
    centroids = centroids.copy()
    k = centroids.shape[0]
    d2 = _squared_distances(x, centroids)
    labels = np.argmin(d2, axis=1)
    own = d2[np.arange(labels.size), labels]
    for j in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[j]:
            continue
        donor = int(np.argmax(np.where(counts[labels] > 1, own, -np.inf)))
        labels[donor] = j
        centroids[j] = x[donor]
    return labels, centroids, _squared_distances(x, centroids)


def kmeans_partition(v, cfg):
    """Cluster the D attribute vectors into ``cfg.k`` groups."""
    return lloyd(v, cfg).partition


def load_manual_partition(path, d=None):
    """
    Read a JSON array of arrays of 0-based attribute indices.

    Raises:
        PartitionError naming the offending index on overlap, gap,
        out-of-range index or empty cluster.
    """
    with open(path, encoding='utf-8') as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PartitionError(f'{path}: not valid JSON ({exc})') from None

    if not isinstance(raw, list) or not all(isinstance(c, list) for c in raw):
        raise PartitionError(f'{path}: expected a JSON array of arrays')
    for cluster in raw:
        for index in cluster:
            if isinstance(index, bool) or not isinstance(index, int):
                raise PartitionError(f'{path}: attribute index {index!r} is not an integer')

    return ClusterPartition.from_lists(raw, d)


def save_partition(partition, path):
    Path(path).write_text(json.dumps(partition.to_lists()) + '\n', encoding='utf-8')


def halve_partition(partition):
    """
    Merge clusters 2i and 2i+1 in order, giving ceil(Q / 2) clusters.

    With odd Q the trailing cluster stays on its own.
    """
    if partition.q < 2:
        raise ContractError(f'Cannot halve a partition of {partition.q} cluster(s).')
    clusters = partition.clusters
    merged = [
        clusters[i] + (clusters[i + 1] if i + 1 < len(clusters) else ())
        for i in range(0, len(clusters), 2)
    ]
    return ClusterPartition(tuple(merged))


def contiguous_partition(sizes):
    """Consecutive index blocks of the given sizes."""
    if not sizes or any(s < 1 for s in sizes):
        raise PartitionError(f'Cluster sizes must be positive, got {list(sizes)}')
    bounds = np.cumsum([0, *sizes])
    clusters = [tuple(range(bounds[i], bounds[i + 1])) for i in range(len(sizes))]
    validate_clusters(clusters, int(bounds[-1]))
    return ClusterPartition(tuple(clusters))


def preset_partition(name):
    """Published manual division for ``cub``, ``sun`` or ``awa2``."""
    try:
        d, sizes = ATTRIBUTE_CLUSTER_SIZES[name]
    except KeyError:
        raise ConfigError(
            f'Unknown preset {name!r}; choose from {sorted(ATTRIBUTE_CLUSTER_SIZES)}'
        ) from None
    partition = contiguous_partition(sizes)
    if partition.d != d:
        raise PartitionError(f'Preset {name!r} sizes sum to {partition.d}, expected {d}')
    return partition
