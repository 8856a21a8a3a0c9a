"""
DEDN Toolkit Dual Expert Distillation Network

This module assembles two experts out of attention networks:

- cExp scores all D attributes with a single network.
- fExp splits the attributes into Q disjoint clusters and scores each
  cluster with its own network; cluster outputs are concatenated and put
  back in canonical attribute order.

Both experts project attribute scores onto class scores through the
class-attribute matrix, are tied together by the distillation loss, and
vote at inference time.
"""

from dataclasses import dataclass

import numpy as np
from django.db import models

from . import tensor as T
from .dan import DanParams, combine_outputs, consistency_loss, dan_forward
from .exceptions import ConfigError, ContractError, DimensionError, PartitionError


class Mode(models.TextChoices):
    """Inference candidate sets."""
    ZSL = 'zsl', 'ZSL (unseen classes only)'
    GZSL = 'gzsl', 'GZSL (all classes)'


@dataclass(frozen=True)
class ClusterPartition:
    """
    Q disjoint, non-empty clusters of attribute indices covering 0..D-1.

    Clusters keep the order they were given in; indices inside a cluster
    keep theirs too.
    """

    clusters: tuple

    def __post_init__(self):
        clusters = tuple(tuple(int(i) for i in cluster) for cluster in self.clusters)
        object.__setattr__(self, 'clusters', clusters)
        validate_clusters(clusters)

    @classmethod
    def from_lists(cls, lists, d=None):
        """Build a partition, checking coverage against ``d`` when given."""
        validate_clusters(lists, d)
        return cls(tuple(tuple(c) for c in lists))

    @property
    def q(self):
        return len(self.clusters)

    @property
    def d(self):
        return sum(len(c) for c in self.clusters)

    @property
    def sizes(self):
        return [len(c) for c in self.clusters]

    @property
    def order(self):
        """Attribute index at each position of the concatenated output."""
        return np.array([i for cluster in self.clusters for i in cluster], dtype=np.intp)

    @property
    def inverse(self):
        """Position of each attribute in the concatenated output."""
        return np.argsort(self.order, kind='stable')

    def to_lists(self):
        return [list(c) for c in self.clusters]


def validate_clusters(clusters, d=None):
    """
    Raise PartitionError unless ``clusters`` is a disjoint cover of 0..d-1.

    ``d`` defaults to the total number of listed indices.
    """
    clusters = [list(c) for c in clusters]
    if not clusters:
        raise PartitionError('Partition has no clusters.')
    if d is None:
        d = sum(len(c) for c in clusters)

    seen = set()
    for q, cluster in enumerate(clusters):
        if not cluster:
            raise PartitionError(f'Cluster {q} is empty.')
        for index in cluster:
            if not 0 <= index < d:
                raise PartitionError(
                    f'Attribute index {index} in cluster {q} is out of range [0, {d}).',
                    index=index,
                )
            if index in seen:
                raise PartitionError(
                    f'Attribute index {index} appears in more than one cluster.',
                    index=index,
                )
            seen.add(index)

    for index in range(d):
        if index not in seen:
            raise PartitionError(
                f'Attribute index {index} is not covered by any cluster.',
                index=index,
            )


@dataclass(frozen=True)
class Dims:
    c: int
    r: int
    g: int
    d: int

    def as_dict(self):
        return {'c': self.c, 'r': self.r, 'g': self.g, 'd': self.d}


@dataclass(frozen=True)
class DednModel:
    """
    One full-scope network (cExp) plus one network per cluster (fExp).

    Experts share no parameters.
    """

    cexp: DanParams
    fexp: tuple
    partition: ClusterPartition
    dims: Dims

    def __post_init__(self):
        object.__setattr__(self, 'fexp', tuple(self.fexp))
        if len(self.fexp) != self.partition.q:
            raise DimensionError(
                f'{len(self.fexp)} fExp subnetworks for {self.partition.q} clusters'
            )
        if self.partition.d != self.dims.d:
            raise DimensionError(
                f'Partition covers {self.partition.d} attributes, model has {self.dims.d}'
            )
        expected = (self.dims.g, self.dims.c, self.dims.r)
        for params in (self.cexp, *self.fexp):
            if params.dims != expected:
                raise DimensionError(
                    f'Network dims {params.dims} differ from model dims (G, C, R) = {expected}'
                )

    def parameters(self):
        """(name, matrix) pairs in the fixed checkpoint/blob order."""
        named = [(f'cexp.{name}', m) for name, m in self.cexp.matrices()]
        for q, params in enumerate(self.fexp):
            named.extend((f'fexp.{q}.{name}', m) for name, m in params.matrices())
        return named

    def bind(self, tape):
        """Return a copy whose matrices are leaves of ``tape``."""
        return DednModel(
            self.cexp.bind(tape),
            tuple(p.bind(tape) for p in self.fexp),
            self.partition,
            self.dims,
        )

    def with_parameters(self, values):
        """Return a copy with matrices replaced from a name -> array mapping."""
        def rebuild(prefix, params):
            return DanParams(*(
                values.get(f'{prefix}.{name}', m) for name, m in params.matrices()
            ))

        return DednModel(
            rebuild('cexp', self.cexp),
            tuple(rebuild(f'fexp.{q}', p) for q, p in enumerate(self.fexp)),
            self.partition,
            self.dims,
        )


def initialize_model(dims, partition, seed):
    """Draw every matrix from ``seed``: cExp first, then fExp in cluster order."""
    rng = np.random.default_rng(seed)
    cexp = DanParams.initialize(rng, dims.g, dims.c, dims.r)
    fexp = tuple(
        DanParams.initialize(rng, dims.g, dims.c, dims.r)
        for _ in range(partition.q)
    )
    return DednModel(cexp, fexp, partition, dims)


@dataclass(frozen=True)
class DednForward:
    """Everything one forward pass of both experts produces."""

    o_ec: T.Tensor
    o_ef: T.Tensor
    p_ec: T.Tensor
    p_ef: T.Tensor
    cexp: object
    fexp: tuple


def cexp_forward(model, v, f, lambda_rc, keep_attention=False):
    """
    Fused attribute scores of the coarse expert.

    Returns:
        (o_ec, dan_out) where dan_out keeps the branch outputs for the
        alignment loss.
    """
    out = dan_forward(v, f, model.cexp, keep_attention=keep_attention)
    return combine_outputs(out.o_region, out.o_channel, lambda_rc), out


def fexp_forward(model, v, f, lambda_rc, keep_attention=False):
    """
    Fused attribute scores of the fine expert, in canonical order.

    Each subnetwork sees only the rows of ``v`` for its cluster. The
    concatenated cluster outputs are scattered back so that o_ef[..., i]
    is the score of attribute i.
    """
    v = T.as_array(v)
    if v.shape[0] != model.partition.d:
        raise DimensionError(
            f'{v.shape[0]} attribute vectors for a partition of {model.partition.d}'
        )
    per_cluster = []
    fused = []
    for cluster, params in zip(model.partition.clusters, model.fexp):
        out = dan_forward(v[list(cluster)], f, params, keep_attention=keep_attention)
        per_cluster.append(out)
        fused.append(combine_outputs(out.o_region, out.o_channel, lambda_rc))
    o_ef = T.take(T.concat(fused), model.partition.inverse)
    return o_ef, per_cluster


def class_scores(o, a):
    """Project attribute scores onto classes: p = o . A^T."""
    return T.matmul(o, T.transpose(a))


def distill_loss(p_ec, p_ef):
    """Mutual distillation between the two experts' class scores."""
    return consistency_loss(p_ec, p_ef)


def dedn_forward(model, v, f, a, lambda_rc, keep_attention=False):
    """Run both experts and project them onto class scores."""
    o_ec, cexp_out = cexp_forward(model, v, f, lambda_rc, keep_attention)
    o_ef, fexp_out = fexp_forward(model, v, f, lambda_rc, keep_attention)
    return DednForward(
        o_ec=o_ec,
        o_ef=o_ef,
        p_ec=class_scores(o_ec, a),
        p_ef=class_scores(o_ef, a),
        cexp=cexp_out,
        fexp=tuple(fexp_out),
    )


def candidate_classes(mode, splits, k):
    """Class ids eligible as predictions under ``mode``."""
    if Mode(mode) == Mode.ZSL:
        candidates = np.asarray(splits.unseen_classes, dtype=np.intp)
    else:
        candidates = np.arange(k, dtype=np.intp)
    if candidates.size == 0:
        raise ContractError(f'No candidate classes in {mode} mode.')
    return candidates


def combined_scores(p_ec, p_ef, lambda_e):
    """lambda_e * P_ec + (1 - lambda_e) * P_ef"""
    if not 0.0 <= lambda_e <= 1.0:
        raise ConfigError(f'lambda_e must lie in [0, 1], got {lambda_e}')
    p_ec = T.as_array(p_ec)
    p_ef = T.as_array(p_ef)
    if p_ec.shape != p_ef.shape:
        raise DimensionError(f'Expert score shapes {p_ec.shape} and {p_ef.shape} differ')
    return lambda_e * p_ec + (1.0 - lambda_e) * p_ef


def combined_predictions(p_ec, p_ef, lambda_e, candidates):
    """
    Argmax of the combined scores over ``candidates``, per row.

    Ties go to the lowest class id (``candidates`` is ascending).
    """
    scores = combined_scores(p_ec, p_ef, lambda_e)
    return candidates[np.argmax(scores[..., candidates], axis=-1)]


def combined_prediction(p_ec, p_ef, lambda_e, mode, splits):
    """Predicted class id for one sample."""
    k = T.as_array(p_ec).shape[-1]
    return int(combined_predictions(p_ec, p_ef, lambda_e, candidate_classes(mode, splits, k)))
