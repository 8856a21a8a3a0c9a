"""
DEDN Toolkit Objectives

This module defines the classification losses (cross-entropy and the
Margin-Aware Loss), the seen/unseen score margin, and the composite
training objective over both experts.

All classification losses are evaluated in shifted log-sum-exp form and
take either one score vector with an integer label, or a B x K batch with
B labels (one loss per sample).
"""

from dataclasses import dataclass

import numpy as np
from django.db import models

from . import tensor as T
from .dan import align_loss
from .dedn import distill_loss
from .exceptions import ConfigError, ContractError


class ClassificationLoss(models.TextChoices):
    """Classification term of each expert's basic loss."""
    MAL = 'mal', 'Margin-Aware Loss'
    CE = 'ce', 'Cross-entropy'


@dataclass(frozen=True)
class LossWeights:
    """beta weighs alignment, gamma distillation; epsilon is the MAL margin."""

    beta: float = 0.001
    gamma: float = 0.1
    epsilon: float = 1.0

    def __post_init__(self):
        for name in ('beta', 'gamma', 'epsilon'):
            if getattr(self, name) < 0:
                raise ConfigError(f'{name} must be >= 0, got {getattr(self, name)}')


@dataclass(frozen=True)
class LossTerms:
    """
    Batch-mean loss terms of one training step.

    ``align_ec`` / ``align_ef`` are unweighted; ``total`` applies beta and
    gamma.
    """

    total: T.Tensor
    mal_ec: T.Tensor
    mal_ef: T.Tensor
    align_ec: T.Tensor
    align_ef: T.Tensor
    distill: T.Tensor

    def named(self):
        return [
            ('mal_ec', self.mal_ec),
            ('mal_ef', self.mal_ef),
            ('align_ec', self.align_ec),
            ('align_ef', self.align_ef),
            ('distill', self.distill),
            ('total', self.total),
        ]


def _check_labels(y, k):
    y = np.asarray(y, dtype=np.intp)
    if y.size and (y.min() < 0 or y.max() >= k):
        bad = y[(y < 0) | (y >= k)][0] if y.ndim else y
        raise ContractError(f'Class id {int(bad)} is out of range [0, {k}).')
    return y


def ce_loss(p, y):
    """-log softmax(p)[y]"""
    k = T.as_array(p).shape[-1]
    y = _check_labels(y, k)
    return T.scale(T.pick(T.log_softmax_rows(p), y), -1.0)


def margin_offsets(splits, k, epsilon):
    """-epsilon on seen classes, +epsilon on unseen classes."""
    offsets = np.full(k, -float(epsilon))
    offsets[list(splits.unseen_classes)] = float(epsilon)
    return offsets


def margin_scores(p, epsilon, splits):
    """Shift seen scores down and unseen scores up by ``epsilon``."""
    k = T.as_array(p).shape[-1]
    return T.add(p, margin_offsets(splits, k, epsilon))


def mal_offsets(y, epsilon, splits, k):
    """
    Per-sample logit shifts that turn cross-entropy into MAL.

    The target gets -2 * epsilon, the other seen classes +epsilon, unseen
    classes nothing.
    """
    y = np.asarray(y, dtype=np.intp)
    seen_shift = np.zeros(k)
    seen_shift[list(splits.seen_classes)] = float(epsilon)
    offsets = np.tile(seen_shift, y.shape + (1,))
    if y.ndim == 0:
        offsets[y] = -2.0 * epsilon
    else:
        offsets[np.arange(y.shape[0]), y] = -2.0 * epsilon
    return offsets


def mal_loss(p, y, epsilon, splits):
    """
    Margin-Aware Loss for seen-class targets.

    Equals cross-entropy over scores shifted by ``mal_offsets``; with
    epsilon = 0 it is exactly ``ce_loss``.
    """
    k = T.as_array(p).shape[-1]
    y = _check_labels(y, k)
    seen = set(splits.seen_classes)
    for label in np.atleast_1d(y):
        if int(label) not in seen:
            raise ContractError(f'MAL target {int(label)} is not a seen class.')
    return ce_loss(T.add(p, mal_offsets(y, epsilon, splits, k)), y)


def classification_loss(kind, p, y, epsilon, splits):
    if ClassificationLoss(kind) == ClassificationLoss.CE:
        return ce_loss(p, y)
    return mal_loss(p, y, epsilon, splits)


def total_loss(forward, labels, splits, weights, kind=ClassificationLoss.MAL,
               channel_attention=True):
    """
    Composite objective over a batch.

    mean[ L_cls(P_ec) + beta * L_align^ec ] + mean[ L_cls(P_ef) + beta * L_align^ef ]
    + gamma * mean[ L_distill(P_ec, P_ef) ]

    L_align^ef is the mean of the Q per-subnetwork alignment losses. With
    ``channel_attention`` off both alignment terms are dropped.

    Args:
        forward: DednForward of the batch
        labels: one seen class id per sample
        splits: SplitSpec
        weights: LossWeights
        kind: ClassificationLoss
        channel_attention: whether the channel branch takes part

    Returns:
        LossTerms
    """
    if forward.cexp is None or not forward.fexp:
        raise ContractError('total_loss needs the branch outputs of both experts.')
    for out in (forward.cexp, *forward.fexp):
        if out.o_region is None or out.o_channel is None:
            raise ContractError('total_loss needs region and channel branch outputs.')

    mal_ec = T.mean(classification_loss(kind, forward.p_ec, labels, weights.epsilon, splits))
    mal_ef = T.mean(classification_loss(kind, forward.p_ef, labels, weights.epsilon, splits))
    distill = T.mean(distill_loss(forward.p_ec, forward.p_ef))

    if channel_attention:
        align_ec = T.mean(align_loss(forward.cexp.o_region, forward.cexp.o_channel))
        per_cluster = [T.mean(align_loss(out.o_region, out.o_channel)) for out in forward.fexp]
        align_ef = per_cluster[0]
        for term in per_cluster[1:]:
            align_ef = T.add(align_ef, term)
        align_ef = T.scale(align_ef, 1.0 / len(per_cluster))
    else:
        zero = T.Tensor(np.zeros((), dtype=T.as_array(mal_ec).dtype))
        align_ec = align_ef = zero

    loss_ec = T.add(mal_ec, T.scale(align_ec, weights.beta))
    loss_ef = T.add(mal_ef, T.scale(align_ef, weights.beta))
    total = T.add(T.add(loss_ec, loss_ef), T.scale(distill, weights.gamma))
    return LossTerms(total, mal_ec, mal_ef, align_ec, align_ef, distill)
