"""
DEDN Toolkit Evaluation

This module scores a trained model on a bundle's test split: ZSL top-1
accuracy over unseen classes (T), GZSL per-class accuracies over unseen
and seen classes (U, S) and their harmonic mean (H). It also exports
the region attention maps of one sample.
"""

import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from . import tensor as T
from .benchmarks import PUBLISHED_RESULTS
from .data import normalize_features
from .dedn import Mode, candidate_classes, combined_predictions, dedn_forward
from .exceptions import ContractError, DimensionError, EmptySplitError
from .objectives import margin_offsets


logger = logging.getLogger(__name__)

# test samples scored per forward pass
CHUNK_SIZE = 256


@dataclass(frozen=True)
class GzslMetrics:
    """
    Accuracies in percent.

    In ZSL mode only ``t`` is set. ``micro_u`` and ``micro_s`` are
    per-sample accuracies; ``per_class`` maps class id to its split,
    sample count, correct count and accuracy.
    """

    mode: str
    t: float
    u: float = None
    s: float = None
    h: float = None
    micro_u: float = None
    micro_s: float = None
    per_class: dict = None


def harmonic_mean(u, s):
    """2us / (u + s), or 0 when both are 0."""
    if u < 0 or s < 0:
        raise ContractError(f'Accuracies must be non-negative, got u={u}, s={s}')
    if u + s == 0:
        return 0.0
    return 2.0 * u * s / (u + s)


def _check_dims(model, bundle):
    expected = (bundle.c, bundle.r, bundle.g, bundle.d)
    found = (model.dims.c, model.dims.r, model.dims.g, model.dims.d)
    if found != expected:
        raise DimensionError(
            f'Model dims (C, R, G, D) = {found} do not match bundle {expected}'
        )
    if model.dims.d != bundle.attributes.shape[1]:
        raise DimensionError('Model and class-attribute matrix disagree on D')


def expert_scores(model, bundle, indices, lambda_rc, normalize=False):
    """Class scores of both experts for the given samples, no tape."""
    features = bundle.flat_features()[indices]
    if normalize:
        features = normalize_features(features)
    p_ec, p_ef = [], []
    for start in range(0, len(indices), CHUNK_SIZE):
        out = dedn_forward(
            model, bundle.attr_vectors, features[start:start + CHUNK_SIZE],
            bundle.attributes, lambda_rc,
        )
        p_ec.append(T.as_array(out.p_ec))
        p_ef.append(T.as_array(out.p_ef))
    return np.concatenate(p_ec), np.concatenate(p_ef)


def _per_class(labels, predictions, classes):
    """class id -> (samples, correct) for classes present in ``labels``."""
    counts = {}
    for label in classes:
        members = labels == label
        total = int(members.sum())
        if total:
            counts[int(label)] = (total, int((predictions[members] == label).sum()))
    return counts


def _mean_accuracy(counts):
    return float(np.mean([100.0 * correct / total for total, correct in counts.values()]))


def _micro_accuracy(counts):
    total = sum(t for t, _ in counts.values())
    return 100.0 * sum(c for _, c in counts.values()) / total


def evaluate(model, bundle, lambda_e, lambda_rc, mode=Mode.GZSL,
             calibration_epsilon=0.0, normalize_features=False):
    """
    Score the test split.

    U and S are means of per-class accuracies. T restricts both the
    samples and the candidate classes to unseen classes. With a non-zero
    ``calibration_epsilon`` seen scores are lowered and unseen scores
    raised by that amount before the argmax.

    Returns:
        GzslMetrics

    Raises:
        DimensionError: model and bundle dims differ
        EmptySplitError: no test samples, or none of a needed split
    """
    _check_dims(model, bundle)
    mode = Mode(mode)
    splits = bundle.splits
    test_idx = np.asarray(splits.test_indices, dtype=np.intp)
    if test_idx.size == 0:
        raise EmptySplitError('The test split has no samples.')

    p_ec, p_ef = expert_scores(model, bundle, test_idx, lambda_rc, normalize_features)
    if calibration_epsilon:
        offsets = margin_offsets(splits, bundle.k, calibration_epsilon)
        p_ec, p_ef = p_ec + offsets, p_ef + offsets
    labels = bundle.labels[test_idx]

    unseen_mask = np.isin(labels, splits.unseen_classes)
    if not unseen_mask.any():
        raise EmptySplitError('The test split has no unseen-class samples.')
    zsl_candidates = candidate_classes(Mode.ZSL, splits, bundle.k)
    zsl_predictions = combined_predictions(
        p_ec[unseen_mask], p_ef[unseen_mask], lambda_e, zsl_candidates
    )
    zsl_counts = _per_class(labels[unseen_mask], zsl_predictions, splits.unseen_classes)
    t = _mean_accuracy(zsl_counts)

    if mode == Mode.ZSL:
        logger.info('ZSL: T %.2f over %d unseen samples', t, int(unseen_mask.sum()))
        return GzslMetrics(
            mode=mode.value,
            t=t,
            per_class={
                label: {'split': 'unseen', 'samples': total, 'correct': correct,
                        'accuracy': 100.0 * correct / total}
                for label, (total, correct) in zsl_counts.items()
            },
        )

    predictions = combined_predictions(
        p_ec, p_ef, lambda_e, candidate_classes(Mode.GZSL, splits, bundle.k)
    )
    unseen_counts = _per_class(labels, predictions, splits.unseen_classes)
    seen_counts = _per_class(labels, predictions, splits.seen_classes)
    if not seen_counts:
        raise EmptySplitError('The test split has no seen-class samples.')

    u = _mean_accuracy(unseen_counts)
    s = _mean_accuracy(seen_counts)
    h = harmonic_mean(u, s)
    per_class = {}
    for split, counts in (('seen', seen_counts), ('unseen', unseen_counts)):
        for label, (total, correct) in counts.items():
            per_class[label] = {'split': split, 'samples': total, 'correct': correct,
                                'accuracy': 100.0 * correct / total}

    logger.info('GZSL: T %.2f U %.2f S %.2f H %.2f', t, u, s, h)
    return GzslMetrics(
        mode=mode.value,
        t=t,
        u=u,
        s=s,
        h=h,
        micro_u=_micro_accuracy(unseen_counts),
        micro_s=_micro_accuracy(seen_counts),
        per_class=dict(sorted(per_class.items())),
    )


def attention_maps(model, bundle, sample_index, normalize=False):
    """
    Region attention of one sample for both experts.

    ``normalize`` must match the checkpoint's ``normalize_features`` so
    the maps come from the inputs the model was trained on.

    Returns:
        {'cexp': D x R, 'fexp': D x R}, rows in canonical attribute order
    """
    _check_dims(model, bundle)
    if not 0 <= sample_index < bundle.n:
        raise ContractError(f'Sample index {sample_index} is outside 0..{bundle.n - 1}.')

    f = bundle.flat_features()[sample_index:sample_index + 1]
    if normalize:
        f = normalize_features(f)
    out = dedn_forward(
        model, bundle.attr_vectors, f[0], bundle.attributes,
        1.0, keep_attention=True,
    )
    stacked = np.concatenate([T.as_array(o.a_region) for o in out.fexp], axis=0)
    return {
        'cexp': np.array(T.as_array(out.cexp.a_region)),
        'fexp': stacked[model.partition.inverse],
    }


def export_attention_maps(model, bundle, sample_index, out_path, normalize=False):
    """
    Write both experts' region attention of one sample as CSV.

    Each expert's block starts with a ``# expert=NAME sample=I`` line,
    followed by one row per attribute and one column per region
    (row-major H x W).
    """
    digits = settings.DEDN['EXPORT']['significant_digits']
    maps = attention_maps(model, bundle, sample_index, normalize=normalize)
    with open(out_path, 'w', encoding='utf-8', newline='\n') as fh:
        for expert in ('cexp', 'fexp'):
            np.savetxt(
                fh, maps[expert], fmt=f'%.{digits}g', delimiter=',',
                header=f'expert={expert} sample={sample_index}', comments='# ',
            )
    logger.info('Exported attention maps of sample %d to %s', sample_index, out_path)


def published_harmonic_mean_residuals():
    """
    Recompute every published H from its U and S.

    Returns:
        list of (table, method, dataset, printed H, computed H) for rows
        that report all three.
    """
    residuals = []
    for table, rows in PUBLISHED_RESULTS.items():
        for row in rows:
            for dataset in ('cub', 'sun', 'awa2'):
                scores = getattr(row, dataset)
                if scores is None or None in (scores.u, scores.s, scores.h):
                    continue
                residuals.append(
                    (table, row.method, dataset, scores.h, harmonic_mean(scores.u, scores.s))
                )
    return residuals
