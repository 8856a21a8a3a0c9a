"""
DEDN Toolkit Gradient Checks

Central finite differences against the tape's analytic gradients for the
alignment, distillation, cross-entropy, MAL and composite losses, with
respect to every weight matrix of both experts. Everything runs in
float64.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import SplitSpec
from .dedn import ClusterPartition, Dims, dedn_forward, initialize_model
from .objectives import ClassificationLoss, LossWeights, ce_loss, total_loss


logger = logging.getLogger(__name__)

LOSSES = ('align', 'distill', 'ce', 'mal', 'total')

INSTANCE_SCALE = 0.5


@dataclass(frozen=True)
class CheckResult:
    loss: str
    q: int
    max_rel_error: float
    passed: bool


@dataclass(frozen=True)
class _Instance:
    model: object
    v: np.ndarray
    f: np.ndarray
    a: np.ndarray
    labels: np.ndarray
    splits: SplitSpec
    lambda_rc: float


def relative_error(analytic, numeric):
    """|a - n| / max(1, |a|, |n|), elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def random_instance(rng, q, c=3, r=4, g=3, d=5, k=4, batch=2):
    """
    Small random problem with ``q`` attribute clusters and one unseen class.

    Features and attribute vectors are drawn at half unit scale so the
    central-difference truncation error stays well below the tolerance at
    the default step.
    """
    order = rng.permutation(d)
    bounds = np.linspace(0, d, q + 1).astype(int)
    partition = ClusterPartition(tuple(
        tuple(sorted(order[bounds[i]:bounds[i + 1]].tolist())) for i in range(q)
    ))
    model = initialize_model(Dims(c=c, r=r, g=g, d=d), partition, int(rng.integers(2 ** 31)))
    model = model.with_parameters({
        name: np.asarray(m, dtype=np.float64) for name, m in model.parameters()
    })
    splits = SplitSpec(range(k - 1), [k - 1], range(batch), [])
    return _Instance(
        model=model,
        v=INSTANCE_SCALE * rng.standard_normal((d, g)),
        f=INSTANCE_SCALE * rng.standard_normal((batch, c, r)),
        a=rng.uniform(0.0, 1.0, size=(k, d)),
        labels=rng.integers(0, k - 1, size=batch),
        splits=splits,
        lambda_rc=float(rng.uniform(0.2, 0.8)),
    )


def _loss(name, instance, model):
    forward = dedn_forward(model, instance.v, instance.f, instance.a, instance.lambda_rc)
    weights = LossWeights(beta=0.5, gamma=0.3, epsilon=0.7)
    if name == 'ce':
        return T.add(
            T.mean(ce_loss(forward.p_ec, instance.labels)),
            T.mean(ce_loss(forward.p_ef, instance.labels)),
        )
    terms = total_loss(forward, instance.labels, instance.splits, weights,
                       kind=ClassificationLoss.MAL)
    if name == 'align':
        return T.add(terms.align_ec, terms.align_ef)
    if name == 'distill':
        return terms.distill
    if name == 'mal':
        return T.add(terms.mal_ec, terms.mal_ef)
    return terms.total


def analytic_gradients(name, instance):
    tape = T.Tape(dtype=T.CHECK_DTYPE)
    bound = instance.model.bind(tape)
    grads = tape.backward(_loss(name, instance, bound))
    return {param: grads[leaf.node_id] for param, leaf in bound.parameters()}


def numeric_gradients(name, instance, step):
    values = {param: np.array(m, dtype=np.float64) for param, m in instance.model.parameters()}
    grads = {}
    for param, theta in values.items():
        grad = np.zeros_like(theta)
        for index in np.ndindex(theta.shape):
            shifted = []
            for sign in (1.0, -1.0):
                moved = theta.copy()
                moved[index] += sign * step
                model = instance.model.with_parameters({**values, param: moved})
                shifted.append(_loss(name, instance, model).item())
            grad[index] = (shifted[0] - shifted[1]) / (2.0 * step)
        grads[param] = grad
    return grads


def check_loss(name, instance, step):
    """Largest relative error over every entry of every weight matrix."""
    analytic = analytic_gradients(name, instance)
    numeric = numeric_gradients(name, instance, step)
    return max(float(relative_error(analytic[p], numeric[p]).max()) for p in analytic)


def run_suite(seed=0, step=1e-3, tolerance=1e-4):
    """
    Check every loss for Q = 1 and Q = 2.

    Returns:
        list of CheckResult, one per (loss, Q)
    """
    rng = np.random.default_rng(seed)
    results = []
    for q in (1, 2):
        instance = random_instance(rng, q)
        for name in LOSSES:
            error = check_loss(name, instance, step)
            results.append(CheckResult(name, q, error, error < tolerance))
            logger.debug('gradcheck %s Q=%d: max relative error %.3e', name, q, error)
    return results
