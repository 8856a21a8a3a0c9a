"""
DEDN Toolkit Dual Attention Network

This module defines the attention network both experts are built from:
a region-attribute branch and a channel-attribute branch, the alignment
loss that keeps their attribute scores consistent, and the weighted
fusion used wherever a single score per attribute is needed.

Shapes: v is D' x G (one semantic vector per attribute), f is C x R
(a feature map flattened over its R = H * W regions), or B x C x R for a
batch of samples.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import ConfigError, DimensionError


MATRIX_NAMES = ('w1', 'w2', 'w3', 'w4')


@dataclass(frozen=True)
class DanParams:
    """
    The four learnable matrices of one attention network.

    w1 and w2 (G x C) map attribute vectors to region similarity and
    region attention; w3 and w4 (G x R) do the same for channels. Fields
    hold ndarrays, or leaf tensors once the params are bound to a tape.
    """

    w1: object
    w2: object
    w3: object
    w4: object

    def __post_init__(self):
        g, c = T.as_array(self.w1).shape
        r = T.as_array(self.w3).shape[1]
        expected = {'w1': (g, c), 'w2': (g, c), 'w3': (g, r), 'w4': (g, r)}
        for name, value in self.matrices():
            if T.as_array(value).shape != expected[name]:
                raise DimensionError(
                    f'DanParams.{name}: expected shape {expected[name]}, '
                    f'got {T.as_array(value).shape}'
                )

    @property
    def dims(self):
        """(G, C, R)"""
        g, c = T.as_array(self.w1).shape
        return g, c, T.as_array(self.w3).shape[1]

    def matrices(self):
        return [(name, getattr(self, name)) for name in MATRIX_NAMES]

    def bind(self, tape):
        """Return a copy whose matrices are leaves of ``tape``."""
        return DanParams(*(tape.leaf(T.as_array(m)) for _, m in self.matrices()))

    def numpy(self):
        return DanParams(*(np.array(T.as_array(m)) for _, m in self.matrices()))

    @classmethod
    def zeros(cls, g, c, r, dtype=T.STORAGE_DTYPE):
        return cls(
            np.zeros((g, c), dtype), np.zeros((g, c), dtype),
            np.zeros((g, r), dtype), np.zeros((g, r), dtype),
        )

    @classmethod
    def initialize(cls, rng, g, c, r, dtype=T.STORAGE_DTYPE):
        """
        Uniform init on [-1/sqrt(G), 1/sqrt(G)], drawn in w1..w4 order.

        Each matrix maps a G-dimensional attribute vector, so its fan-in
        is G.
        """
        bound = 1.0 / np.sqrt(g)
        shapes = [(g, c), (g, c), (g, r), (g, r)]
        return cls(*(
            rng.uniform(-bound, bound, size=shape).astype(dtype)
            for shape in shapes
        ))


@dataclass(frozen=True)
class DanOutput:
    """
    Per-attribute scores of both branches.

    Attention maps are kept only when the forward pass asks for them
    (export mode); otherwise they are None.
    """

    o_region: T.Tensor
    o_channel: T.Tensor
    a_region: T.Tensor = None
    a_channel: T.Tensor = None


def region_branch(v, f, w1, w2):
    """
    Region-attribute scores.

    Returns:
        (s_r, a_r, o_r): D' x R similarity, D' x R attention normalized
        over regions, and the attention-weighted score per attribute.
    """
    s_r = T.matmul(T.matmul(v, w1), f)
    a_r = T.softmax_rows(T.matmul(T.matmul(v, w2), f))
    o_r = T.sum_rows(T.mul(s_r, a_r))
    return s_r, a_r, o_r


def channel_branch(v, f_t, w3, w4):
    """Mirror of region_branch over channels; ``f_t`` is R x C."""
    s_c = T.matmul(T.matmul(v, w3), f_t)
    a_c = T.softmax_rows(T.matmul(T.matmul(v, w4), f_t))
    o_c = T.sum_rows(T.mul(s_c, a_c))
    return s_c, a_c, o_c


def consistency_loss(x, y):
    """
    Symmetric KL between softmax(x) and softmax(y), plus ||x - y||^2.

    The KL half is taken over softmax-normalized scores (temperature 1);
    the squared norm over the raw scores. Batched inputs give one value
    per row.
    """
    if T.as_array(x).shape != T.as_array(y).shape:
        raise DimensionError(
            f'consistency_loss: shapes {T.as_array(x).shape} and '
            f'{T.as_array(y).shape} differ'
        )
    p = T.softmax_rows(x)
    q = T.softmax_rows(y)
    symmetric_kl = T.scale(T.add(T.kl_div(p, q), T.kl_div(q, p)), 0.5)
    return T.add(symmetric_kl, T.mse(x, y))


def align_loss(o_r, o_c):
    """Alignment between region-branch and channel-branch scores."""
    return consistency_loss(o_r, o_c)


def combine_outputs(o_r, o_c, lambda_rc):
    """lambda_rc * o_r + (1 - lambda_rc) * o_c"""
    if not 0.0 <= lambda_rc <= 1.0:
        raise ConfigError(f'lambda_rc must lie in [0, 1], got {lambda_rc}')
    if T.as_array(o_r).shape != T.as_array(o_c).shape:
        raise DimensionError(
            f'combine_outputs: shapes {T.as_array(o_r).shape} and '
            f'{T.as_array(o_c).shape} differ'
        )
    return T.add(T.scale(o_r, lambda_rc), T.scale(o_c, 1.0 - lambda_rc))


def dan_forward(v, f, params, keep_attention=False):
    """Run both branches of one attention network."""
    _, a_r, o_r = region_branch(v, f, params.w1, params.w2)
    _, a_c, o_c = channel_branch(v, T.transpose(f), params.w3, params.w4)
    if keep_attention:
        return DanOutput(o_r, o_c, a_r, a_c)
    return DanOutput(o_r, o_c)
