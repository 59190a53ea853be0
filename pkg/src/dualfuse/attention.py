"""Transposed channel attention branch.

Attention here runs across channels, not pixels: queries and keys meet in a
C x C matrix, so cost grows linearly with pixel count at fixed channel width.
A block is pre-norm with two residual sublayers: channel attention, then a
gated feed-forward (two parallel pointwise+depthwise paths, GELU gate).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor

FF_EXPANSION = 2


@dataclass
class AttentionTriplet:
    """Q/K/V of one channel-attention evaluation; k comes pre-transposed."""
    q: Tensor          # (HW, C)
    k: Tensor          # (C, HW)
    v: Tensor          # (HW, C)
    scale: Tensor      # positive scalar, exp of an unconstrained parameter

    def __post_init__(self):
        if self.q.shape != self.v.shape:
            raise DimensionError("q and v must share shape, got %r vs %r"
                                 % (self.q.shape, self.v.shape))
        if self.k.shape != (self.q.shape[1], self.q.shape[0]):
            raise DimensionError("k must be the transpose shape of q")


@dataclass
class TransformerBlockParams:
    norm1_gain: Tensor      # (C,)
    norm1_bias: Tensor
    qkv_point: Tensor       # (3C, C, 1, 1)
    qkv_depth: Tensor       # (3C, 3, 3)
    attn_out: Tensor        # (C, C, 1, 1)
    log_scale: Tensor       # () unconstrained; attention scale = exp
    norm2_gain: Tensor
    norm2_bias: Tensor
    ff_gate_point: Tensor   # (E, C, 1, 1) with E = FF_EXPANSION * C
    ff_gate_depth: Tensor   # (E, 3, 3)
    ff_value_point: Tensor  # (E, C, 1, 1)
    ff_value_depth: Tensor  # (E, 3, 3)
    ff_out: Tensor          # (C, E, 1, 1)

    @property
    def channels(self) -> int:
        return self.attn_out.shape[0]


def make_transformer_block_params(rng: np.random.Generator,
                                  channels: int) -> TransformerBlockParams:
    c = channels
    e = FF_EXPANSION * c

    def conv_w(c_out, c_in, k):
        std = 1.0 / np.sqrt(c_in * k * k)
        return ad.parameter(rng.normal(0.0, std, size=(c_out, c_in, k, k)))

    def depth_w(ch):
        return ad.parameter(rng.normal(0.0, 1.0 / 3.0, size=(ch, 3, 3)))

    return TransformerBlockParams(
        norm1_gain=ad.parameter(np.ones(c)),
        norm1_bias=ad.parameter(np.zeros(c)),
        qkv_point=conv_w(3 * c, c, 1),
        qkv_depth=depth_w(3 * c),
        attn_out=conv_w(c, c, 1),
        log_scale=ad.parameter(np.zeros(())),
        norm2_gain=ad.parameter(np.ones(c)),
        norm2_bias=ad.parameter(np.zeros(c)),
        ff_gate_point=conv_w(e, c, 1),
        ff_gate_depth=depth_w(e),
        ff_value_point=conv_w(e, c, 1),
        ff_value_depth=depth_w(e),
        ff_out=conv_w(c, e, 1),
    )


def channel_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Per-pixel layer norm over the channel axis of a C x H x W map."""
    c = x.shape[0]
    normed = ad.layer_norm(x, axis=0)
    return normed * gain.reshape(c, 1, 1) + bias.reshape(c, 1, 1)


def project_qkv(x: Tensor, p: TransformerBlockParams) -> AttentionTriplet:
    """Pointwise then depthwise projection of a C x H x W map into Q/K/V.

    Spatial dims are flattened row-major; K is returned pre-transposed
    as (C, HW).
    """
    if x.ndim != 3:
        raise DimensionError("project_qkv expects a CxHxW map, got %r" % (x.shape,))
    c, h, w = x.shape
    if p.channels != c:
        raise DimensionError("params built for %d channels, input has %d"
                             % (p.channels, c))
    if h < 3 or w < 3:
        raise ContractError("spatial dims must be >= 3 for the depthwise 3x3")
    qkv = ad.depthwise_conv2d(ad.conv2d(x, p.qkv_point, stride=1, pad=0),
                              p.qkv_depth)
    flat = qkv.reshape(3 * c, h * w)
    k = flat[c:2 * c]                        # already (C, HW)
    q = flat[0:c].transpose()                # (HW, C)
    v = flat[2 * c:3 * c].transpose()
    return AttentionTriplet(q=q, k=k, v=v, scale=ad.exp(p.log_scale))


def channel_attention(t: AttentionTriplet) -> tuple[Tensor, Tensor]:
    """Row-stochastic C x C attention and its application to V.

    Output channel i is the attention-weighted mix sum_j A[i,j] * V[:,j];
    the matrix is returned alongside for cross-modal reuse. Work is
    O(HW * C^2), never quadratic in pixel count.
    """
    scores = ad.matmul(t.k, t.q) / t.scale
    attn = ad.softmax(scores, axis=1)
    out = ad.matmul(t.v, attn.transpose())
    return out, attn


def apply_attention(attn: Tensor, v: Tensor) -> Tensor:
    """Apply an existing C x C attention matrix to a value matrix (HW, C)."""
    return ad.matmul(v, attn.transpose())


def gated_feed_forward(x: Tensor, p: TransformerBlockParams) -> Tensor:
    gate = ad.depthwise_conv2d(ad.conv2d(x, p.ff_gate_point, stride=1, pad=0),
                               p.ff_gate_depth)
    value = ad.depthwise_conv2d(ad.conv2d(x, p.ff_value_point, stride=1, pad=0),
                                p.ff_value_depth)
    return ad.conv2d(ad.gelu(gate) * value, p.ff_out, stride=1, pad=0)


def transformer_block(x: Tensor, p: TransformerBlockParams) -> Tensor:
    """Pre-norm residual block: channel attention, then gated feed-forward."""
    c, h, w = x.shape
    trip = project_qkv(channel_norm(x, p.norm1_gain, p.norm1_bias), p)
    attended, _ = channel_attention(trip)
    attended = attended.transpose().reshape(c, h, w)
    x = x + ad.conv2d(attended, p.attn_out, stride=1, pad=0)
    ff = gated_feed_forward(channel_norm(x, p.norm2_gain, p.norm2_bias), p)
    return x + ff
