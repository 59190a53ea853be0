"""Selective-scan state-space branch.

A 1-D input-selective recurrence (timestep, input and readout projections are
all functions of the current token) is swept along four spatial traversal
orders of the feature map and summed, giving the sequence model 2-D awareness.
The block wrapper follows the visual-state-space shape: norm, expanded input
projection, depthwise conv, SiLU, the four-direction scan, a SiLU-gated side
branch, output projection, residual add.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor

STATE_DIM = 8
EXPANSION = 2
DELTA_INIT = 0.05          # softplus(delta_bias) at init: small, stable steps

SCAN_DIRECTIONS = ("row", "row_reversed", "col", "col_reversed")


@dataclass
class ScanParams:
    """Parameters of one selective scan over C-channel tokens."""
    a_log: Tensor       # (C, N): log of -A, so the continuous A stays negative
    delta_w: Tensor     # (C, C)
    delta_bias: Tensor  # (C,)
    b_w: Tensor         # (C, N)
    c_w: Tensor         # (C, N)
    skip: Tensor        # (C,): direct input gain

    @property
    def channels(self) -> int:
        return self.a_log.shape[0]

    @property
    def state_dim(self) -> int:
        return self.a_log.shape[1]


@dataclass
class SsmBlockParams:
    """Full residual scan block operating on C-channel maps."""
    norm_gain: Tensor       # (C,)
    norm_bias: Tensor
    in_proj: Tensor         # (E, C, 1, 1) with E = EXPANSION * C
    gate_proj: Tensor       # (E, C, 1, 1)
    conv_depth: Tensor      # (E, 3, 3)
    scan: ScanParams        # over E channels
    out_proj: Tensor        # (C, E, 1, 1)

    @property
    def channels(self) -> int:
        return self.out_proj.shape[0]


@dataclass
class ConvSubstituteParams:
    """Ablation stand-in: the scan replaced by a second depthwise conv."""
    norm_gain: Tensor
    norm_bias: Tensor
    in_proj: Tensor
    gate_proj: Tensor
    conv_depth: Tensor
    conv_mix: Tensor        # (E, 3, 3): takes the scan's place
    out_proj: Tensor

    @property
    def channels(self) -> int:
        return self.out_proj.shape[0]


def make_scan_params(rng: np.random.Generator, channels: int,
                     state_dim: int = STATE_DIM) -> ScanParams:
    c, n = channels, state_dim
    a_init = np.tile(np.log(np.arange(1, n + 1, dtype=np.float64)), (c, 1))
    delta_bias = np.full(c, np.log(np.expm1(DELTA_INIT)))
    std = 1.0 / np.sqrt(c)
    return ScanParams(
        a_log=ad.parameter(a_init),
        delta_w=ad.parameter(rng.normal(0.0, std, size=(c, c))),
        delta_bias=ad.parameter(delta_bias),
        b_w=ad.parameter(rng.normal(0.0, std, size=(c, n))),
        c_w=ad.parameter(rng.normal(0.0, std, size=(c, n))),
        skip=ad.parameter(np.ones(c)),
    )


def _block_shell(rng: np.random.Generator, channels: int):
    c = channels
    e = EXPANSION * c

    def conv_w(c_out, c_in):
        return ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(c_in),
                                       size=(c_out, c_in, 1, 1)))

    return dict(
        norm_gain=ad.parameter(np.ones(c)),
        norm_bias=ad.parameter(np.zeros(c)),
        in_proj=conv_w(e, c),
        gate_proj=conv_w(e, c),
        conv_depth=ad.parameter(rng.normal(0.0, 1.0 / 3.0, size=(e, 3, 3))),
        out_proj=conv_w(c, e),
    )


def make_ssm_block_params(rng: np.random.Generator, channels: int,
                          state_dim: int = STATE_DIM) -> SsmBlockParams:
    shell = _block_shell(rng, channels)
    scan = make_scan_params(rng, EXPANSION * channels, state_dim)
    return SsmBlockParams(scan=scan, **shell)


def make_conv_substitute_params(rng: np.random.Generator,
                                channels: int) -> ConvSubstituteParams:
    shell = _block_shell(rng, channels)
    e = EXPANSION * channels
    conv_mix = ad.parameter(rng.normal(0.0, 1.0 / 3.0, size=(e, 3, 3)))
    return ConvSubstituteParams(conv_mix=conv_mix, **shell)


def selective_scan(x: Tensor, p: ScanParams) -> Tensor:
    """Run the input-selective recurrence over an (L, C) token sequence.

    Per token, the timestep is softplus of a learned projection (strictly
    positive), and the state input/readout vectors are linear in the token;
    the state matrix exp(delta * A) decays because A = -exp(a_log) < 0.
    """
    if x.ndim != 2:
        raise DimensionError("selective_scan expects (L, C) tokens, got %r"
                             % (x.shape,))
    if x.shape[0] < 1:
        raise ContractError("selective_scan needs at least one token")
    if x.shape[1] != p.channels:
        raise DimensionError("tokens have %d channels, params expect %d"
                             % (x.shape[1], p.channels))
    delta = ad.softplus(ad.matmul(x, p.delta_w) + p.delta_bias)
    b = ad.matmul(x, p.b_w)
    c = ad.matmul(x, p.c_w)
    a = ad.neg(ad.exp(p.a_log))
    return ad.selective_scan_core(x, delta, b, c, a, p.skip)


def _to_tokens(x: Tensor, direction: str) -> Tensor:
    """Reorder a C x H x W map into an (HW, C) sequence for one direction."""
    c, h, w = x.shape
    if direction.startswith("col"):
        x = x.transpose(0, 2, 1)
    tokens = x.reshape(c, h * w).transpose()
    if direction.endswith("reversed"):
        tokens = ad.flip(tokens, 0)
    return tokens


def _from_tokens(tokens: Tensor, direction: str, h: int, w: int) -> Tensor:
    """Fold a scanned (HW, C) sequence back to its original spatial order."""
    if direction.endswith("reversed"):
        tokens = ad.flip(tokens, 0)
    c = tokens.shape[1]
    if direction.startswith("col"):
        return tokens.transpose().reshape(c, w, h).transpose(0, 2, 1)
    return tokens.transpose().reshape(c, h, w)


def cross_scan_2d(x: Tensor, p: ScanParams) -> Tensor:
    """Sum of the selective scan over all four spatial traversal orders."""
    if x.ndim != 3:
        raise DimensionError("cross_scan_2d expects a CxHxW map, got %r"
                             % (x.shape,))
    _, h, w = x.shape
    out = None
    for direction in SCAN_DIRECTIONS:
        scanned = selective_scan(_to_tokens(x, direction), p)
        folded = _from_tokens(scanned, direction, h, w)
        out = folded if out is None else out + folded
    return out


def ssm_block(x: Tensor, p: SsmBlockParams) -> Tensor:
    """Residual scan block; preserves the C x H x W shape."""
    from .attention import channel_norm   # shared per-pixel channel norm
    if x.shape[0] != p.channels:
        raise DimensionError("block built for %d channels, input has %d"
                             % (p.channels, x.shape[0]))
    normed = channel_norm(x, p.norm_gain, p.norm_bias)
    main = ad.conv2d(normed, p.in_proj, stride=1, pad=0)
    main = ad.silu(ad.depthwise_conv2d(main, p.conv_depth))
    main = cross_scan_2d(main, p.scan)
    gate = ad.silu(ad.conv2d(normed, p.gate_proj, stride=1, pad=0))
    return x + ad.conv2d(main * gate, p.out_proj, stride=1, pad=0)


def conv_substitute_block(x: Tensor, p: ConvSubstituteParams) -> Tensor:
    """Residual conv block with the scan swapped for a depthwise 3x3 mix."""
    from .attention import channel_norm
    if x.shape[0] != p.channels:
        raise DimensionError("block built for %d channels, input has %d"
                             % (p.channels, x.shape[0]))
    normed = channel_norm(x, p.norm_gain, p.norm_bias)
    main = ad.conv2d(normed, p.in_proj, stride=1, pad=0)
    main = ad.silu(ad.depthwise_conv2d(main, p.conv_depth))
    main = ad.depthwise_conv2d(main, p.conv_mix)
    gate = ad.silu(ad.conv2d(normed, p.gate_proj, stride=1, pad=0))
    return x + ad.conv2d(main * gate, p.out_proj, stride=1, pad=0)
