"""Cross-modality fusion head and decoder.

Scan-branch features of the two modalities pre-fuse by plain elementwise
addition. Attention-branch features pre-fuse at the attention level: each
modality yields its own channel-attention matrix (with its own scale), a
dilated-conv weighting head turns both feature maps into two softmax weights,
and the convex combination of the per-modality matrices is applied to both
value matrices. Each pre-fused map then passes through its own dual-branch
fusion block, and the decoder renders the final image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import AttentionTriplet, TransformerBlockParams, \
    apply_attention, channel_attention, make_transformer_block_params, \
    transformer_block
from .autodiff import ContractError, DimensionError, Tensor
from .blocks import DualBranchBlockParams, FeatureMap, _require, \
    dual_branch_block

ASPP_DILATIONS = (1, 2, 4)


@dataclass
class AsppWeightParams:
    """Dilated 3x3 convs with dense connections, pooled into two weights."""
    conv1_w: Tensor     # (C, C, 3, 3), dilation 1
    conv1_b: Tensor
    conv2_w: Tensor     # (C, 2C, 3, 3), dilation 2
    conv2_b: Tensor
    conv3_w: Tensor     # (C, 3C, 3, 3), dilation 4
    conv3_b: Tensor
    fc_w: Tensor        # (2, 2C)
    fc_b: Tensor        # (2,)


@dataclass
class CrossModalParams:
    """Shared Q/K/V projection with per-modality attention scales."""
    qkv_point: Tensor        # (3C, C, 1, 1)
    qkv_depth: Tensor        # (3C, 3, 3)
    log_scale_vis: Tensor    # (): visible-path scale, exp-parameterized
    log_scale_ir: Tensor     # (): infrared-path twin
    weights: AsppWeightParams | None   # absent when cross-modal attention is off


@dataclass
class DecoderParams:
    merge_w: Tensor          # (C, n_inputs*C, 1, 1)
    merge_b: Tensor
    block: TransformerBlockParams
    out_w: Tensor            # (1, C, 1, 1)
    out_b: Tensor


@dataclass
class FusionParams:
    cross: CrossModalParams | None          # None when transformer branch off
    fuse_trans: DualBranchBlockParams | None
    fuse_mamba: DualBranchBlockParams | None


def make_aspp_weight_params(rng: np.random.Generator,
                            channels: int) -> AsppWeightParams:
    c = channels

    def conv_w(c_in):
        return ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(9 * c_in),
                                       size=(c, c_in, 3, 3)))

    return AsppWeightParams(
        conv1_w=conv_w(c), conv1_b=ad.parameter(np.zeros(c)),
        conv2_w=conv_w(2 * c), conv2_b=ad.parameter(np.zeros(c)),
        conv3_w=conv_w(3 * c), conv3_b=ad.parameter(np.zeros(c)),
        fc_w=ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(2 * c), size=(2, 2 * c))),
        fc_b=ad.parameter(np.zeros(2)),
    )


def make_cross_modal_params(rng: np.random.Generator, channels: int,
                            with_weights: bool = True) -> CrossModalParams:
    """Q/K/V starts as three stacked identities (pointwise copy plus a
    center-tap depthwise kernel), so the initial pre-fusion feature is an
    attention-mixed sum of the branch features the decoder already knows."""
    c = channels
    eye = np.zeros((3 * c, c, 1, 1))
    for i in range(3 * c):
        eye[i, i % c, 0, 0] = 1.0
    depth = np.zeros((3 * c, 3, 3))
    depth[:, 1, 1] = 1.0
    return CrossModalParams(
        qkv_point=ad.parameter(eye),
        qkv_depth=ad.parameter(depth),
        log_scale_vis=ad.parameter(np.zeros(())),
        log_scale_ir=ad.parameter(np.zeros(())),
        weights=make_aspp_weight_params(rng, c) if with_weights else None,
    )


def make_decoder_params(rng: np.random.Generator, channels: int,
                        n_inputs: int) -> DecoderParams:
    c = channels
    return DecoderParams(
        merge_w=ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(n_inputs * c),
                                        size=(c, n_inputs * c, 1, 1))),
        merge_b=ad.parameter(np.zeros(c)),
        block=make_transformer_block_params(rng, c),
        out_w=ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(c), size=(1, c, 1, 1))),
        out_b=ad.parameter(np.zeros(1)),
    )


# ---------------------------------------------------------------------------
# pre-fusion
# ---------------------------------------------------------------------------

def prefuse_mamba(feat_a: FeatureMap, feat_b: FeatureMap) -> FeatureMap:
    """Elementwise sum of the two modalities' scan-branch features."""
    _require(feat_a, "mamba")
    _require(feat_b, "mamba")
    if feat_a.shape != feat_b.shape:
        raise DimensionError("prefuse operands differ: %r vs %r"
                             % (feat_a.shape, feat_b.shape))
    return FeatureMap(feat_a.data + feat_b.data, "prefused")


def _project(x: Tensor, p: CrossModalParams, log_scale: Tensor) -> AttentionTriplet:
    c, h, w = x.shape
    qkv = ad.depthwise_conv2d(ad.conv2d(x, p.qkv_point, stride=1, pad=0),
                              p.qkv_depth)
    flat = qkv.reshape(3 * c, h * w)
    return AttentionTriplet(q=flat[0:c].transpose(), k=flat[c:2 * c],
                            v=flat[2 * c:3 * c].transpose(),
                            scale=ad.exp(log_scale))


def modality_attentions(vis_t: FeatureMap, ir_t: FeatureMap,
                        p: CrossModalParams):
    """Per-modality channel-attention matrices plus retained value matrices.

    Returns (attn_vis, attn_ir, values_vis, values_ir); the visible path uses
    one learned scale and the infrared path its twin.
    """
    _require(vis_t, "transformer")
    _require(ir_t, "transformer")
    if vis_t.shape != ir_t.shape:
        raise DimensionError("modality features differ: %r vs %r"
                             % (vis_t.shape, ir_t.shape))
    trip_vis = _project(vis_t.data, p, p.log_scale_vis)
    trip_ir = _project(ir_t.data, p, p.log_scale_ir)
    _, attn_vis = channel_attention(trip_vis)
    _, attn_ir = channel_attention(trip_ir)
    return attn_vis, attn_ir, trip_vis.v, trip_ir.v


def _aspp_encode(x: Tensor, wp: AsppWeightParams) -> Tensor:
    c = x.shape[0]
    y1 = ad.silu(ad.dilated_conv2d(x, wp.conv1_w, 1) + wp.conv1_b.reshape(c, 1, 1))
    y2 = ad.silu(ad.dilated_conv2d(ad.concat([x, y1], axis=0), wp.conv2_w, 2)
                 + wp.conv2_b.reshape(c, 1, 1))
    y3 = ad.silu(ad.dilated_conv2d(ad.concat([x, y1, y2], axis=0), wp.conv3_w, 4)
                 + wp.conv3_b.reshape(c, 1, 1))
    return y3


def attention_weighting(vis_t: FeatureMap, ir_t: FeatureMap,
                        attn_vis: Tensor, attn_ir: Tensor,
                        wp: AsppWeightParams,
                        weights_override: tuple[float, float] | None = None):
    """Convex combination of the two attention matrices.

    Both modality features pass through the dilated-conv encoder, are pooled
    and concatenated, and a fully connected layer plus softmax yields the two
    weights. ``weights_override`` is a test hook that bypasses the learned
    weighting. Returns (combined_attention, w_vis, w_ir).
    """
    if attn_vis.shape != attn_ir.shape:
        raise DimensionError("attention matrices differ: %r vs %r"
                             % (attn_vis.shape, attn_ir.shape))
    if weights_override is not None:
        w_vis = Tensor(float(weights_override[0]))
        w_ir = Tensor(float(weights_override[1]))
    else:
        enc_vis = _aspp_encode(vis_t.data, wp).mean(axis=(1, 2))   # (C,)
        enc_ir = _aspp_encode(ir_t.data, wp).mean(axis=(1, 2))
        pooled = ad.concat([enc_vis, enc_ir], axis=0).reshape(-1, 1)
        logits = ad.matmul(wp.fc_w, pooled).reshape(2) + wp.fc_b
        weights = ad.softmax(logits, axis=0)
        w_vis, w_ir = weights[0], weights[1]
    combined = w_vis * attn_vis + w_ir * attn_ir
    return combined, w_vis, w_ir


def prefuse_transformer(attn: Tensor, v_ir: Tensor, v_vis: Tensor,
                        height: int, width: int) -> FeatureMap:
    """Apply one shared attention to both value matrices and sum."""
    if v_ir.shape != v_vis.shape:
        raise DimensionError("value matrices differ: %r vs %r"
                             % (v_ir.shape, v_vis.shape))
    if v_ir.shape[0] != height * width:
        raise DimensionError("value rows %d != %d pixels"
                             % (v_ir.shape[0], height * width))
    mixed = apply_attention(attn, v_ir) + apply_attention(attn, v_vis)
    c = mixed.shape[1]
    return FeatureMap(mixed.transpose().reshape(c, height, width), "prefused")


def prefuse_transformer_per_modality(attn_vis: Tensor, attn_ir: Tensor,
                                     v_vis: Tensor, v_ir: Tensor,
                                     height: int, width: int) -> FeatureMap:
    """Ablation path: each modality keeps its own attention, results add."""
    mixed = apply_attention(attn_ir, v_ir) + apply_attention(attn_vis, v_vis)
    c = mixed.shape[1]
    return FeatureMap(mixed.transpose().reshape(c, height, width), "prefused")


# ---------------------------------------------------------------------------
# fusion blocks and decoder
# ---------------------------------------------------------------------------

def fuse_features(pre_trans: FeatureMap | None, pre_mamba: FeatureMap | None,
                  p: FusionParams) -> tuple[FeatureMap | None, FeatureMap | None]:
    """Each pre-fused map passes through its own dual-branch block.

    Pre-fused features are two-modality sums, so they enter the blocks
    scaled by 1/2: that keeps them in the per-modality magnitude regime the
    stage-one decoder was trained in (a raw sum saturates it). The
    attention-side block keeps only its attention-branch output (its second
    scan layer is never evaluated: the first scan layer still feeds the
    positional blend); the scan-side block keeps only its scan output.
    """
    half = Tensor(0.5)
    fused_t = fused_m = None
    if pre_trans is not None:
        _require(pre_trans, "prefused")
        t_out, _ = dual_branch_block(FeatureMap(pre_trans.data * half, "shallow"),
                                     p.fuse_trans, need_mamba_out=False)
        fused_t = FeatureMap(t_out.data, "fused")
    if pre_mamba is not None:
        _require(pre_mamba, "prefused")
        _, m_out = dual_branch_block(FeatureMap(pre_mamba.data * half, "shallow"),
                                     p.fuse_mamba)
        fused_m = FeatureMap(m_out.data, "fused")
    return fused_t, fused_m


def decode(feat_t: FeatureMap | None, feat_m: FeatureMap | None,
           p: DecoderParams) -> Tensor:
    """Merge branch features and render a single-channel image in [0, 1]."""
    present = [f for f in (feat_t, feat_m) if f is not None]
    if not present:
        raise ContractError("decode needs at least one feature map")
    for f in present:
        _require(f, "fused", "transformer", "mamba")
    if len(present) == 2 and present[0].shape != present[1].shape:
        raise DimensionError("decoder inputs differ: %r vs %r"
                             % (present[0].shape, present[1].shape))
    c = p.merge_w.shape[0]
    expected_in = p.merge_w.shape[1]
    stacked = ad.concat([f.data for f in present], axis=0) \
        if len(present) > 1 else present[0].data
    if stacked.shape[0] != expected_in:
        raise DimensionError("decoder built for %d input channels, got %d"
                             % (expected_in, stacked.shape[0]))
    merged = ad.conv2d(stacked, p.merge_w, stride=1, pad=0) \
        + p.merge_b.reshape(c, 1, 1)
    refined = transformer_block(merged, p.block)
    out = ad.conv2d(refined, p.out_w, stride=1, pad=0) + p.out_b.reshape(1, 1, 1)
    return ad.sigmoid(out)
