"""Dual-branch encoder block with hierarchical branch interaction.

One block runs two layers of each branch over shared input. Between layers
the branches exchange what the other lacks: the scan branch's position-aware
features are blended into the attention branch through a single global gate
(a sigmoid-squashed scalar, structurally confined to (0,1)), and the
attention branch's channel-mixed output is folded back into the scan branch
through a pointwise mix plus a 3x3 spatial aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import TransformerBlockParams, make_transformer_block_params, \
    transformer_block
from .autodiff import ContractError, DimensionError, Tensor
from .ssm import ConvSubstituteParams, SsmBlockParams, conv_substitute_block, \
    make_conv_substitute_params, make_ssm_block_params, ssm_block

PROVENANCES = ("shallow", "transformer", "mamba", "prefused", "fused")


@dataclass
class FeatureMap:
    """C x H x W activation tagged with where in the pipeline it came from.

    Mixed features produced by the inter-branch injections re-enter a branch
    layer exactly like shallow features do, so they carry the "shallow" tag.
    """
    data: Tensor
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ContractError("unknown provenance %r" % (self.provenance,))
        if self.data.ndim != 3:
            raise DimensionError("feature maps are CxHxW, got %r"
                                 % (self.data.shape,))

    @property
    def shape(self):
        return self.data.shape


def _require(fmap: FeatureMap, *allowed: str) -> None:
    if fmap.provenance not in allowed:
        raise ContractError("expected provenance in %r, got %r"
                            % (allowed, fmap.provenance))


@dataclass
class InteractionParams:
    mix_gate_raw: Tensor    # (): global blend gate, sigma(raw) in (0,1)
    mix1_w: Tensor          # (C, 2C, 1, 1)
    mix1_b: Tensor          # (C,)
    mix3_w: Tensor          # (C, C, 3, 3)
    mix3_b: Tensor          # (C,)

    def gate(self) -> Tensor:
        return ad.sigmoid(self.mix_gate_raw)


@dataclass
class DualBranchBlockParams:
    """Two layers per branch plus one interaction; branches are optional so
    ablations can drop either side (interaction needs both)."""
    transformer1: TransformerBlockParams | None
    transformer2: TransformerBlockParams | None
    mamba1: SsmBlockParams | ConvSubstituteParams | None
    mamba2: SsmBlockParams | ConvSubstituteParams | None
    interaction: InteractionParams | None


@dataclass
class ShallowParams:
    embed_w: Tensor         # (C, 1, 1, 1)
    embed_b: Tensor         # (C,)
    block: TransformerBlockParams


def make_interaction_params(rng: np.random.Generator,
                            channels: int) -> InteractionParams:
    c = channels
    return InteractionParams(
        mix_gate_raw=ad.parameter(np.zeros(())),    # gate starts at 0.5
        mix1_w=ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(2 * c),
                                       size=(c, 2 * c, 1, 1))),
        mix1_b=ad.parameter(np.zeros(c)),
        mix3_w=ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(9 * c),
                                       size=(c, c, 3, 3))),
        mix3_b=ad.parameter(np.zeros(c)),
    )


def make_dual_branch_params(rng: np.random.Generator, channels: int,
                            transformer_on: bool = True,
                            mamba_on: bool = True,
                            interaction_on: bool = True,
                            mamba_as_conv: bool = False,
                            transparent_init: bool = False
                            ) -> DualBranchBlockParams:
    """``transparent_init`` zeroes every residual output projection, making
    the whole block an exact identity at initialization. Fusion-stage blocks
    use it so a fresh stage-two model starts from the stage-one behavior
    instead of scrambling the trained feature pathways."""
    if not (transformer_on or mamba_on):
        raise ContractError("at least one branch must stay enabled")

    def mamba_params():
        if mamba_as_conv:
            return make_conv_substitute_params(rng, channels)
        return make_ssm_block_params(rng, channels)

    p = DualBranchBlockParams(
        transformer1=make_transformer_block_params(rng, channels)
        if transformer_on else None,
        transformer2=make_transformer_block_params(rng, channels)
        if transformer_on else None,
        mamba1=mamba_params() if mamba_on else None,
        mamba2=mamba_params() if mamba_on else None,
        interaction=make_interaction_params(rng, channels)
        if (interaction_on and transformer_on and mamba_on) else None,
    )
    if transparent_init:
        for trans in (p.transformer1, p.transformer2):
            if trans is not None:
                trans.attn_out.data[:] = 0.0
                trans.ff_out.data[:] = 0.0
        for mamba in (p.mamba1, p.mamba2):
            if mamba is not None:
                mamba.out_proj.data[:] = 0.0
        if p.interaction is not None:
            # channel mix starts as "keep the scan-branch half unchanged"
            p.interaction.mix1_w.data[:] = 0.0
            for ch in range(channels):
                p.interaction.mix1_w.data[ch, ch, 0, 0] = 1.0
            p.interaction.mix3_w.data[:] = 0.0
            for ch in range(channels):
                p.interaction.mix3_w.data[ch, ch, 1, 1] = 1.0
    return p


def make_shallow_params(rng: np.random.Generator, channels: int) -> ShallowParams:
    return ShallowParams(
        embed_w=ad.parameter(rng.normal(0.0, 1.0, size=(channels, 1, 1, 1))),
        embed_b=ad.parameter(np.zeros(channels)),
        block=make_transformer_block_params(rng, channels),
    )


def _run_mamba(x: Tensor, p) -> Tensor:
    if isinstance(p, ConvSubstituteParams):
        return conv_substitute_block(x, p)
    return ssm_block(x, p)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def shallow_extract(img: Tensor, p: ShallowParams) -> FeatureMap:
    """Embed a single-channel image to C channels and run one attention block."""
    if img.ndim != 3 or img.shape[0] != 1:
        raise ContractError("shallow_extract wants a 1xHxW image, got %r"
                            % (img.shape,))
    c = p.embed_w.shape[0]
    embedded = ad.conv2d(img, p.embed_w, stride=1, pad=0) \
        + p.embed_b.reshape(c, 1, 1)
    return FeatureMap(transformer_block(embedded, p.block), "shallow")


def positional_blend(mamba_feat: FeatureMap, trans_feat: FeatureMap,
                     ip: InteractionParams) -> FeatureMap:
    """gate * mamba + (1 - gate) * transformer, one global scalar gate.

    The same gate serves every channel, pixel and modality, so the blend
    shifts proportions without disturbing the positional encoding itself.
    """
    _require(mamba_feat, "mamba")
    _require(trans_feat, "transformer")
    if mamba_feat.shape != trans_feat.shape:
        raise DimensionError("blend operands differ: %r vs %r"
                             % (mamba_feat.shape, trans_feat.shape))
    gate = ip.gate()
    mixed = gate * mamba_feat.data + (Tensor(1.0) - gate) * trans_feat.data
    return FeatureMap(mixed, "shallow")


def channel_mix(mamba_feat: FeatureMap, trans_out: FeatureMap,
                ip: InteractionParams) -> FeatureMap:
    """Concat channels, 1x1 mix down to C, then 3x3 spatial aggregation."""
    if mamba_feat.shape != trans_out.shape:
        raise DimensionError("mix operands differ: %r vs %r"
                             % (mamba_feat.shape, trans_out.shape))
    c = mamba_feat.shape[0]
    both = ad.concat([mamba_feat.data, trans_out.data], axis=0)
    mixed = ad.conv2d(both, ip.mix1_w, stride=1, pad=0) + ip.mix1_b.reshape(c, 1, 1)
    mixed = ad.conv2d(mixed, ip.mix3_w, stride=1, pad=1) + ip.mix3_b.reshape(c, 1, 1)
    return FeatureMap(mixed, "shallow")


def dual_branch_block(shallow: FeatureMap,
                      p: DualBranchBlockParams,
                      need_mamba_out: bool = True
                      ) -> tuple[FeatureMap | None, FeatureMap | None]:
    """Run both branch stacks with the inter-branch injections.

    Order matters: the second attention layer consumes the blend of both
    first-layer outputs, and the second scan layer consumes the channel mix
    of the first scan output with that second attention output. Disabled
    branches yield None; ``need_mamba_out=False`` skips the second scan
    layer when its output would be discarded anyway.
    """
    _require(shallow, "shallow")
    x = shallow.data

    trans1 = FeatureMap(transformer_block(x, p.transformer1), "transformer") \
        if p.transformer1 is not None else None
    mamba1 = FeatureMap(_run_mamba(x, p.mamba1), "mamba") \
        if p.mamba1 is not None else None

    interact = p.interaction is not None and trans1 is not None \
        and mamba1 is not None

    trans_out = None
    if trans1 is not None:
        second_in = positional_blend(mamba1, trans1, p.interaction) \
            if interact else FeatureMap(trans1.data, "shallow")
        trans_out = FeatureMap(transformer_block(second_in.data, p.transformer2),
                               "transformer")

    mamba_out = None
    if mamba1 is not None and need_mamba_out:
        if interact:
            second_in = channel_mix(mamba1, trans_out, p.interaction)
        else:
            second_in = FeatureMap(mamba1.data, "shallow")
        mamba_out = FeatureMap(_run_mamba(second_in.data, p.mamba2), "mamba")

    return trans_out, mamba_out
