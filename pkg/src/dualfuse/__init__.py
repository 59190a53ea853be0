"""Dual-branch image fusion: channel-attention transformer + selective-scan
state-space branches with hierarchical interaction, on a self-contained
float64 autodiff engine."""

__version__ = "0.1.0"
