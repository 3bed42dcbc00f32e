"""Per-region normalization and spatial-aware normalization.

Both modulate a parameter-free instance-normalized feature as
``(1 + scale) * x_hat + bias``. Per-region normalization broadcasts one
(scale, bias) pair per semantic region; spatial-aware normalization warps
source-aligned scale/bias maps onto the target through a feature correlation.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import DownBlock
from .data import N_JOINTS, N_REGIONS
from .style import STYLE_DIM, downsample_mask

CONTEXT_IN_CHANNELS = 3 + N_REGIONS + N_REGIONS + N_JOINTS
EPS = 1e-8


def instance_norm(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Per-sample, per-channel zero mean / unit variance over space."""
    if x.dim() == 3:
        return F.instance_norm(x.unsqueeze(0), eps=eps).squeeze(0)
    return F.instance_norm(x, eps=eps)


class ContextEncoder(nn.Module):
    """Encodes concat(I_s, S_s, S_g, P_t) to a 256-channel feature at quarter resolution."""

    def __init__(self, widths=(32, 64), out_channels=STYLE_DIM):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(CONTEXT_IN_CHANNELS, widths[0], 3, padding=1), nn.LeakyReLU(0.2))
        self.down = nn.Sequential(DownBlock(widths[0], widths[1]), DownBlock(widths[1], out_channels))

    @staticmethod
    def concat_inputs(I_s, S_s, S_g, P_t):
        if not (I_s.shape[-2:] == S_s.shape[-2:] == S_g.shape[-2:] == P_t.shape[-2:]):
            raise ValueError("context inputs must share H x W")
        return torch.cat([I_s, S_s, S_g, P_t], dim=-3)

    def forward(self, I_s, S_s, S_g, P_t):
        return self.down(self.stem(self.concat_inputs(I_s, S_s, S_g, P_t)))


class PerRegionNorm(nn.Module):
    """Two fully connected layers map each region's style code to a channel scale and bias."""

    def __init__(self, channels=STYLE_DIM, code_dim=STYLE_DIM, zero_init=False):
        super().__init__()
        self.fc_gamma = nn.Linear(code_dim, channels)
        self.fc_beta = nn.Linear(code_dim, channels)
        if zero_init:
            for fc in (self.fc_gamma, self.fc_beta):
                nn.init.zeros_(fc.weight)
                nn.init.zeros_(fc.bias)

    def forward(self, F_p, codes, S_g):
        # every region of S_g has a row: the table always carries all N regions
        assert codes.shape[-2] == S_g.shape[-3] == N_REGIONS, "style table must cover every region"
        seg = downsample_mask(S_g, F_p.shape[-2:]).to(F_p.dtype)
        scale = torch.einsum("...nc,...nhw->...chw", self.fc_gamma(codes), seg)
        bias = torch.einsum("...nc,...nhw->...chw", self.fc_beta(codes), seg)
        return (1 + scale) * instance_norm(F_p) + bias


def per_region_normalize(F_p, codes, S_g, prn: PerRegionNorm):
    return prn(F_p, codes, S_g)


class SpatialModulation(nn.Module):
    """1x1 convolutions extracting spatial scale and bias maps from the source feature."""

    def __init__(self, in_channels=STYLE_DIM, channels=STYLE_DIM):
        super().__init__()
        self.to_gamma = nn.Conv2d(in_channels, channels, 1)
        self.to_beta = nn.Conv2d(in_channels, channels, 1)

    def forward(self, F_i):
        return self.to_gamma(F_i), self.to_beta(F_i)


def _flatten_positions(x):
    # [B,] C x h x w -> [B,] L x C
    return x.flatten(-2).transpose(-1, -2)


def compute_correlation(F_n: torch.Tensor, src_feat: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Cosine similarity between channel-centralized target and source positions.

    Returns ``[B,] L x L`` with rows indexing target positions and columns
    source positions.
    """
    if F_n.shape != src_feat.shape:
        raise ValueError(f"feature shapes differ: {tuple(F_n.shape)} vs {tuple(src_feat.shape)}")
    if not (torch.isfinite(F_n).all() and torch.isfinite(src_feat).all()):
        raise ValueError("non-finite features in correlation")
    a = _flatten_positions(F_n)
    b = _flatten_positions(src_feat)
    a = a - a.mean(dim=-1, keepdim=True)
    b = b - b.mean(dim=-1, keepdim=True)
    dots = a @ b.transpose(-1, -2)
    norms = a.norm(dim=-1).unsqueeze(-1) * b.norm(dim=-1).unsqueeze(-2)
    return (dots / (norms + eps)).clamp(-1.0, 1.0)


def warp_weights(M: torch.Tensor, tau: float) -> torch.Tensor:
    if not tau > 0:
        raise ValueError("temperature must be positive")
    return torch.softmax(M / tau, dim=-1)


def spatial_aware_normalize(F_n, gamma, beta, M, tau=0.01):
    """Warp ``gamma``/``beta`` from source to target positions with ``softmax(M / tau)`` and modulate."""
    if not (torch.isfinite(gamma).all() and torch.isfinite(beta).all()):
        raise ValueError("non-finite spatial modulation")
    Wt = warp_weights(M, tau)
    shape = F_n.shape
    g = (Wt @ _flatten_positions(gamma)).transpose(-1, -2).reshape(shape)
    b = (Wt @ _flatten_positions(beta)).transpose(-1, -2).reshape(shape)
    return (1 + g) * instance_norm(F_n) + b
