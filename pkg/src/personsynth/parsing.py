"""Stage one: predict the target-pose parsing map from (source pose, target pose, source parsing)."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import DownBlock, GatedConv2d, UpBlock
from .data import N_JOINTS, N_REGIONS, one_hot


class ParsingGenerator(nn.Module):
    def __init__(self, widths=(32, 64, 128, 128), n_gated=4, up_mode="nearest"):
        super().__init__()
        if len(widths) != 4:
            raise ValueError("the parsing encoder has exactly four down-sampling layers")
        in_ch = 2 * N_JOINTS + N_REGIONS
        chans = [in_ch, *widths]
        self.encoder = nn.Sequential(*[DownBlock(chans[i], chans[i + 1]) for i in range(4)])
        self.deformer = nn.Sequential(*[GatedConv2d(widths[-1], widths[-1], 3) for _ in range(n_gated)])
        dec = [widths[-1], *reversed(widths)]
        self.decoder = nn.Sequential(*[UpBlock(dec[i], dec[i + 1], up_mode) for i in range(4)])
        self.head = nn.Conv2d(dec[-1], N_REGIONS, 1)

    def forward(self, P_s, P_t, S_s):
        if not (P_s.shape[-2:] == P_t.shape[-2:] == S_s.shape[-2:]):
            raise ValueError("pose heatmaps and parsing map must share H x W")
        H, W = S_s.shape[-2:]
        if H % 16 or W % 16:
            raise ValueError("parsing generator needs H and W divisible by 16")
        F_s = self.encoder(torch.cat([P_s, P_t, S_s], dim=-3))
        F_d = self.deformer(F_s)
        return self.head(self.decoder(F_d))


def parsing_to_labels(logits: torch.Tensor) -> torch.Tensor:
    return logits.argmax(dim=-3)


def parsing_to_onehot(logits: torch.Tensor) -> torch.Tensor:
    return one_hot(parsing_to_labels(logits))


def parsing_loss(logits, S_t, lambda_pl=5.0, return_terms=False):
    """Cross-entropy (with the 1/N category prefactor) plus ``lambda_pl`` times the L1 term.

    Both terms are means over pixels; the L1 term compares softmax probabilities
    with the one-hot target.
    """
    if logits.shape != S_t.shape:
        raise ValueError(f"logits {tuple(logits.shape)} and target {tuple(S_t.shape)} differ in shape")
    if lambda_pl < 0:
        raise ValueError("lambda_pl must be non-negative")
    if not torch.isfinite(logits).all():
        raise ValueError("non-finite parsing logits")
    n = logits.shape[-3]
    log_p = F.log_softmax(logits, dim=-3)
    cross = -(S_t * log_p).sum(dim=-3).mean() / n
    l1 = (log_p.exp() - S_t).abs().mean()
    total = cross + lambda_pl * l1
    if return_terms:
        return total, {"cross": cross, "l1": l1}
    return total

