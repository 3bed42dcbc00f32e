"""Stage two: render the target image from the source image, parsing maps, target pose and style table."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import UpBlock
from .norm import ContextEncoder, PerRegionNorm, SpatialModulation, compute_correlation, spatial_aware_normalize
from .style import STYLE_DIM, SourceEncoder, StyleCodeTable, per_region_pool

# feature maps live at 1/4 of the image resolution
FEATURE_STRIDE = 4


class Decoder(nn.Module):
    """``n_up`` upsampling blocks then a 3x3 projection to RGB with tanh.

    With fewer than two up blocks the remaining factor is made up by nearest
    upsampling before the projection, so ``n_up=0`` is a single-layer decoder.
    """

    def __init__(self, in_channels=STYLE_DIM, widths=(128, 64), n_up=2, up_mode="nearest"):
        super().__init__()
        if not 0 <= n_up <= 2:
            raise ValueError("decoder supports 0..2 up blocks")
        chans = [in_channels, *widths[:n_up]]
        self.ups = nn.Sequential(*[UpBlock(chans[i], chans[i + 1], up_mode, norm="none") for i in range(n_up)])
        self.rest = FEATURE_STRIDE // (2 ** n_up)
        self.head = nn.Conv2d(chans[-1], 3, 3, padding=1)

    def forward(self, x):
        x = self.ups(x)
        if self.rest > 1:
            x = F.interpolate(x, scale_factor=self.rest, mode="nearest")
        return torch.tanh(self.head(x))


@dataclass
class ImageGenConfig:
    source_widths: tuple = (32, 64, 128, 128)
    source_up_widths: tuple = (128,)
    context_widths: tuple = (32, 64)
    decoder_widths: tuple = (128, 64)
    decoder_ups: int = 2
    pool_mode: str = "joint"  # joint | global | local
    use_san: bool = True
    tau: float = 0.01
    zero_init_prn: bool = False


# ablation presets
PRESETS = {
    "full": {},
    "global-enc": {"pool_mode": "global"},
    "local-enc": {"pool_mode": "local"},
    "wo-sn": {"use_san": False},
}


class ImageGenerator(nn.Module):
    def __init__(self, cfg: ImageGenConfig = None):
        super().__init__()
        cfg = cfg or ImageGenConfig()
        self.cfg = cfg
        self.source_encoder = SourceEncoder(tuple(cfg.source_widths), tuple(cfg.source_up_widths))
        self.context_encoder = ContextEncoder(tuple(cfg.context_widths))
        self.prn = PerRegionNorm(zero_init=cfg.zero_init_prn)
        self.san = SpatialModulation() if cfg.use_san else None
        self.decoder = Decoder(widths=tuple(cfg.decoder_widths), n_up=cfg.decoder_ups)

    def encode_style(self, I_s, S_s):
        """Source feature and its style table ``(F_i, codes, present)``."""
        F_i = self.source_encoder(I_s)
        codes, present = per_region_pool(F_i, S_s, self.cfg.pool_mode)
        return F_i, codes, present

    def style_table(self, I_s, S_s) -> StyleCodeTable:
        _, codes, present = self.encode_style(I_s, S_s)
        return StyleCodeTable(codes, present)

    def forward(self, I_s, S_s, S_g, P_t, codes=None, src_tap=None, return_extras=False):
        """Returns ``(I_g, F_n)``; ``codes`` overrides the source style table when given."""
        H, W = I_s.shape[-2:]
        if H % 16 or W % 16:
            raise ValueError("image generator needs H and W divisible by 16")
        F_i, own_codes, _ = self.encode_style(I_s, S_s)
        if codes is None:
            codes = own_codes
        elif isinstance(codes, StyleCodeTable):
            codes = codes.codes
        if codes.shape[-1] != STYLE_DIM:
            raise ValueError(f"style codes must have {STYLE_DIM} channels")
        F_p = self.context_encoder(I_s, S_s, S_g, P_t)
        F_n = self.prn(F_p, codes, S_g)
        extras = {"F_i": F_i, "F_p": F_p}
        if self.san is not None:
            if src_tap is None:
                raise ValueError("spatial-aware normalization needs the source feature tap")
            M = compute_correlation(F_n, src_tap)
            gamma, beta = self.san(F_i)
            F_g = spatial_aware_normalize(F_n, gamma, beta, M, self.cfg.tau)
            extras["M"] = M
        else:
            F_g = F_n
        I_g = self.decoder(F_g)
        if return_extras:
            return I_g, F_n, extras
        return I_g, F_n


def receptive_field_mask(region_mask: torch.Tensor, decoder: Decoder) -> torch.Tensor:
    """Output pixels a single-layer decoder can change when feature cells in ``region_mask`` change.

    ``region_mask`` is boolean ``h x w`` at feature resolution; only ``n_up=0``
    decoders are supported.
    """
    if len(decoder.ups):
        raise ValueError("receptive-field mask is only defined for the single-layer decoder")
    up = F.interpolate(region_mask[None, None].float(), scale_factor=decoder.rest, mode="nearest")
    k = decoder.head.kernel_size[0]
    grown = F.max_pool2d(up, k, stride=1, padding=k // 2)
    return grown[0, 0] > 0
