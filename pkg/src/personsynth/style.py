"""Per-region style codes extracted from the source image."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import DownBlock, UpBlock
from .data import N_REGIONS

STYLE_DIM = 256
POOL_MODES = ("joint", "global", "local")


class SourceEncoder(nn.Module):
    """Bottleneck encoder: four stride-2 convolutions then two transposed convolutions (net /4)."""

    def __init__(self, widths=(32, 64, 128, 128), up_widths=(128,), out_channels=STYLE_DIM):
        super().__init__()
        chans = [3, *widths]
        self.down = nn.Sequential(*[DownBlock(chans[i], chans[i + 1]) for i in range(4)])
        ups = [widths[-1], *up_widths]
        self.up = nn.Sequential(
            UpBlock(ups[0], ups[1], mode="transpose"),
            nn.ConvTranspose2d(ups[1], out_channels, 4, stride=2, padding=1),
        )
        self.out_channels = out_channels

    def forward(self, img):
        if img.shape[-2] < 16 or img.shape[-1] < 16:
            raise ValueError("source image must be at least 16x16")
        return self.up(self.down(img))


def downsample_mask(mask: torch.Tensor, size) -> torch.Tensor:
    """Nearest-neighbour resize of a (one-hot or soft) region map to ``size``."""
    if tuple(mask.shape[-2:]) == tuple(size):
        return mask
    squeeze = mask.dim() == 3
    m = mask.unsqueeze(0) if squeeze else mask
    m = F.interpolate(m, size=tuple(size), mode="nearest")
    return m.squeeze(0) if squeeze else m


def per_region_pool(F_i: torch.Tensor, S_s: torch.Tensor, mode: str = "joint"):
    """Style table from masked spatial averages of ``F_i``.

    ``F_i`` is ``[B,] C x h x w``, ``S_s`` a one-hot ``[B,] N x H x W`` map that is
    nearest-resized to ``h x w``. Returns ``(codes [B,] N x C, present [B,] N)``.

    ``joint`` falls back to the global spatial mean for regions with no pixels,
    ``local`` leaves them zero, ``global`` uses the global mean for every region.
    """
    if mode not in POOL_MODES:
        raise ValueError(f"pool mode must be one of {POOL_MODES}")
    mask = downsample_mask(S_s, F_i.shape[-2:]).to(F_i.dtype)
    count = mask.sum(dim=(-2, -1))  # [B,] N
    present = count >= 1
    glob = F_i.mean(dim=(-2, -1)).unsqueeze(-2)  # [B,] 1 x C
    glob = glob.expand(*count.shape, F_i.shape[-3])
    if mode == "global":
        return glob.clone(), present
    summed = torch.einsum("...chw,...nhw->...nc", F_i, mask)
    local = summed / count.clamp(min=1).unsqueeze(-1)
    if mode == "local":
        return torch.where(present.unsqueeze(-1), local, torch.zeros_like(local)), present
    return torch.where(present.unsqueeze(-1), local, glob), present


@dataclass
class StyleCodeTable:
    """``codes`` is ``N x C`` (optionally with a leading batch axis), ``present`` is ``N``."""

    codes: torch.Tensor
    present: torch.Tensor

    def __post_init__(self):
        self.present = torch.as_tensor(self.present, dtype=torch.bool)
        if self.codes.shape[-2] != N_REGIONS or self.present.shape[-1] != N_REGIONS:
            raise ValueError(f"style table needs {N_REGIONS} rows")
        if not torch.isfinite(self.codes).all():
            raise ValueError("style table contains non-finite codes")

    def clone(self) -> "StyleCodeTable":
        return StyleCodeTable(self.codes.clone(), self.present.clone())

    def to_json(self) -> str:
        if self.codes.dim() != 2:
            raise ValueError("only unbatched tables serialize to JSON")
        return json.dumps({"codes": self.codes.detach().double().tolist(),
                           "present": [bool(p) for p in self.present.tolist()]})

    @classmethod
    def from_json(cls, text: str) -> "StyleCodeTable":
        data = json.loads(text)
        if set(data) != {"codes", "present"}:
            raise ValueError("style table JSON needs exactly the keys 'codes' and 'present'")
        return cls(torch.tensor(data["codes"], dtype=torch.float32), torch.tensor(data["present"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "StyleCodeTable":
        return cls.from_json(Path(path).read_text())
