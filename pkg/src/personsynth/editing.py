"""Texture transfer, texture interpolation and region editing.

Style edits are pure operations on ``StyleCodeTable`` rows; region edits
repaint the parsing map fed to the image generator.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import torch
from PIL import Image

from .data import N_REGIONS, DataError, region_index, validate_parsing
from .style import StyleCodeTable


def _region(r) -> int:
    idx = region_index(r) if isinstance(r, str) else int(r)
    if not 0 <= idx < N_REGIONS:
        raise ValueError(f"region index {r!r} outside 0..{N_REGIONS - 1}")
    return idx


def _check_pair(a: StyleCodeTable, b: StyleCodeTable):
    if a.codes.shape != b.codes.shape:
        raise ValueError(f"style tables differ in shape: {tuple(a.codes.shape)} vs {tuple(b.codes.shape)}")


def transfer_texture(base: StyleCodeTable, ref: StyleCodeTable, regions) -> StyleCodeTable:
    """Copy the rows listed in ``regions`` from ``ref`` into a copy of ``base``."""
    _check_pair(base, ref)
    out = base.clone()
    for r in {_region(r) for r in regions}:
        out.codes[..., r, :] = ref.codes[..., r, :]
        out.present[..., r] = ref.present[..., r]
    return out


def interpolate_texture(table_1: StyleCodeTable, table_2: StyleCodeTable, region, alpha: float) -> StyleCodeTable:
    """Blend one region's code: ``(1 - alpha) * t1 + alpha * t2``; other rows come from ``table_1``."""
    _check_pair(table_1, table_2)
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    r = _region(region)
    out = table_1.clone()
    out.codes[..., r, :] = (1 - alpha) * table_1.codes[..., r, :] + alpha * table_2.codes[..., r, :]
    out.present[..., r] = table_1.present[..., r] | table_2.present[..., r]
    return out


@dataclass(frozen=True)
class ReplaceRegionStyle:
    region: int
    source: StyleCodeTable


@dataclass(frozen=True)
class BlendRegionStyle:
    region: int
    table_a: StyleCodeTable
    table_b: StyleCodeTable
    alpha: float


@dataclass(frozen=True)
class RepaintParsing:
    mask: torch.Tensor  # bool H x W
    new_label: int


Edit = Union[ReplaceRegionStyle, BlendRegionStyle, RepaintParsing]


@dataclass
class EditScript:
    edits: list

    def __post_init__(self):
        for e in self.edits:
            if isinstance(e, RepaintParsing):
                _region(e.new_label)
            elif isinstance(e, BlendRegionStyle):
                _region(e.region)
                if not 0.0 <= e.alpha <= 1.0:
                    raise ValueError(f"alpha must lie in [0, 1], got {e.alpha}")
            elif isinstance(e, ReplaceRegionStyle):
                _region(e.region)
            else:
                raise TypeError(f"unknown edit {e!r}")

    def repaints(self):
        return [e for e in self.edits if isinstance(e, RepaintParsing)]

    def style_edits(self):
        return [e for e in self.edits if not isinstance(e, RepaintParsing)]


def edit_region(parsing: torch.Tensor, script: EditScript) -> torch.Tensor:
    """Apply repaint edits in order (later edits win where masks overlap)."""
    out = validate_parsing(parsing).clone()
    for e in script.repaints():
        mask = torch.as_tensor(e.mask, dtype=torch.bool)
        if mask.shape != out.shape:
            raise ValueError(f"repaint mask {tuple(mask.shape)} does not match parsing map {tuple(out.shape)}")
        out[mask] = _region(e.new_label)
    return validate_parsing(out)


def apply_style_edits(table: StyleCodeTable, script: EditScript) -> StyleCodeTable:
    out = table
    for e in script.style_edits():
        if isinstance(e, ReplaceRegionStyle):
            out = transfer_texture(out, e.source, [e.region])
        else:
            blended = interpolate_texture(e.table_a, e.table_b, e.region, e.alpha)
            out = transfer_texture(out, blended, [e.region])
    return out


def load_mask(path) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return torch.from_numpy(arr > 0)


def load_edit_script(path) -> EditScript:
    """JSON ``{"edits": [...]}``; relative paths resolve against the script's directory.

    Edit forms::

        {"op": "repaint_parsing", "mask": "mask.png", "label": "pants"}
        {"op": "replace_region_style", "region": "upper_clothes", "source": "ref_style.json"}
        {"op": "blend_region_style", "region": "hair", "table_a": "a.json", "table_b": "b.json", "alpha": 0.5}
    """
    path = Path(path)
    base = path.parent
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(data, dict) or not isinstance(data.get("edits"), list):
        raise DataError(f"{path}: expected an object with an 'edits' list")
    edits = []
    for n, item in enumerate(data["edits"]):
        op = item.get("op")
        try:
            if op == "repaint_parsing":
                edits.append(RepaintParsing(load_mask(base / item["mask"]), _region(item["label"])))
            elif op == "replace_region_style":
                edits.append(ReplaceRegionStyle(_region(item["region"]), StyleCodeTable.load(base / item["source"])))
            elif op == "blend_region_style":
                edits.append(BlendRegionStyle(_region(item["region"]), StyleCodeTable.load(base / item["table_a"]),
                                              StyleCodeTable.load(base / item["table_b"]), float(item["alpha"])))
            else:
                raise DataError(f"unknown op {op!r}")
        except KeyError as e:
            raise DataError(f"{path}: edit {n} ({op}) is missing key {e}") from None
    return EditScript(edits)
