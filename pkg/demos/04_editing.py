"""
Texture transfer, interpolation and region editing
==================================================

Shape lives in the parsing map and appearance lives in the style table, so
the two can be changed independently. Run ``03_pose_transfer.py`` first;
this script reuses its checkpoints.
"""
from pathlib import Path

import torch

import personsynth as ps
from personsynth import data
from personsynth.editing import EditScript, RepaintParsing

ckpts = Path("demo_output/03")
out = Path("demo_output/04")
out.mkdir(parents=True, exist_ok=True)

syn = ps.Synthesizer.from_checkpoints(ckpts / "ckpt_parsing", ckpts / "ckpt_image")
pair = data.make_synthetic_pair(seed=0)
other = data.make_synthetic_pair(seed=5)
src = (pair.source_image, pair.source_parsing, pair.source_keypoints, pair.target_keypoints)

base, S_g = syn.transfer_pose(*src)

# Copy the upper-clothes code from another person.
swapped, _ = syn.transfer_texture(*src, other.source_image, other.source_parsing, ["upper_clothes"])
inside = S_g == data.region_index("upper_clothes")
delta = (swapped - base).abs().sum(0)
print(f"mean change inside upper clothes {delta[inside].mean():.3f}, outside {delta[~inside].mean():.3f}")
data.save_image(out / "texture_transfer.png", swapped)

# Blend one region between two references. The end points are the pure transfers.
ref_a = (pair.source_image, pair.source_parsing)
ref_b = (other.source_image, other.source_parsing)
alphas = [0.0, 0.25, 0.5, 0.75, 1.0]
frames, _ = syn.interpolate(*src, ref_a, ref_b, "upper_clothes", alphas)
for a, img in zip(alphas, frames):
    data.save_image(out / f"blend_{a:.2f}.png", img)
print("interpolation frames:", len(frames))

# Repaint the lower half of the legs region as pants and re-render.
mask = torch.zeros_like(S_g, dtype=torch.bool)
mask[40:] = S_g[40:] == data.region_index("leg")
edited, S_e = syn.edit(*src, EditScript([RepaintParsing(mask, data.region_index("pants"))]))
print("repainted pixels:", int(mask.sum()))
data.save_image(out / "edited.png", edited)
data.save_parsing(out / "edited_parsing.png", S_e)
