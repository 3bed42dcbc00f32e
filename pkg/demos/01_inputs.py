"""
Inputs: synthetic people, pose heatmaps and parsing maps
========================================================

Every model input is built from three things per person: an RGB image,
18 keypoints and an 8-region parsing map. The synthetic generator draws
a blocky figure so the whole pipeline can run without a dataset.
"""
from pathlib import Path

import torch

import personsynth as ps
from personsynth import data

out = Path("demo_output/01")
out.mkdir(parents=True, exist_ok=True)

# One paired sample: the same person (same palette) in two poses.
pair = data.make_synthetic_pair(seed=7, H=64, W=64)
data.save_image(out / "source.png", pair.source_image)
data.save_image(out / "target.png", pair.target_image)

# Region histogram of the source parsing map.
counts = torch.bincount(pair.source_parsing.flatten(), minlength=data.N_REGIONS)
for name, n in zip(data.REGION_NAMES, counts.tolist()):
    print(f"{name:>14s}: {n:5d} px")

# Pose heatmaps: one Gaussian channel per joint, zero for missing joints.
P = data.encode_pose_heatmap(pair.target_keypoints, 64, 64)
print("heatmap stack", tuple(P.shape), "sigma at 64 px:", data.default_sigma(64, 64))
print("joints present:", sum(j is not None for j in pair.target_keypoints.joints))

# Collapse the stack for viewing.
data.save_image(out / "target_pose.png", (P.max(dim=0).values * 2 - 1).expand(3, -1, -1))

# Raw 21-class human-parsing labels map onto the 8 regions via a lookup table;
# left and right legs merge into one region.
table = data.load_relabel_table()
raw = torch.tensor([[16, 17, 5, 13]])
print("raw", raw.tolist(), "->", data.relabel_parsing(raw, table).tolist())

# One-hot encoding is what the networks consume.
S = data.one_hot(pair.source_parsing)
print("one-hot", tuple(S.shape), "sums to one:", bool((S.sum(0) == 1).all()))
print("wrote", sorted(p.name for p in out.iterdir()))
print("package version", ps.__version__)
