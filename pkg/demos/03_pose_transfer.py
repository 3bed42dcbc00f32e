"""
Overfitting one person and transferring the pose
================================================

Stage one predicts the target parsing map from the two poses and the source
parsing. Stage two renders the target image from the source image, both
parsing maps, the target pose and the source style table. Here both are
overfit to a single synthetic pair on the CPU, a few minutes of work.
"""
from pathlib import Path

import personsynth as ps
from personsynth import data
from personsynth.config import load_config
from personsynth.features import stub_extractor
from personsynth.metrics import psnr
from personsynth.training import Trainer

out = Path("demo_output/03")
out.mkdir(parents=True, exist_ok=True)
pair = data.make_synthetic_pair(seed=0)
fx = stub_extractor(seed=0)

# Stage one: parsing generator. A larger learning rate speeds up the overfit.
parsing = Trainer(load_config(overrides=["optim.lr_g=1e-3"]), [pair])
hist = parsing.run(500, until=lambda r: r["parsing"] < 0.1)
print(f"stage 1: {len(hist)} steps, parsing loss {hist[-1]['parsing']:.4f}")

# Stage two: image generator with teacher forcing (the true target parsing as input).
image = Trainer(load_config(overrides=["run.phase=image"]), [pair], fx)
hist = image.run(600, until=lambda r: r["l1"] < 0.04)
print(f"stage 2: {len(hist)} steps, L1 {hist[-1]['l1']:.4f}")

syn = ps.Synthesizer(parsing.pg, image.G, fx)
I_g, S_g = syn.transfer_pose(pair.source_image, pair.source_parsing, pair.source_keypoints, pair.target_keypoints)
agree = (S_g == pair.target_parsing).float().mean().item()
print(f"generated parsing agrees with the truth on {100 * agree:.1f}% of pixels")
print(f"PSNR against the real target: {psnr(I_g, pair.target_image):.2f} dB")

data.save_image(out / "generated.png", I_g)
data.save_parsing(out / "generated_parsing.png", S_g)

# Keep the trained models for the editing demo.
parsing.save(out / "ckpt_parsing")
image.save(out / "ckpt_image")
