"""
PSNR and FID sanity checks
==========================

PSNR is computed on the 0..255 scale; FID compares Gaussian fits of two
embedding sets. Both have closed forms in simple cases.
"""
import math

import numpy as np
import torch

from personsynth import data
from personsynth.features import stub_extractor
from personsynth.metrics import fid, pooled_embedding, psnr

# A uniform offset of 16 grey levels gives MSE 256.
a = torch.zeros(3, 32, 32)
print(f"PSNR for a 16-level offset: {psnr(a, a + 16 / 127.5):.4f} dB "
      f"(closed form {10 * math.log10(255 ** 2 / 256):.4f})")

# Two unit Gaussians whose means differ by delta: FID tends to |delta|^2.
rng = np.random.default_rng(0)
delta = np.full(8, 0.5)
X = rng.normal(size=(10_000, 8))
Y = rng.normal(size=(10_000, 8)) + delta
print(f"FID {fid(X, Y):.4f}, expected {delta @ delta:.4f}")

# On images, the default embedder is the stub network's pooled conv3_1 output.
# These values are only comparable with each other, never with published FID.
fx = stub_extractor(0)
real = torch.stack([data.make_synthetic_pair(s).target_image for s in range(16)])
noisy = (real + 0.3 * torch.randn(real.shape, generator=torch.Generator().manual_seed(1))).clamp(-1, 1)
print(f"FID real vs real  {fid(pooled_embedding(fx, real), pooled_embedding(fx, real)):.4f}")
print(f"FID real vs noisy {fid(pooled_embedding(fx, real), pooled_embedding(fx, noisy)):.4f}")
