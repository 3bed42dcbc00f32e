"""PSNR and Frechet distance between embedding sets."""
from __future__ import annotations

import numpy as np
import torch

PSNR_CAP = 99.0
COV_EPS = 1e-6


def psnr(a: torch.Tensor, b: torch.Tensor, cap: float = PSNR_CAP) -> float:
    """PSNR on the 0..255 scale for images in [-1, 1]. Identical images give ``cap`` (``inf`` if cap is None)."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    x = (a.double() + 1) * 127.5
    y = (b.double() + 1) * 127.5
    mse = float(((x - y) ** 2).mean())
    if mse == 0:
        return float("inf") if cap is None else float(cap)
    value = 10 * np.log10(255.0 ** 2 / mse)
    return value if cap is None else min(value, float(cap))


def _trace_sqrt_product(s1: np.ndarray, s2: np.ndarray) -> float:
    """``Tr((s1 s2)^{1/2})`` via ``(s1^{1/2} s2 s1^{1/2})``, which is symmetric PSD."""
    w, v = np.linalg.eigh(s1)
    root = (v * np.sqrt(np.clip(w, 0, None))) @ v.T
    m = root @ s2 @ root
    m = (m + m.T) / 2
    ev = np.linalg.eigvalsh(m)
    return float(np.sqrt(np.clip(ev, 0, None)).sum())


def gaussian_stats(x) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("embedding set must be n_samples x d with n_samples >= 2")
    return x.mean(axis=0), np.cov(x, rowvar=False).reshape(x.shape[1], x.shape[1])


def frechet_distance(mu1, s1, mu2, s2, eps: float = COV_EPS) -> float:
    d = len(mu1)
    s1 = s1 + eps * np.eye(d)
    s2 = s2 + eps * np.eye(d)
    diff = mu1 - mu2
    value = diff @ diff + np.trace(s1) + np.trace(s2) - 2 * _trace_sqrt_product(s1, s2)
    return max(float(value), 0.0)


def fid(real, fake) -> float:
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    if real.ndim != 2 or fake.ndim != 2 or real.shape[1] != fake.shape[1]:
        raise ValueError(f"embedding dimensions differ: {real.shape} vs {fake.shape}")
    return frechet_distance(*gaussian_stats(real), *gaussian_stats(fake))


def pooled_embedding(fx, images: torch.Tensor, tap: str = "conv3_1") -> np.ndarray:
    """Global-average-pooled activations of one extractor tap, ``n x C``."""
    with torch.no_grad():
        f = fx.extract(images, [tap])[tap]
    return f.mean(dim=(-2, -1)).double().numpy()
