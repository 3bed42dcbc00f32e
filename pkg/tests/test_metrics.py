import math

import numpy as np
import pytest
import torch

from personsynth.features import stub_extractor
from personsynth.metrics import fid, frechet_distance, gaussian_stats, pooled_embedding, psnr


def test_psnr_identical_is_capped():
    a = torch.rand(3, 8, 8)
    assert psnr(a, a) == 99.0
    assert psnr(a, a, cap=None) == math.inf


def test_psnr_closed_form_offset():
    a = torch.zeros(3, 8, 8)
    b = a + 16 / 127.5  # 16 units on the 0..255 scale
    expected = 10 * math.log10(65025 / 256)
    assert abs(psnr(a, b) - expected) < 1e-6
    assert abs(psnr(a, b) - 24.05) < 0.01
    assert psnr(a, b) == psnr(b, a)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(torch.zeros(3, 4, 4), torch.zeros(3, 4, 5))


def test_psnr_decreases_with_noise():
    g = torch.Generator().manual_seed(0)
    a = torch.rand(3, 32, 32, generator=g) * 2 - 1
    vals = [psnr(a, a + s * torch.randn(a.shape, generator=g)) for s in (0.01, 0.05, 0.2, 0.5)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_fid_identical_sets():
    X = np.random.default_rng(0).normal(size=(200, 8))
    assert fid(X, X) < 1e-6


def test_fid_mean_shift_matches_closed_form():
    rng = np.random.default_rng(1)
    delta = np.array([1.0, -0.5, 0.5, 0.0, 1.0, 0.25, -1.0, 0.5])
    X = rng.normal(size=(10_000, 8))
    Y = rng.normal(size=(10_000, 8)) + delta
    target = float(delta @ delta)
    assert abs(fid(X, Y) - target) / target < 0.05


def test_fid_symmetric_and_nonnegative():
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(50, 4)), rng.normal(size=(60, 4)) * 2
    assert fid(X, Y) == pytest.approx(fid(Y, X), rel=1e-9)
    assert fid(X, Y) >= 0


def test_fid_low_rank_is_regularized():
    X = np.random.default_rng(3).normal(size=(3, 16))
    assert np.isfinite(fid(X, X + 0.1)) and fid(X, X) < 1e-6


def test_fid_matches_scipy_sqrtm():
    scipy_linalg = pytest.importorskip("scipy.linalg")
    rng = np.random.default_rng(4)
    X, Y = rng.normal(size=(100, 5)), rng.normal(size=(100, 5)) @ rng.normal(size=(5, 5))
    m1, s1 = gaussian_stats(X)
    m2, s2 = gaussian_stats(Y)
    e = 1e-6 * np.eye(5)
    ref = float((m1 - m2) @ (m1 - m2) + np.trace(s1 + s2 + 2 * e)
                - 2 * np.real(np.trace(scipy_linalg.sqrtm((s1 + e) @ (s2 + e)))))
    assert frechet_distance(m1, s1, m2, s2) == pytest.approx(ref, rel=1e-6, abs=1e-8)


def test_fid_dimension_mismatch():
    with pytest.raises(ValueError):
        fid(np.zeros((4, 3)), np.zeros((4, 2)))


def test_pooled_embedding_shape():
    emb = pooled_embedding(stub_extractor(0), torch.zeros(5, 3, 32, 32))
    assert emb.shape == (5, 256) and emb.dtype == np.float64
