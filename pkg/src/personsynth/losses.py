"""Image-generator objective terms."""
from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from .features import PERCEPTUAL_TAPS, STYLE_TAPS, gram

LOGIT_CLAMP = 20.0


@dataclass
class LossWeights:
    lambda_c: float = 1.0
    lambda_l: float = 5.0
    lambda_p: float = 1.0
    lambda_s: float = 100.0
    lambda_a: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not (v >= 0 and v != float("inf")):
                raise ValueError(f"{f.name} must be finite and non-negative, got {v}")
            setattr(self, f.name, v)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def correspondence_loss(F_n, target_tap):
    _same_shape(F_n, target_tap)
    return ((F_n - target_tap) ** 2).mean()


def reconstruction_l1(I_g, I_t):
    _same_shape(I_g, I_t)
    return (I_g - I_t).abs().mean()


def perceptual_loss(I_g, I_t, fx, taps=PERCEPTUAL_TAPS, feats_t=None):
    feats_g = fx.extract(I_g, taps)
    feats_t = fx.extract(I_t, taps) if feats_t is None else feats_t
    return sum((feats_g[t] - feats_t[t]).abs().mean() for t in taps)


def style_loss(I_g, I_t, fx, taps=STYLE_TAPS, feats_t=None):
    feats_g = fx.extract(I_g, taps)
    feats_t = fx.extract(I_t, taps) if feats_t is None else feats_t
    return sum(style_loss_from_features(feats_g[t], feats_t[t]) for t in taps)


def style_loss_from_features(f_g, f_t):
    return (gram(f_t) - gram(f_g)).abs().mean()


def _log_sigmoid(logits):
    return F.logsigmoid(logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))


def discriminator_loss(real_logits, fake_logits):
    """``-E[log D(real)] - E[log(1 - D(fake))]``."""
    if not (torch.isfinite(real_logits).all() and torch.isfinite(fake_logits).all()):
        raise ValueError("non-finite discriminator logits")
    return -_log_sigmoid(real_logits).mean() - _log_sigmoid(-fake_logits).mean()


def generator_adv_loss(fake_logits):
    """Non-saturating ``-E[log D(fake)]``."""
    if not torch.isfinite(fake_logits).all():
        raise ValueError("non-finite discriminator logits")
    return -_log_sigmoid(fake_logits).mean()


def adversarial_losses(D, I_g, I_t):
    """``(d_loss, g_loss)``; the generated image is detached for ``d_loss``."""
    d_loss = discriminator_loss(D(I_t), D(I_g.detach()))
    g_loss = generator_adv_loss(D(I_g))
    return d_loss, g_loss


def total_image_loss(cor, l1, per, style, adv, w: LossWeights):
    return w.lambda_c * cor + w.lambda_l * l1 + w.lambda_p * per + w.lambda_s * style + w.lambda_a * adv
