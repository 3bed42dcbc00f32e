"""Frozen VGG-style feature network with named taps.

Two constructions share one module: ``stub_extractor`` builds a narrow,
deterministic random-weight network (hermetic tests and desk-scale training),
``vgg19_extractor`` loads real VGG-19 convolution weights from a local
torchvision-format state dict.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

# (block, number of convolutions) of VGG-19
VGG19_LAYOUT = ((1, 2), (2, 2), (3, 4), (4, 4), (5, 4))
VGG19_WIDTHS = {b: w for b, w in zip(range(1, 6), (64, 128, 256, 512, 512))}

CORRESPONDENCE_TAP = "conv3_1"
PERCEPTUAL_TAPS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1")
STYLE_TAPS = ("relu2_2", "relu3_4", "relu4_4", "relu5_2")
REQUIRED_TAPS = (CORRESPONDENCE_TAP,) + tuple(sorted(set(PERCEPTUAL_TAPS + STYLE_TAPS)))

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class FeatureExtractor(nn.Module):
    """VGG layout; ``widths`` maps ``"conv{b}_{i}"`` to its output channel count."""

    def __init__(self, widths: dict, layout=VGG19_LAYOUT, name="custom"):
        super().__init__()
        self.name = name
        self.layer_names = []
        self.convs = nn.ModuleDict()
        in_ch = 3
        for block, n in layout:
            for i in range(1, n + 1):
                key = f"conv{block}_{i}"
                self.convs[key] = nn.Conv2d(in_ch, widths[key], 3, padding=1)
                self.layer_names.append(key)
                in_ch = widths[key]
        self.taps = {}
        for key in self.layer_names:
            block = int(key[4])
            stride = 2 ** (block - 1)
            self.taps[key] = (self.convs[key].out_channels, stride)
            self.taps["relu" + key[4:]] = (self.convs[key].out_channels, stride)
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # permanently frozen
        return super().train(False)

    def _check(self, taps):
        unknown = [t for t in taps if t not in self.taps]
        if unknown:
            raise KeyError(f"unknown feature taps {unknown}; available: {sorted(self.taps)}")

    def extract(self, img: torch.Tensor, taps) -> dict:
        """Activations at ``taps`` for an image in [-1, 1] (renormalized internally).

        Gradients flow to ``img`` (losses need them) but never to the weights.
        """
        taps = list(taps)
        self._check(taps)
        wanted = set(taps)
        x = ((img + 1) / 2 - self.mean) / self.std
        out = {}
        block = 1
        for key in self.layer_names:
            b = int(key[4])
            if b != block:
                x = F.max_pool2d(x, 2)
                block = b
            x = self.convs[key](x)
            if key in wanted:
                out[key] = x
            x = F.relu(x)
            relu_key = "relu" + key[4:]
            if relu_key in wanted:
                out[relu_key] = x
            if len(out) == len(wanted):
                break
        return {t: out[t] for t in taps}

    def forward(self, img, taps=(CORRESPONDENCE_TAP,)):
        return self.extract(img, taps)


def stub_widths(base: int = 16) -> dict:
    widths = {}
    for block, n in VGG19_LAYOUT:
        for i in range(1, n + 1):
            widths[f"conv{block}_{i}"] = {1: base, 2: 2 * base, 3: 2 * base, 4: 4 * base, 5: 4 * base}[block]
    widths["conv3_1"] = 256  # the correspondence tap keeps the real channel count
    return widths


def stub_extractor(seed: int = 0, base: int = 16) -> FeatureExtractor:
    """Narrow random-weight network; bit-reproducible for a given seed."""
    fx = FeatureExtractor(stub_widths(base), name=f"stub-{seed}")
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for conv in fx.convs.values():
            fan_in = conv.in_channels * 9
            conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
            conv.bias.zero_()
    return fx


def vgg19_extractor(state_dict_path) -> FeatureExtractor:
    """Load VGG-19 conv weights from a torchvision ``vgg19`` (or ``vgg19.features``) state dict."""
    widths = {}
    for block, n in VGG19_LAYOUT:
        for i in range(1, n + 1):
            widths[f"conv{block}_{i}"] = VGG19_WIDTHS[block]
    fx = FeatureExtractor(widths, name="vgg19")
    state = torch.load(state_dict_path, map_location="cpu", weights_only=True)
    weights = sorted(
        (int(k.split(".")[-2]), v) for k, v in state.items()
        if k.endswith(".weight") and (k.startswith("features.") or k.split(".")[0].isdigit()))
    biases = sorted(
        (int(k.split(".")[-2]), v) for k, v in state.items()
        if k.endswith(".bias") and (k.startswith("features.") or k.split(".")[0].isdigit()))
    if len(weights) < len(fx.layer_names):
        raise ValueError(f"{state_dict_path}: found {len(weights)} conv layers, need {len(fx.layer_names)}")
    with torch.no_grad():
        for key, (_, w), (_, b) in zip(fx.layer_names, weights, biases):
            conv = fx.convs[key]
            if w.shape != conv.weight.shape:
                raise ValueError(f"{state_dict_path}: {key} expects {tuple(conv.weight.shape)}, got {tuple(w.shape)}")
            conv.weight.copy_(w)
            conv.bias.copy_(b)
    return fx


def build_extractor(spec: str = "stub", seed: int = 0) -> FeatureExtractor:
    """``"stub"`` or a filesystem path to VGG-19 weights."""
    if spec == "stub":
        return stub_extractor(seed)
    return vgg19_extractor(spec)


def gram(f: torch.Tensor) -> torch.Tensor:
    """``A A^T / (C H W)`` for the ``C x HW`` reshape of ``f`` (batched or not)."""
    C, H, W = f.shape[-3:]
    a = f.reshape(*f.shape[:-3], C, H * W)
    return a @ a.transpose(-1, -2) / (C * H * W)
