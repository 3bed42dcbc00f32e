"""Convolutional building blocks shared by the generators and the discriminator."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

LEAKY_SLOPE = 0.2


def make_activation(name: str = "lrelu") -> nn.Module:
    if name == "lrelu":
        return nn.LeakyReLU(LEAKY_SLOPE)
    if name == "relu":
        return nn.ReLU()
    if name == "identity":
        return nn.Identity()
    if name == "tanh":
        return nn.Tanh()
    raise ValueError(f"unknown activation {name!r}")


def make_norm(name: str, channels: int) -> nn.Module:
    if name == "instance":
        return nn.InstanceNorm2d(channels, affine=False)
    if name == "none":
        return nn.Identity()
    raise ValueError(f"unknown norm {name!r}")


def _check_spatial(x: torch.Tensor, kernel) -> None:
    kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
    if x.shape[-2] < kh or x.shape[-1] < kw:
        raise ValueError(f"input of spatial size {tuple(x.shape[-2:])} is smaller than kernel {(kh, kw)}")


def gated_conv(x, weight_u, bias_u, weight_v, bias_v, stride=1, activation=None):
    """``act(conv_u(x)) * sigmoid(conv_v(x))`` with zero same-padding.

    Both filter banks must share kernel shape; kernel sizes must be odd.
    """
    if weight_u.shape != weight_v.shape:
        raise ValueError(f"feature and gate filters differ in shape: {tuple(weight_u.shape)} vs {tuple(weight_v.shape)}")
    if x.shape[-3] != weight_u.shape[1]:
        raise ValueError(f"expected {weight_u.shape[1]} input channels, got {x.shape[-3]}")
    kh, kw = weight_u.shape[-2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("gated convolution needs odd kernel sizes")
    pad = (kh // 2, kw // 2)
    feat = F.conv2d(x, weight_u, bias_u, stride=stride, padding=pad)
    gate = torch.sigmoid(F.conv2d(x, weight_v, bias_v, stride=stride, padding=pad))
    act = activation if activation is not None else (lambda t: F.leaky_relu(t, LEAKY_SLOPE))
    return act(feat) * gate


class GatedConv2d(nn.Module):
    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, activation="lrelu"):
        super().__init__()
        if isinstance(kernel_size, int):
            kernel_size = (kernel_size, kernel_size)
        if kernel_size[0] % 2 == 0 or kernel_size[1] % 2 == 0:
            raise ValueError("gated convolution needs odd kernel sizes")
        self.stride = stride
        self.conv_u = nn.Conv2d(in_channels, out_channels, kernel_size, stride, padding=0)
        self.conv_v = nn.Conv2d(in_channels, out_channels, kernel_size, stride, padding=0)
        nn.init.zeros_(self.conv_v.bias)  # initial gates sit at 0.5
        self.activation = make_activation(activation)

    def gate(self, x):
        pad = (self.conv_v.kernel_size[0] // 2, self.conv_v.kernel_size[1] // 2)
        return torch.sigmoid(F.conv2d(x, self.conv_v.weight, self.conv_v.bias, self.stride, pad))

    def forward(self, x):
        return gated_conv(x, self.conv_u.weight, self.conv_u.bias, self.conv_v.weight, self.conv_v.bias,
                          self.stride, self.activation)


class DownBlock(nn.Module):
    """Stride-2 4x4 convolution, optional instance norm, activation. Halves H and W."""

    def __init__(self, in_channels, out_channels, norm="instance", activation="lrelu"):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 4, stride=2, padding=1)
        self.norm = make_norm(norm, out_channels)
        self.act = make_activation(activation)

    def forward(self, x):
        _check_spatial(x, 4)
        return self.act(self.norm(self.conv(x)))


class UpBlock(nn.Module):
    """Doubles H and W, either by a 4x4 transposed convolution or nearest upsampling + 3x3 conv."""

    def __init__(self, in_channels, out_channels, mode="nearest", norm="instance", activation="lrelu"):
        super().__init__()
        if mode == "transpose":
            self.conv = nn.ConvTranspose2d(in_channels, out_channels, 4, stride=2, padding=1)
        elif mode == "nearest":
            self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        else:
            raise ValueError(f"unknown upsampling mode {mode!r}")
        self.mode = mode
        self.norm = make_norm(norm, out_channels)
        self.act = make_activation(activation)

    def forward(self, x):
        if self.mode == "nearest":
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        return self.act(self.norm(self.conv(x)))
