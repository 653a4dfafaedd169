"""Mask/complex-residual generator with a TF-Conformer bottleneck.

Tensor layout: spectral planes are ``(B, T, F)``; convolutional features are
``(B, C, T, F)``; the Conformer bottleneck works on ``(B, T, F/2, C)``.
"""

from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .conformer import TFConformer, check_variant
from .errors import ConfigError, ShapeError
from .spectral import DEFAULT_EXPONENT


@dataclass
class GeneratorConfig:
    base_channels: int = 32
    variant: str = "CPq"
    tfc_depth: int = 2
    num_heads: int = 4
    conv_kernel: int = 31
    dilations: tuple = (1, 2, 4, 8)
    exponent: float = DEFAULT_EXPONENT

    def __post_init__(self):
        self.dilations = tuple(self.dilations)
        if self.dilations != (1, 2, 4, 8):
            raise ConfigError(f"dense-block dilations must be (1, 2, 4, 8), got {self.dilations}")
        check_variant(self.variant)
        if self.base_channels < 1 or self.tfc_depth < 1:
            raise ConfigError("base_channels and tfc_depth must be positive")
        if self.base_channels % self.num_heads:
            raise ConfigError("base_channels must be divisible by num_heads")

    def to_dict(self):
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d


def conv_norm_act(in_ch, out_ch, kernel, stride=1, padding=0, dilation=1):
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=padding, dilation=dilation),
        nn.InstanceNorm2d(out_ch, affine=True),
        nn.PReLU(out_ch),
    )


class DilatedDenseNet(nn.Module):
    """Four densely connected 3x3 convs with time dilations 1, 2, 4, 8."""

    def __init__(self, channels, dilations=(1, 2, 4, 8)):
        super().__init__()
        self.layers = nn.ModuleList(
            conv_norm_act(channels * (i + 1), channels, (3, 3), padding=(d, 1), dilation=(d, 1))
            for i, d in enumerate(dilations)
        )

    def forward(self, x):
        skip = x
        for layer in self.layers:
            out = layer(skip)
            skip = torch.cat([out, skip], dim=1)
        return out


def pixel_shuffle_freq(x, r=2):
    """(B, r*C, T, F) -> (B, C, T, r*F); output bin ``r*f + j`` comes from channel group ``j``."""
    b, rc, t, f = x.shape
    if rc % r:
        raise ShapeError(f"{rc} channels not divisible by upscale factor {r}")
    c = rc // r
    return x.reshape(b, r, c, t, f).permute(0, 2, 3, 4, 1).reshape(b, c, t, f * r)


class SubpixelConv(nn.Module):
    def __init__(self, channels, r=2):
        super().__init__()
        self.r = r
        self.conv = nn.Conv2d(channels, channels * r, (1, 3), padding=(0, 1))

    def forward(self, x):
        return pixel_shuffle_freq(self.conv(x), self.r)


class DenseEncoder(nn.Module):
    def __init__(self, channels, dilations, in_channels=3):
        super().__init__()
        self.conv_in = conv_norm_act(in_channels, channels, (1, 1))
        self.dense = DilatedDenseNet(channels, dilations)
        self.conv_down = conv_norm_act(channels, channels, (1, 3), stride=(1, 2), padding=(0, 1))

    def forward(self, x):
        return self.conv_down(self.dense(self.conv_in(x)))


class MaskDecoder(nn.Module):
    def __init__(self, channels, dilations):
        super().__init__()
        self.dense = DilatedDenseNet(channels, dilations)
        self.subpixel = SubpixelConv(channels)
        self.reduce = conv_norm_act(channels, 1, (1, 1))
        self.final_conv = nn.Conv2d(1, 1, (1, 1))
        self.final_act = nn.PReLU(1)

    def forward(self, z):
        h = self.reduce(self.subpixel(self.dense(z)))
        return self.final_act(self.final_conv(h)).squeeze(1)


class ComplexDecoder(nn.Module):
    def __init__(self, channels, dilations):
        super().__init__()
        self.dense = DilatedDenseNet(channels, dilations)
        self.subpixel = SubpixelConv(channels)
        self.reduce = nn.Conv2d(channels, 2, (1, 1))
        self.norm = nn.InstanceNorm2d(2, affine=True)
        self.final_conv = nn.Conv2d(2, 2, (1, 1))

    def forward(self, z):
        h = self.norm(self.reduce(self.subpixel(self.dense(z))))
        out = self.final_conv(h)
        return out[:, 0], out[:, 1]


@dataclass
class EnhancedSpec:
    re: torch.Tensor
    im: torch.Tensor
    masked_mag: torch.Tensor
    res_re: torch.Tensor
    res_im: torch.Tensor
    mask: torch.Tensor = field(repr=False)
    c: float = DEFAULT_EXPONENT


class Generator(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config or GeneratorConfig()
        cfg = self.config
        ch = cfg.base_channels
        self.encoder = DenseEncoder(ch, cfg.dilations)
        self.bottleneck = nn.ModuleList(
            TFConformer(cfg.variant, ch, cfg.num_heads, cfg.conv_kernel) for _ in range(cfg.tfc_depth)
        )
        self.mask_decoder = MaskDecoder(ch, cfg.dilations)
        self.complex_decoder = ComplexDecoder(ch, cfg.dilations)

    def encode(self, mag, re, im):
        if not (mag.shape == re.shape == im.shape) or mag.dim() != 3:
            raise ShapeError(f"expected three (B, T, F) planes, got {mag.shape}, {re.shape}, {im.shape}")
        if mag.shape[-1] % 2:
            raise ShapeError(f"frequency dimension must be even, got {mag.shape[-1]}")
        return self.encoder(torch.stack([mag, re, im], dim=1))

    def bottleneck_forward(self, z):
        h = z.permute(0, 2, 3, 1)
        for tfc in self.bottleneck:
            h = tfc(h)
        return h.permute(0, 3, 1, 2) + z

    def forward(self, triplet, phase):
        mag, re, im = triplet.mag, triplet.re, triplet.im
        if tuple(phase.shape) != tuple(mag.shape):
            raise ShapeError(f"phase {tuple(phase.shape)} does not match spectrogram {tuple(mag.shape)}")
        z = self.bottleneck_forward(self.encode(mag, re, im))
        mask = self.mask_decoder(z)
        res_re, res_im = self.complex_decoder(z)
        masked = mask * mag
        out_re = masked * torch.cos(phase) + res_re
        out_im = masked * torch.sin(phase) + res_im
        return EnhancedSpec(out_re, out_im, masked, res_re, res_im, mask, self.config.exponent)


def param_count(model):
    return sum(p.numel() for p in model.parameters())


def no_decay_names(model):
    """Names of normalization affine terms and PReLU slopes (excluded from weight decay)."""
    names = set()
    for mod_name, mod in model.named_modules():
        if isinstance(mod, (nn.LayerNorm, nn.InstanceNorm2d, nn.PReLU)):
            for pname, _ in mod.named_parameters(recurse=False):
                names.add(f"{mod_name}.{pname}" if mod_name else pname)
    return names
