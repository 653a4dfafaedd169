"""Conformer blocks, axis-wise T-/F-Conformers and the TF-Conformer variants.

Feature maps follow the ``(B, T, F, C)`` layout. A T-Conformer folds the
frequency axis into the batch and runs a Conformer along time; an
F-Conformer does the opposite. The five TF-Conformer variants all own
exactly one F-block and one T-block, so their parameter counts match by
construction; they differ only in how the two blocks are wired.
"""

import math

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError

VARIANTS = ("C", "P", "PC", "CPv", "CPq")


def check_variant(tag):
    if tag not in VARIANTS:
        raise ConfigError(f"unknown TF-Conformer variant {tag!r}; expected one of {', '.join(VARIANTS)}")
    return tag


class FeedForward(nn.Module):
    def __init__(self, dim, expansion=4):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, expansion * dim)
        self.act = nn.SiLU()
        self.fc2 = nn.Linear(expansion * dim, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(self.norm(x))))


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with independent query/key/value inputs.

    Inputs are ``(N, L, C)``; keys and values must share their length.
    """

    def __init__(self, dim, num_heads):
        super().__init__()
        if dim % num_heads:
            raise ConfigError(f"model dim {dim} is not divisible by {num_heads} heads")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def _split(self, x):
        n, length, _ = x.shape
        return x.reshape(n, length, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(self, query, key, value, return_weights=False):
        for name, t in (("query", query), ("key", key), ("value", value)):
            if t.dim() != 3 or t.shape[-1] != self.dim:
                raise ShapeError(f"{name} must be (N, L, {self.dim}), got {tuple(t.shape)}")
        if key.shape[:2] != value.shape[:2]:
            raise ShapeError(f"key {tuple(key.shape)} and value {tuple(value.shape)} differ in batch/length")
        if query.shape[0] != key.shape[0]:
            raise ShapeError("query and key batch sizes differ")
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        if return_weights:
            scores = (q / math.sqrt(self.head_dim)) @ k.transpose(-2, -1)
            weights = torch.softmax(scores, dim=-1)
            heads = weights @ v
        else:
            heads = F.scaled_dot_product_attention(q, k, v)
        out = heads.transpose(1, 2).reshape(query.shape[0], query.shape[1], self.dim)
        out = self.out_proj(out)
        if return_weights:
            return out, weights
        return out


class ConvModule(nn.Module):
    """Pointwise (GLU) -> depthwise -> norm -> SiLU -> pointwise, same padding."""

    def __init__(self, dim, kernel_size=31):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ConfigError("conv kernel length must be odd for same padding")
        self.norm = nn.LayerNorm(dim)
        self.pointwise_in = nn.Conv1d(dim, 2 * dim, 1)
        self.glu = nn.GLU(dim=1)
        self.depthwise = nn.Conv1d(dim, dim, kernel_size, padding=kernel_size // 2, groups=dim)
        # per-position channel norm keeps batch items independent
        self.mid_norm = nn.LayerNorm(dim)
        self.act = nn.SiLU()
        self.pointwise_out = nn.Conv1d(dim, dim, 1)

    def forward(self, x):
        h = self.norm(x).transpose(1, 2)
        h = self.depthwise(self.glu(self.pointwise_in(h)))
        h = self.act(self.mid_norm(h.transpose(1, 2)))
        return self.pointwise_out(h.transpose(1, 2)).transpose(1, 2)


class ConformerBlock(nn.Module):
    """Macaron Conformer block operating on ``(N, L, C)`` sequences.

    ``query``/``key``/``value`` replace the corresponding attention input
    (otherwise taken from the block's own stream). External sources pass
    through the same pre-attention LayerNorm as the stream.
    """

    def __init__(self, dim=32, num_heads=4, conv_kernel=31, ff_expansion=4):
        super().__init__()
        self.ff1 = FeedForward(dim, ff_expansion)
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, num_heads)
        self.conv = ConvModule(dim, conv_kernel)
        self.ff2 = FeedForward(dim, ff_expansion)
        self.out_norm = nn.LayerNorm(dim)

    def forward(self, x, query=None, key=None, value=None):
        x = x + 0.5 * self.ff1(x)
        h = self.attn_norm(x)
        q = h if query is None else self.attn_norm(query)
        k = h if key is None else self.attn_norm(key)
        v = h if value is None else self.attn_norm(value)
        x = x + self.attn(q, k, v)
        x = x + self.conv(x)
        x = x + 0.5 * self.ff2(x)
        return self.out_norm(x)


def _check_map(x):
    if x.dim() != 4:
        raise ShapeError(f"feature map must be (B, T, F, C), got {tuple(x.shape)}")


def time_major(x):
    """(B, T, F, C) -> (B*F, T, C)."""
    b, t, f, c = x.shape
    return x.permute(0, 2, 1, 3).reshape(b * f, t, c)


def from_time_major(y, b, f):
    bf, t, c = y.shape
    return y.reshape(b, f, t, c).permute(0, 2, 1, 3)


def freq_major(x):
    """(B, T, F, C) -> (B*T, F, C)."""
    b, t, f, c = x.shape
    return x.reshape(b * t, f, c)


def from_freq_major(y, b, t):
    bt, f, c = y.shape
    return y.reshape(b, t, f, c)


def _maybe(fn, x):
    return None if x is None else fn(x)


def t_conformer(x, block, query=None, key=None, value=None):
    """Run ``block`` along time; frequency bins are independent batch items."""
    _check_map(x)
    b, _, f, _ = x.shape
    y = block(
        time_major(x),
        query=_maybe(time_major, query),
        key=_maybe(time_major, key),
        value=_maybe(time_major, value),
    )
    return from_time_major(y, b, f)


def f_conformer(x, block, query=None, key=None, value=None):
    """Run ``block`` along frequency; time frames are independent batch items."""
    _check_map(x)
    b, t, _, _ = x.shape
    y = block(
        freq_major(x),
        query=_maybe(freq_major, query),
        key=_maybe(freq_major, key),
        value=_maybe(freq_major, value),
    )
    return from_freq_major(y, b, t)


class TFConformerParams(nn.Module):
    """Weights shared by every variant: one F-block and one T-block."""

    def __init__(self, dim=32, num_heads=4, conv_kernel=31):
        super().__init__()
        self.f_block = ConformerBlock(dim, num_heads, conv_kernel)
        self.t_block = ConformerBlock(dim, num_heads, conv_kernel)


def apply_tfc(x, variant, params):
    check_variant(variant)
    if variant == "C":
        return t_conformer(f_conformer(x, params.f_block), params.t_block)
    if variant == "P":
        return t_conformer(x, params.t_block) + f_conformer(x, params.f_block)
    if variant == "PC":
        return t_conformer(x, params.t_block, value=f_conformer(x, params.f_block))
    if variant == "CPv":
        return t_conformer(f_conformer(x, params.f_block), params.t_block, value=x)
    # CPq
    return t_conformer(f_conformer(x, params.f_block), params.t_block, query=x)


class TFConformer(TFConformerParams):
    def __init__(self, variant="CPq", dim=32, num_heads=4, conv_kernel=31):
        super().__init__(dim, num_heads, conv_kernel)
        self.variant = check_variant(variant)

    def forward(self, x):
        return apply_tfc(x, self.variant, self)
