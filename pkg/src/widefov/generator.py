"""Generator: wide-patch structure encoder, cross-view attention blocks, sub-pixel upsampler."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .encoding import AugmentedGram, VisualEncoder
from .errors import StateError
from .imaging import Patch


def cross_attention(query: torch.Tensor, keys: torch.Tensor, values: torch.Tensor | None = None,
                    scale_dim: int | None = None) -> torch.Tensor:
    """``softmax(Q K^T / sqrt(d_n)) V`` with ``V = K`` unless given.

    Shapes are (..., T, d) for the query and (..., S, d) for keys/values;
    ``d_n`` defaults to the key width.
    """
    values = keys if values is None else values
    if query.shape[-1] != keys.shape[-1]:
        raise ValueError(f"query width {query.shape[-1]} != key width {keys.shape[-1]}")
    if keys.shape[-2] < 1 or keys.shape[-2] != values.shape[-2]:
        raise ValueError("keys and values need the same, nonzero number of rows")
    d_n = scale_dim or keys.shape[-1]
    scores = query @ keys.transpose(-1, -2) / math.sqrt(d_n)
    return torch.softmax(scores, dim=-1) @ values


def residual_fuse(e_w: torch.Tensor, attn_out: torch.Tensor) -> torch.Tensor:
    if e_w.shape != attn_out.shape:
        raise ValueError(f"shape mismatch: {tuple(e_w.shape)} vs {tuple(attn_out.shape)}")
    return e_w + attn_out


def pixel_shuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Sub-pixel rearrangement ``out[c, r*y+a, r*x+b] = x[c*r*r + a*r + b, y, x]``.

    Works on (C*r*r, H, W) or batched (N, C*r*r, H, W) tensors.
    """
    if r < 1:
        raise ValueError(f"upscale factor must be >= 1, got {r}")
    *lead, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"{c} channels not divisible by r^2 = {r * r}")
    c_out = c // (r * r)
    y = x.reshape(*lead, c_out, r, r, h, w)
    n = len(lead)
    y = y.permute(*range(n), n, n + 3, n + 1, n + 4, n + 2)
    return y.reshape(*lead, c_out, h * r, w * r)


def _conv(cin, cout, stride=1, zero=False):
    conv = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
    if zero:
        nn.init.zeros_(conv.weight)
    else:
        nn.init.kaiming_uniform_(conv.weight, mode="fan_in", nonlinearity="relu")
    nn.init.zeros_(conv.bias)
    return conv


class ResBlock(nn.Module):
    def __init__(self, ch: int, zero_last: bool = False):
        super().__init__()
        self.conv1 = _conv(ch, ch)
        self.conv2 = _conv(ch, ch, zero=zero_last)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class StructuralEncoder(nn.Module):
    """Three conv stages with residual inner blocks; total stride 4."""

    def __init__(self, d: int):
        super().__init__()
        self.stages = nn.Sequential(
            _conv(3, d), ResBlock(d),
            _conv(d, d, stride=2), ResBlock(d),
            _conv(d, d, stride=2), ResBlock(d),
        )

    def forward(self, x):
        return self.stages(x)


class CrossViewBlock(nn.Module):
    """Wide tokens query the narrow Gram/cue tokens, residual add, then a conv branch."""

    def __init__(self, d: int, kv_width: int):
        super().__init__()
        self.to_q = nn.Linear(d, d)
        self.to_k = nn.Linear(kv_width, d)
        self.to_v = nn.Linear(kv_width, d)
        self.body = ResBlock(d, zero_last=True)

    def attend(self, e_w: torch.Tensor, e_n: torch.Tensor) -> torch.Tensor:
        return cross_attention(self.to_q(e_w), self.to_k(e_n), self.to_v(e_n))

    def forward(self, x: torch.Tensor, e_n: torch.Tensor) -> torch.Tensor:
        n, d, h, w = x.shape
        e_w = x.flatten(2).transpose(1, 2)
        e = residual_fuse(e_w, self.attend(e_w, e_n))
        return self.body(e.transpose(1, 2).reshape(n, d, h, w))


class Generator(nn.Module):
    """Maps a wide patch plus narrow tokens to an ``upscale``-times larger patch.

    The network predicts a residual over the bicubically upscaled input; the
    output conv starts at zero so an untrained generator is plain bicubic.
    """

    up_channels = 8

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.structure = StructuralEncoder(cfg.d)
            self.visual = VisualEncoder(cfg.narrow_channels)
            self.blocks = nn.ModuleList(CrossViewBlock(cfg.d, cfg.narrow_channels) for _ in range(cfg.n_blocks))
            factor = cfg.stride * cfg.upscale
            self.to_sub = _conv(cfg.d, self.up_channels * factor * factor)
            self.out = _conv(self.up_channels + 3, 3, zero=True)

    @property
    def factor(self) -> int:
        return self.cfg.stride * self.cfg.upscale

    def check_input(self, x: torch.Tensor):
        h, w = x.shape[-2:]
        if h % self.cfg.stride or w % self.cfg.stride:
            raise ValueError(f"patch {h}x{w} not divisible by encoder stride {self.cfg.stride}")

    def encode_structure(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        return self.structure(x)

    def encode_narrow(self, x: torch.Tensor) -> torch.Tensor:
        return self.visual(x)

    def forward(self, wide: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        h = self.encode_structure(wide)
        for block in self.blocks:
            h = block(h, tokens)
        sub = pixel_shuffle(self.to_sub(h), self.factor)
        r = self.cfg.upscale
        base = wide if r == 1 else F.interpolate(wide, scale_factor=r, mode="bicubic", align_corners=False)
        return base + self.out(torch.cat([sub, base], dim=1))


def feature_tokens(fmap: torch.Tensor) -> np.ndarray:
    """(1, d, H, W) feature map as a (H*W, d) token matrix."""
    return fmap[0].flatten(1).T.detach().cpu().numpy()


def encode_structure(model: Generator, patch) -> tuple[np.ndarray, tuple[int, int]]:
    """Token matrix (H'*W', d) and spatial shape of a wide patch's features."""
    px = patch.pixels if isinstance(patch, Patch) else np.asarray(patch, dtype=np.float32)
    x = torch.from_numpy(np.ascontiguousarray(px, dtype=np.float32)).permute(2, 0, 1)[None]
    with torch.no_grad():
        fmap = model.encode_structure(x)
    return feature_tokens(fmap), tuple(fmap.shape[-2:])


def generate(model: Generator | None, wide_patch, e_n: AugmentedGram) -> Patch:
    """Enhance one wide patch with a narrow patch's augmented Gram; output clamped to [0, 1]."""
    if model is None:
        raise StateError("generator parameters are not loaded")
    px = wide_patch.pixels if isinstance(wide_patch, Patch) else np.asarray(wide_patch, dtype=np.float32)
    pos = wide_patch.grid_pos if isinstance(wide_patch, Patch) else (0, 0)
    x = torch.from_numpy(np.ascontiguousarray(px, dtype=np.float32)).permute(2, 0, 1)[None]
    tokens = torch.from_numpy(np.asarray(e_n.token_view, dtype=np.float32))[None]
    with torch.no_grad():
        y = model(x, tokens).clamp(0.0, 1.0)
    return Patch(y[0].permute(1, 2, 0).numpy().copy(), pos)
