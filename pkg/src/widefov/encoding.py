"""Texture and visual-cue encoding of narrow-view patches.

A narrow patch becomes a token set: the rows of the Gram matrix of its
feature map, plus one extra row holding six visual cues (RGB means,
brightness, contrast, sharpness) zero-padded to the Gram width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError
from .imaging import LUMA_WEIGHTS, Patch

NUM_CUES = 6
LAPLACIAN = ((0.0, 1.0, 0.0), (1.0, -4.0, 1.0), (0.0, 1.0, 0.0))


def gram(features) -> torch.Tensor:
    """Normalized Gram matrix of a (..., C, H, W) feature map.

    ``G[i, j] = sum_p F[i, p] F[j, p] / (C * H * W)``. Numpy input is accepted.
    """
    f = torch.as_tensor(features)
    if f.ndim < 3:
        raise ValueError(f"expected (..., C, H, W) features, got shape {tuple(f.shape)}")
    if not torch.isfinite(f).all():
        raise ValueError("feature map contains non-finite values")
    c, h, w = f.shape[-3:]
    flat = f.reshape(*f.shape[:-2], h * w)
    return flat @ flat.transpose(-1, -2) / (c * h * w)


@dataclass(frozen=True)
class VisualCues:
    color_mean: tuple[float, float, float]
    brightness: float
    contrast: float
    sharpness: float

    def as_vector(self) -> np.ndarray:
        return np.array([*self.color_mean, self.brightness, self.contrast, self.sharpness])

    def to_dict(self) -> dict:
        return {
            "color_mean": list(self.color_mean),
            "brightness": self.brightness,
            "contrast": self.contrast,
            "sharpness": self.sharpness,
        }


def laplacian_abs_mean(y: np.ndarray) -> float:
    p = np.pad(y, 1, mode="edge")
    lap = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * y
    return float(np.abs(lap).mean())


def visual_cues(patch) -> VisualCues:
    px = np.asarray(patch.pixels if isinstance(patch, Patch) else patch, dtype=np.float64)
    y = np.clip(px @ np.array(LUMA_WEIGHTS), 0.0, 1.0)
    return VisualCues(
        color_mean=tuple(float(v) for v in px.mean(axis=(0, 1))),
        brightness=float(y.mean()),
        contrast=float(y.std()),
        sharpness=laplacian_abs_mean(y),
    )


def visual_cues_batch(x: torch.Tensor) -> torch.Tensor:
    """Cue vectors (N, 6) for a batch (N, 3, H, W); same definitions as ``visual_cues``."""
    w = x.new_tensor(LUMA_WEIGHTS).view(1, 3, 1, 1)
    y = (x * w).sum(dim=1, keepdim=True).clamp(0.0, 1.0)
    lap = F.conv2d(F.pad(y, (1, 1, 1, 1), mode="replicate"), x.new_tensor(LAPLACIAN).view(1, 1, 3, 3))
    return torch.cat([
        x.mean(dim=(2, 3)),
        y.mean(dim=(1, 2, 3))[:, None],
        y.std(dim=(1, 2, 3), unbiased=False)[:, None],
        lap.abs().mean(dim=(1, 2, 3))[:, None],
    ], dim=1)


@dataclass(frozen=True)
class AugmentedGram:
    gram: np.ndarray
    cues: VisualCues
    token_view: np.ndarray


def cue_tokens(grams: torch.Tensor, cues: torch.Tensor) -> torch.Tensor:
    """Stack (N, C, C) Grams with (N, 6) cues into (N, C + 1, C) token sets."""
    c = grams.shape[-1]
    if c < NUM_CUES:
        raise ConfigError(f"Gram width {c} cannot hold {NUM_CUES} cue values")
    row = F.pad(cues, (0, c - NUM_CUES))
    return torch.cat([grams, row[..., None, :]], dim=-2)


def augment_gram(g, cues: VisualCues) -> AugmentedGram:
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"expected a square Gram matrix, got shape {g.shape}")
    vec = torch.from_numpy(cues.as_vector())
    tokens = cue_tokens(torch.from_numpy(g)[None], vec[None])[0]
    return AugmentedGram(gram=g, cues=cues, token_view=tokens.numpy())


class VisualEncoder(nn.Module):
    """Narrow-patch encoder: conv stack to ``channels`` maps, then Gram + cue tokens."""

    def __init__(self, channels: int = 64):
        super().__init__()
        if channels < NUM_CUES:
            raise ConfigError(f"narrow encoder needs at least {NUM_CUES} channels, got {channels}")
        half = max(channels // 2, 1)
        self.body = nn.Sequential(
            nn.Conv2d(3, half, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(half, channels, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
        )
        self.channels = channels

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return cue_tokens(gram(self.body(x)), visual_cues_batch(x))

    def augmented(self, patch) -> AugmentedGram:
        px = patch.pixels if isinstance(patch, Patch) else np.asarray(patch, dtype=np.float32)
        x = torch.from_numpy(np.ascontiguousarray(px, dtype=np.float32)).permute(2, 0, 1)[None]
        with torch.no_grad():
            g = gram(self.body(x))[0].double().numpy()
        return augment_gram(g, visual_cues(px))
