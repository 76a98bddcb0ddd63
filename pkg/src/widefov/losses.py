"""Training objectives and the patch critic.

Image arguments are (N, 3, H, W) tensors in [0, 1]; ``HxWx3`` numpy images
are converted on the way in. Every loss returns a scalar tensor so it can be
back-propagated.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .backbone import PerceptualBackbone
from .encoding import gram
from .errors import StateError
from .imaging import PatchGrid

UNIFORM_WEIGHTS = (1 / 3, 1 / 3, 1 / 3)


def as_batch(img) -> torch.Tensor:
    if isinstance(img, torch.Tensor):
        return img if img.ndim == 4 else img[None]
    arr = np.ascontiguousarray(img, dtype=np.float32)
    return torch.from_numpy(arr).permute(2, 0, 1)[None]


def content_latent(x: torch.Tensor, stride: int = 4) -> torch.Tensor:
    """Space-to-depth tokens (N, H*W/stride^2, 3*stride^2) on the encoder's grid."""
    n = x.shape[0]
    return F.pixel_unshuffle(x, stride).flatten(2).transpose(1, 2).reshape(n, -1, 3 * stride * stride)


def content_loss(orig: torch.Tensor, gen: torch.Tensor) -> torch.Tensor:
    if orig.shape != gen.shape:
        raise ValueError(f"latent shapes differ: {tuple(orig.shape)} vs {tuple(gen.shape)}")
    return ((orig - gen) ** 2).mean()


def _weights(w) -> tuple[float, ...]:
    w = tuple(float(v) for v in (w if w is not None else UNIFORM_WEIGHTS))
    if min(w) < 0:
        raise ValueError(f"layer weights must be non-negative, got {w}")
    return w


def match_size(x: torch.Tensor, size) -> torch.Tensor:
    size = tuple(size)
    if tuple(x.shape[-2:]) == size:
        return x
    return F.interpolate(x, size=size, mode="bicubic", align_corners=False).clamp(0.0, 1.0)


def layer_grams(x: torch.Tensor, backbone: PerceptualBackbone) -> list[torch.Tensor]:
    return [gram(a) for a in backbone(x)]


def visual_loss(gen, narrow, weights=None, backbone: PerceptualBackbone | None = None,
                pair_weights: torch.Tensor | None = None,
                narrow_grams: Sequence[torch.Tensor] | None = None) -> torch.Tensor:
    """``sum_l w_l ||G_l(gen) - G_l(narrow)||_F^2``, averaged over the batch.

    The narrow patch is bicubically resized to the generated patch's size
    first, so both Grams describe texture at the same scale. ``pair_weights``
    (N,) scales each pair, e.g. zero for below-threshold matches.
    ``narrow_grams`` can replace ``narrow`` when already computed.
    """
    if backbone is None:
        raise StateError("visual loss needs a perceptual backbone")
    gen = as_batch(gen)
    w = _weights(weights)
    if narrow_grams is None:
        with torch.no_grad():
            narrow_grams = layer_grams(match_size(as_batch(narrow), gen.shape[-2:]), backbone)
    acts = backbone(gen)
    per_pair = gen.new_zeros(gen.shape[0])
    for wl, a, gn in zip(w, acts, narrow_grams):
        if wl:
            per_pair = per_pair + wl * ((gram(a) - gn) ** 2).sum(dim=(-1, -2))
    if pair_weights is not None:
        per_pair = per_pair * pair_weights
    return per_pair.mean()


def generator_loss(content, visual):
    return content + visual


def seam_bands(img: torch.Tensor, grid: PatchGrid, b: int) -> tuple[torch.Tensor, ...]:
    """Facing ``b``-pixel bands across every interior seam.

    Returns (left, right, top, bottom): vertical-seam bands stacked on the
    batch axis as (N*7*8, 3, patch_h, b), horizontal ones as (N*7*8, 3, b, patch_w).
    """
    ph, pw = grid.patch_h, grid.patch_w
    if b < 1:
        raise ValueError(f"seam band width must be >= 1, got {b}")
    if b >= min(ph, pw):
        raise ValueError(f"seam band width {b} must be smaller than the {ph}x{pw} patch side")
    left, right, top, bottom = [], [], [], []
    for k in range(1, grid.cols):
        s = k * pw
        for r in range(grid.rows):
            rows = slice(r * ph, (r + 1) * ph)
            left.append(img[:, :, rows, s - b:s])
            right.append(img[:, :, rows, s:s + b])
    for k in range(1, grid.rows):
        s = k * ph
        for c in range(grid.cols):
            cols = slice(c * pw, (c + 1) * pw)
            top.append(img[:, :, s - b:s, cols])
            bottom.append(img[:, :, s:s + b, cols])
    return tuple(torch.cat(x) for x in (left, right, top, bottom))


def backbone_layer(backbone: PerceptualBackbone, layer: int = 0) -> Callable[[torch.Tensor], torch.Tensor]:
    return lambda x: backbone(x, upto=layer + 1)[layer]


def seam_loss(img, grid: PatchGrid | None, b: int, phi: Callable[[torch.Tensor], torch.Tensor]) -> torch.Tensor:
    """``(1/b) * sum over seams of mean (phi(R_j) - phi(R_i))^2``."""
    img = as_batch(img)
    grid = grid or PatchGrid.for_shape(*img.shape[-2:])
    if (grid.height, grid.width) != tuple(img.shape[-2:]):
        raise ValueError(f"grid {grid.height}x{grid.width} does not match image {tuple(img.shape[-2:])}")
    left, right, top, bottom = seam_bands(img, grid, b)
    total = img.new_zeros(())
    for a, c in ((left, right), (top, bottom)):
        diff = (phi(c) - phi(a)) ** 2
        total = total + diff.flatten(1).mean(dim=1).sum()
    return total / (b * img.shape[0])


def perceptual_loss(gen, gt, weights=None, backbone: PerceptualBackbone | None = None) -> torch.Tensor:
    """``sum_l w_l * mean (phi_l(gen) - phi_l(gt))^2``; symmetric in its arguments."""
    if backbone is None:
        raise StateError("perceptual loss needs a perceptual backbone")
    gen, gt = as_batch(gen), as_batch(gt)
    if gen.shape != gt.shape:
        raise ValueError(f"image shapes differ: {tuple(gen.shape)} vs {tuple(gt.shape)}")
    w = _weights(weights)
    total = gen.new_zeros(())
    for wl, a, g in zip(w, backbone(gen), backbone(gt)):
        if wl:
            total = total + wl * ((a - g) ** 2).mean()
    return total


def discriminator_loss(seam, perceptual):
    return seam + perceptual


class Critic(nn.Module):
    """Four stride-2 conv stages and a global-average head; one realism logit per image."""

    def __init__(self, width: int = 32, seed: int = 0):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            chans = [3, width, width * 2, width * 4, width * 8]
            layers: list[nn.Module] = []
            for cin, cout in zip(chans, chans[1:]):
                layers += [nn.Conv2d(cin, cout, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            self.body = nn.Sequential(*layers)
            self.head = nn.Linear(chans[-1], 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if min(x.shape[-2:]) < 16:
            raise ValueError(f"critic needs images of at least 16x16, got {tuple(x.shape[-2:])}")
        return self.head(self.body(x).mean(dim=(2, 3)))[:, 0]


def critic_score(img, critic: Critic | None) -> float:
    if critic is None:
        raise StateError("discriminator parameters are not loaded")
    with torch.no_grad():
        return float(critic(as_batch(img))[0])


def critic_bce(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def generator_adv(fake_logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating adversarial term for the generator."""
    return F.softplus(-fake_logits).mean()
