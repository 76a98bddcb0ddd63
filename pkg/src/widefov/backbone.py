"""Frozen perceptual feature extractor shared by matching, losses and metrics."""

from __future__ import annotations

import logging
import os
from pathlib import Path

import torch
from torch import nn

log = logging.getLogger(__name__)

TAP_LAYERS = ("conv2_2", "conv3_2", "conv4_2")
# post-ReLU indices of the tap layers inside torchvision's vgg19().features
VGG19_TAP_INDEX = {"conv2_2": 8, "conv3_2": 13, "conv4_2": 22}
VGG19_FILENAME = "vgg19-dcbb9e9d.pth"

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def _find_vgg_weights() -> Path | None:
    env = os.environ.get("WIDEFOV_VGG19_WEIGHTS")
    if env:
        return Path(env) if Path(env).is_file() else None
    hub = Path(torch.hub.get_dir()) / "checkpoints" / VGG19_FILENAME
    return hub if hub.is_file() else None


def _random_stack(widths=(8, 16, 32, 32)) -> tuple[nn.Sequential, dict[str, int]]:
    layers: list[nn.Module] = []
    taps = {}
    in_ch = 3
    for stage, width in enumerate(widths, start=1):
        if stage > 1:
            layers.append(nn.MaxPool2d(2, ceil_mode=True))
        for k in (1, 2):
            layers += [nn.Conv2d(in_ch, width, 3, padding=1), nn.ReLU()]
            in_ch = width
            name = f"conv{stage}_{k}"
            if name in TAP_LAYERS:
                taps[name] = len(layers) - 1
    return nn.Sequential(*layers), taps


class PerceptualBackbone(nn.Module):
    """Activations of three mid-depth layers, with all weights frozen.

    ``kind="vgg19"`` uses ImageNet-pretrained VGG-19 weights found on disk;
    ``kind="random"`` is a thin VGG-shaped stack with seeded weights, meant
    for offline runs and CI. ``label`` records which one produced a number.
    """

    def __init__(self, kind: str = "random", seed: int = 0, weights_path=None):
        super().__init__()
        self.kind = kind
        if kind == "vgg19":
            from torchvision.models import vgg19

            path = Path(weights_path) if weights_path else _find_vgg_weights()
            if path is None:
                raise FileNotFoundError(
                    "VGG-19 weights not found; set WIDEFOV_VGG19_WEIGHTS or use backbone=random"
                )
            net = vgg19(weights=None)
            net.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
            self.features = net.features[: max(VGG19_TAP_INDEX.values()) + 1]
            self.tap_index = dict(VGG19_TAP_INDEX)
            self.label = "vgg19-imagenet"
        elif kind == "random":
            self.features, self.tap_index = _random_stack()
            gen = torch.Generator().manual_seed(seed)
            with torch.no_grad():
                for m in self.features:
                    if isinstance(m, nn.Conv2d):
                        fan_in = m.in_channels * 9
                        m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
                        m.bias.zero_()
            self.label = f"random-seed{seed}"
        else:
            raise ValueError(f"unknown backbone kind {kind!r}")
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # frozen: never leave eval mode
        return super().train(False)

    @property
    def layers(self) -> tuple[str, ...]:
        return TAP_LAYERS

    def forward(self, x: torch.Tensor, upto: int | None = None) -> list[torch.Tensor]:
        """Return tap activations for ``x`` of shape (N, 3, H, W) in [0, 1].

        ``upto`` limits the output to the first ``upto`` tap layers.
        """
        wanted = TAP_LAYERS[:upto] if upto else TAP_LAYERS
        stop = self.tap_index[wanted[-1]]
        idx_to_name = {self.tap_index[n]: n for n in wanted}
        h = (x - self.mean) / self.std
        out = []
        for i, layer in enumerate(self.features):
            h = layer(h)
            if i in idx_to_name:
                out.append(h)
            if i == stop:
                break
        return out


_CACHE: dict[tuple, PerceptualBackbone] = {}


def load_backbone(kind: str = "auto", seed: int = 0) -> PerceptualBackbone:
    """Shared, cached backbone. ``auto`` prefers VGG-19 and falls back to random."""
    if kind == "auto":
        kind = "vgg19" if _find_vgg_weights() is not None else "random"
        if kind == "random":
            log.warning("VGG-19 weights unavailable; using the seeded random backbone")
    key = (kind, seed)
    if key not in _CACHE:
        _CACHE[key] = PerceptualBackbone(kind, seed=seed)
    return _CACHE[key]
