"""Full-image enhancement from a narrow/wide pair, and cascading across a lens stack."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .backbone import PerceptualBackbone, load_backbone
from .config import TrainConfig, config_hash
from .encoding import visual_cues
from .errors import StateError
from .generator import Generator
from .imaging import (
    Patch,
    as_image,
    assemble,
    bicubic_resize,
    partition,
    resize_to_multiple,
)
from .matching import PatchMatch, dump_matches, match_patches

log = logging.getLogger(__name__)

RESIZE_MULTIPLE = 64


def _stack(patches: Sequence[Patch]) -> torch.Tensor:
    return torch.from_numpy(np.stack([p.pixels for p in patches])).permute(0, 3, 1, 2).contiguous()


@dataclass
class Enhancer:
    """A loaded generator with the matching and blending settings used at inference."""

    generator: Generator | None
    backbone: PerceptualBackbone
    tau: float = 0.7
    blend_width: int = 4
    batch_size: int = 16
    config_hash: str = ""

    @classmethod
    def from_checkpoint(cls, path, backbone: PerceptualBackbone | None = None) -> "Enhancer":
        from .training import load_generator

        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        gen, manifest = load_generator(path)
        cfg: TrainConfig = manifest["train"]
        backbone = backbone or load_backbone(cfg.model.backbone, cfg.model.backbone_seed)
        if manifest.get("backbone") and manifest["backbone"] != backbone.label:
            log.warning("checkpoint was trained with backbone %s, matching with %s",
                        manifest["backbone"], backbone.label)
        return cls(gen, backbone, cfg.tau, cfg.blend_width, cfg.batch_size, manifest["config_hash"])

    @classmethod
    def untrained(cls, cfg: TrainConfig | None = None, backbone: PerceptualBackbone | None = None) -> "Enhancer":
        cfg = cfg or TrainConfig()
        backbone = backbone or load_backbone(cfg.model.backbone, cfg.model.backbone_seed)
        gen = Generator(cfg.model, seed=cfg.seed).eval()
        return cls(gen, backbone, cfg.tau, cfg.blend_width, cfg.batch_size, config_hash(cfg.model))

    @property
    def upscale(self) -> int:
        if self.generator is None:
            raise StateError("generator parameters are not loaded")
        return self.generator.cfg.upscale

    def match(self, narrow: np.ndarray, wide: np.ndarray):
        wide_p = partition(resize_to_multiple(wide, RESIZE_MULTIPLE))
        narrow_p = partition(resize_to_multiple(narrow, RESIZE_MULTIPLE))
        return wide_p, narrow_p, match_patches(wide_p, narrow_p, self.tau, self.backbone)

    @torch.no_grad()
    def enhance_with_matches(self, narrow: np.ndarray, wide: np.ndarray):
        """Enhanced image plus the per-patch matches and the narrow patches keyed by grid position."""
        if self.generator is None:
            raise StateError("generator parameters are not loaded")
        narrow, wide = as_image(narrow), as_image(wide)
        wide_p, narrow_p, matches = self.match(narrow, wide)
        by_pos = {p.grid_pos: p for p in narrow_p}
        gen = self.generator.eval()
        wide_t = _stack(wide_p)
        narrow_t = _stack([by_pos[m.narrow_pos] for m in matches])
        outs = []
        for start in range(0, len(wide_p), self.batch_size):
            sl = slice(start, start + self.batch_size)
            outs.append(gen(wide_t[sl], gen.encode_narrow(narrow_t[sl])).clamp(0.0, 1.0))
        out = torch.cat(outs).permute(0, 2, 3, 1).numpy()
        patches = [Patch(out[i].copy(), p.grid_pos) for i, p in enumerate(wide_p)]
        return assemble(patches, self.blend_width), matches, by_pos

    def enhance(self, narrow: np.ndarray, wide: np.ndarray, dump_path=None) -> np.ndarray:
        out, matches, by_pos = self.enhance_with_matches(narrow, wide)
        if dump_path is not None:
            self.dump(dump_path, matches, by_pos)
        return out

    def dump(self, path, matches: Sequence[PatchMatch], narrow_by_pos: dict) -> Path:
        cues = {pos: visual_cues(p).to_dict() for pos, p in narrow_by_pos.items()}
        meta = {"tau": self.tau, "backbone": self.backbone.label, "config_hash": self.config_hash}
        return dump_matches(path, matches, cues, meta)


def enhance(narrow: np.ndarray, wide: np.ndarray, ckpt, dump_path=None) -> np.ndarray:
    """Enhance ``wide`` using ``narrow``; ``ckpt`` is an Enhancer or a checkpoint path."""
    enhancer = ckpt if isinstance(ckpt, Enhancer) else Enhancer.from_checkpoint(ckpt)
    return enhancer.enhance(narrow, wide, dump_path=dump_path)


@dataclass(frozen=True)
class LensStack:
    """Co-captured shots ordered from the narrowest (largest zoom) to the widest."""

    shots: tuple[tuple[float, np.ndarray], ...]

    def __post_init__(self):
        if len(self.shots) < 2:
            raise ValueError("a lens stack needs at least two shots")
        zooms = [z for z, _ in self.shots]
        if any(a <= b for a, b in zip(zooms, zooms[1:])):
            raise ValueError(f"zoom factors must be strictly decreasing, got {zooms}")
        for _, img in self.shots:
            as_image(img)

    @property
    def zooms(self) -> list[float]:
        return [z for z, _ in self.shots]


def cascade(stack: LensStack, ckpt, enhance_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
            on_stage: Callable[[int, float, float, np.ndarray], None] | None = None) -> np.ndarray:
    """Carry detail from the narrowest shot outward, one adjacent pair at a time.

    Each stage's output becomes the reference for the next wider shot, after
    a bicubic resize to that shot's dimensions.
    """
    if enhance_fn is None:
        enhancer = ckpt if isinstance(ckpt, Enhancer) else Enhancer.from_checkpoint(ckpt)
        enhance_fn = enhancer.enhance
    reference = stack.shots[0][1]
    out = reference
    for k in range(1, len(stack.shots)):
        zoom, wide = stack.shots[k]
        if k > 1:
            reference = bicubic_resize(reference, *wide.shape[:2])
        out = enhance_fn(reference, wide)
        if on_stage is not None:
            on_stage(k, stack.shots[k - 1][0], zoom, out)
        reference = out
    return out
