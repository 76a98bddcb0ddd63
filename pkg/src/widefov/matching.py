"""Cross-view patch matching by cosine similarity of backbone embeddings."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .backbone import PerceptualBackbone, load_backbone
from .imaging import NUM_PATCHES, Patch

DEFAULT_TAU = 0.7
MIN_EMBED_SIDE = 32


class DegeneratePatchWarning(UserWarning):
    """A patch embedded to the zero vector; its similarity is reported as 0."""


@dataclass(frozen=True)
class PatchMatch:
    wide_pos: tuple[int, int]
    narrow_pos: tuple[int, int]
    score: float
    above_threshold: bool
    degenerate: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["wide_pos"] = list(self.wide_pos)
        d["narrow_pos"] = list(self.narrow_pos)
        return d


def _pixels(p) -> np.ndarray:
    return p.pixels if isinstance(p, Patch) else np.asarray(p, dtype=np.float32)


def _to_batch(patches: Sequence) -> torch.Tensor:
    arrs = [_pixels(p) for p in patches]
    for a in arrs:
        if a.ndim != 3 or a.shape[0] == 0 or a.shape[1] == 0:
            raise ValueError(f"degenerate patch of shape {a.shape}")
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise ValueError("patches in one batch must share a shape")
    x = torch.from_numpy(np.stack(arrs).astype(np.float32)).permute(0, 3, 1, 2)
    h, w = shape[:2]
    if min(h, w) < MIN_EMBED_SIDE:
        s = MIN_EMBED_SIDE / min(h, w)
        x = F.interpolate(x, size=(round(h * s), round(w * s)), mode="bicubic", align_corners=False)
    return x


@torch.no_grad()
def embed_batch(patches: Sequence, backbone: PerceptualBackbone | None = None) -> np.ndarray:
    """Embeddings of equally sized patches, one row each (float64)."""
    backbone = backbone or load_backbone()
    acts = backbone(_to_batch(patches))
    return torch.cat([a.mean(dim=(2, 3)) for a in acts], dim=1).double().numpy()


def embed(patch, backbone: PerceptualBackbone | None = None) -> np.ndarray:
    """Concatenated global-average-pooled activations of the three tap layers."""
    return embed_batch([patch], backbone)[0]


def similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"vector lengths differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        warnings.warn("zero embedding; similarity defined as 0", DegeneratePatchWarning, stacklevel=2)
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def similarity_matrix(wide_emb: np.ndarray, narrow_emb: np.ndarray) -> np.ndarray:
    wn = np.linalg.norm(wide_emb, axis=1, keepdims=True)
    nn_ = np.linalg.norm(narrow_emb, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = (wide_emb @ narrow_emb.T) / (wn * nn_.T)
    sim[~np.isfinite(sim)] = 0.0
    return np.clip(sim, -1.0, 1.0)


def match_patches(
    wide: Sequence[Patch],
    narrow: Sequence[Patch],
    tau: float = DEFAULT_TAU,
    backbone: PerceptualBackbone | None = None,
) -> list[PatchMatch]:
    """Pair each wide patch with its most similar narrow patch.

    Below-threshold pairs are kept and flagged rather than dropped, so every
    wide patch gets exactly one match. Narrow patches may be reused.
    """
    if len(wide) != NUM_PATCHES or len(narrow) != NUM_PATCHES:
        raise ValueError(f"expected {NUM_PATCHES} wide and narrow patches, got {len(wide)}/{len(narrow)}")
    if not -1.0 <= tau <= 1.0:
        raise ValueError(f"threshold must lie in [-1, 1], got {tau}")
    we = embed_batch(wide, backbone)
    ne = embed_batch(narrow, backbone)
    zero_w = np.linalg.norm(we, axis=1) == 0
    zero_n = np.linalg.norm(ne, axis=1) == 0
    sim = similarity_matrix(we, ne)
    best = np.argmax(sim, axis=1)
    out = []
    for i, j in enumerate(best):
        score = float(sim[i, j])
        out.append(PatchMatch(
            wide_pos=wide[i].grid_pos,
            narrow_pos=narrow[j].grid_pos,
            score=score,
            above_threshold=score >= tau,
            degenerate=bool(zero_w[i] or zero_n[j]),
        ))
    if zero_w.any() or zero_n.any():
        warnings.warn("some patches embedded to zero vectors", DegeneratePatchWarning, stacklevel=2)
    return out


def dump_matches(path, matches: Sequence[PatchMatch], cues: dict | None = None, meta: dict | None = None) -> Path:
    """Write the match pool as JSON; ``cues`` maps narrow grid positions to cue dicts."""
    rows = []
    for m in matches:
        row = m.to_dict()
        if cues is not None:
            row["narrow_cues"] = cues[m.narrow_pos]
        rows.append(row)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"meta": meta or {}, "matches": rows}, indent=2))
    return path
