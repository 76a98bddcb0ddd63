"""Synthetic narrow/wide training pairs, curriculum ordering, dataset manifests."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from .imaging import as_image, bicubic_resize, luminance, read_image, write_png

DEFAULT_ZOOM = 5 / 3
BLUR_SIGMA_RANGE = (0.2, 3.0)
NOISE_SIGMA_RANGE = (0.0, 25 / 255)


class ManifestError(OSError):
    pass


@dataclass(frozen=True)
class DegradationSpec:
    blur_sigma: float
    noise_sigma: float
    down_size: int
    interp: str = "bicubic"

    def __post_init__(self):
        lo, hi = BLUR_SIGMA_RANGE
        if not lo <= self.blur_sigma <= hi:
            raise ValueError(f"blur_sigma {self.blur_sigma} outside [{lo}, {hi}]")
        lo, hi = NOISE_SIGMA_RANGE
        if not lo <= self.noise_sigma <= hi + 1e-12:
            raise ValueError(f"noise_sigma {self.noise_sigma} outside [0, 25/255]")
        if self.down_size < 1:
            raise ValueError(f"down_size must be positive, got {self.down_size}")
        if self.interp != "bicubic":
            raise ValueError("only bicubic interpolation is supported")

    @classmethod
    def sample(cls, rng: np.random.Generator, down_size: int) -> "DegradationSpec":
        return cls(
            blur_sigma=float(rng.uniform(*BLUR_SIGMA_RANGE)),
            noise_sigma=float(rng.uniform(*NOISE_SIGMA_RANGE)),
            down_size=down_size,
        )


@dataclass(frozen=True)
class FoVPair:
    narrow: np.ndarray
    wide: np.ndarray
    gt: np.ndarray
    source_id: str
    variance: float


@dataclass(frozen=True)
class SourceRecord:
    source_id: str
    path: Path
    split: str | None = None


CROP_SNAP = 0.01  # px; crop sides this close to an integer are treated as that integer


def _even_floor(x: float) -> int:
    n = math.floor(x + CROP_SNAP)
    return n - (n % 2)


def crop_box(height: int, width: int, zoom: float) -> tuple[int, int, int, int]:
    """(top, left, crop_h, crop_w) of the centered narrow-view crop."""
    ch, cw = _even_floor(height / zoom), _even_floor(width / zoom)
    return (height - ch) // 2, (width - cw) // 2, ch, cw


def simulate_narrow(gt: np.ndarray, zoom: float = DEFAULT_ZOOM) -> np.ndarray:
    """Central crop of ``gt`` at ``zoom``, pasted unchanged onto a black canvas of gt's size."""
    if not zoom > 1:
        raise ValueError(f"zoom must exceed 1, got {zoom}")
    gt = as_image(gt)
    top, left, ch, cw = crop_box(*gt.shape[:2], zoom)
    out = np.zeros_like(gt)
    out[top:top + ch, left:left + cw] = gt[top:top + ch, left:left + cw]
    return out


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    k = 2 * radius + 1
    return cv2.GaussianBlur(img, (k, k), sigmaX=sigma, sigmaY=sigma, borderType=cv2.BORDER_REFLECT_101)


def simulate_wide(gt: np.ndarray, spec: DegradationSpec, seed: int) -> np.ndarray:
    """Blur, add seeded Gaussian noise, shrink to ``down_size``, then grow back (bicubic)."""
    gt = as_image(gt)
    h, w = gt.shape[:2]
    if spec.down_size > max(h, w):
        raise ValueError(f"down_size {spec.down_size} exceeds image size {h}x{w}")
    rng = np.random.default_rng(seed)
    x = gaussian_blur(gt, spec.blur_sigma)
    if spec.noise_sigma > 0:
        x = x + rng.normal(0.0, spec.noise_sigma, size=x.shape).astype(np.float32)
    scale = spec.down_size / max(h, w)
    small = bicubic_resize(x, max(1, round(h * scale)), max(1, round(w * scale)))
    return np.clip(bicubic_resize(small, h, w), 0.0, 1.0)


def luminance_variance(img: np.ndarray) -> float:
    return float(np.var(luminance(np.asarray(img, dtype=np.float64))))


def make_pair(gt: np.ndarray, source_id: str, seed: int, zoom: float = DEFAULT_ZOOM,
              down_factor: int = 2, spec: DegradationSpec | None = None) -> tuple[FoVPair, DegradationSpec]:
    gt = as_image(gt)
    if spec is None:
        spec = DegradationSpec.sample(np.random.default_rng(seed), max(gt.shape[:2]) // down_factor)
    pair = FoVPair(
        narrow=simulate_narrow(gt, zoom),
        wide=simulate_wide(gt, spec, seed),
        gt=gt,
        source_id=source_id,
        variance=luminance_variance(gt),
    )
    return pair, spec


def curriculum_order(pairs: Sequence[FoVPair]) -> list[FoVPair]:
    """Ascending luminance variance; ties keep their input order."""
    if not pairs:
        raise ValueError("cannot order an empty dataset")
    return sorted(pairs, key=lambda p: p.variance)


def load_manifest(path, verify_images: bool = False) -> list[SourceRecord]:
    """Read ``source_id<TAB>path[<TAB>split]`` rows; relative paths resolve against the manifest."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) not in (2, 3):
            raise ManifestError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
        source_id, img_path = parts[0], Path(parts[1])
        if not img_path.is_absolute():
            img_path = path.parent / img_path
        if not img_path.is_file():
            raise ManifestError(f"{path}:{lineno} ({source_id}): image not found: {img_path}")
        if verify_images:
            try:
                read_image(img_path)
            except OSError as exc:
                raise ManifestError(f"{path}:{lineno} ({source_id}): {exc}") from exc
        split = parts[2] if len(parts) == 3 and parts[2] else None
        records.append(SourceRecord(source_id, img_path, split))
    return records


def save_pair(pair: FoVPair, out_dir, spec: DegradationSpec, seed: int, zoom: float = DEFAULT_ZOOM) -> list[Path]:
    out_dir = Path(out_dir)
    sid = pair.source_id
    paths = [
        write_png(out_dir / f"{sid}_narrow.png", pair.narrow),
        write_png(out_dir / f"{sid}_wide.png", pair.wide),
        write_png(out_dir / f"{sid}_gt.png", pair.gt),
    ]
    sidecar = out_dir / f"{sid}.json"
    sidecar.write_text(json.dumps({
        "source_id": sid, "seed": seed, "zoom": zoom, "variance": pair.variance, "spec": asdict(spec),
    }, indent=2))
    return paths + [sidecar]


def synthetic_scene(size: int = 256, seed: int = 0) -> np.ndarray:
    """Seeded procedural test image: color gradient, oriented gratings and hard-edged shapes."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    base = rng.uniform(0.2, 0.8, 3)[None, None, :] + 0.25 * (
        rng.uniform(-1, 1, 3)[None, None, :] * xx[..., None] + rng.uniform(-1, 1, 3)[None, None, :] * yy[..., None]
    )
    for _ in range(4):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(4, 40)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        base += rng.uniform(0.03, 0.12) * wave[..., None] * rng.uniform(0.5, 1.0, 3)[None, None, :]
    for _ in range(6):
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.04, 0.18)
        color = rng.uniform(0, 1, 3)
        if rng.random() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        else:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * rng.uniform(0.4, 1.6))
        base[mask] = 0.5 * base[mask] + 0.5 * color
    return np.clip(base, 0.0, 1.0).astype(np.float32)
