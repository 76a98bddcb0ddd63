"""Raster images, the fixed 8x8 patch grid, and seam-feathered reassembly.

Images are ``H x W x 3`` float32 arrays in ``[0, 1]`` with RGB channel order.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image as PILImage

GRID_ROWS = 8
GRID_COLS = 8
NUM_PATCHES = GRID_ROWS * GRID_COLS
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class PatchGrid:
    patch_h: int
    patch_w: int
    rows: int = GRID_ROWS
    cols: int = GRID_COLS

    @property
    def height(self) -> int:
        return self.patch_h * self.rows

    @property
    def width(self) -> int:
        return self.patch_w * self.cols

    @classmethod
    def for_shape(cls, height: int, width: int) -> "PatchGrid":
        if height % GRID_ROWS or width % GRID_COLS:
            raise ValueError(
                f"image {height}x{width} is not divisible by the {GRID_ROWS}x{GRID_COLS} grid"
            )
        return cls(height // GRID_ROWS, width // GRID_COLS)


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray
    grid_pos: tuple[int, int]

    def __post_init__(self):
        row, col = self.grid_pos
        if not (0 <= row < GRID_ROWS and 0 <= col < GRID_COLS):
            raise ValueError(f"grid position {self.grid_pos} outside the {GRID_ROWS}x{GRID_COLS} grid")


def as_image(pixels, *, min_side: int = 8) -> np.ndarray:
    """Validate ``pixels`` as an image and return it as float32."""
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 array, got shape {arr.shape}")
    if arr.shape[0] < min_side or arr.shape[1] < min_side:
        raise ValueError(f"image {arr.shape[0]}x{arr.shape[1]} is smaller than {min_side}x{min_side}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return arr


def bicubic_resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bicubic resampling (antialiased when shrinking), clamped to [0, 1]."""
    img = np.asarray(img, dtype=np.float32)
    if img.shape[:2] == (height, width):
        return img.copy()
    t = torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1)[None]
    shrinking = height < img.shape[0] or width < img.shape[1]
    out = F.interpolate(t, size=(height, width), mode="bicubic", align_corners=False,
                        antialias=shrinking)
    return out[0].permute(1, 2, 0).clamp_(0.0, 1.0).numpy().copy()


def resize_to_multiple(img: np.ndarray, m: int = 64) -> np.ndarray:
    """Bicubically grow ``img`` so both sides are the smallest multiples of ``m``."""
    if m <= 0:
        raise ValueError(f"multiple must be positive, got {m}")
    img = as_image(img, min_side=1)
    h, w = img.shape[:2]
    new_h = -(-h // m) * m
    new_w = -(-w // m) * m
    if (new_h, new_w) == (h, w):
        return img
    return bicubic_resize(img, new_h, new_w)


def partition(img: np.ndarray) -> list[Patch]:
    img = as_image(img)
    grid = PatchGrid.for_shape(*img.shape[:2])
    ph, pw = grid.patch_h, grid.patch_w
    return [
        Patch(img[r * ph:(r + 1) * ph, c * pw:(c + 1) * pw].copy(), (r, c))
        for r in range(grid.rows)
        for c in range(grid.cols)
    ]


def tile(patches: Sequence[Patch]) -> np.ndarray:
    """Place 64 patches on their grid positions without any blending."""
    if len(patches) != NUM_PATCHES:
        raise ValueError(f"expected {NUM_PATCHES} patches, got {len(patches)}")
    seen = {p.grid_pos for p in patches}
    if len(seen) != NUM_PATCHES:
        raise ValueError("grid positions are duplicated or missing")
    ph, pw = patches[0].pixels.shape[:2]
    out = np.empty((ph * GRID_ROWS, pw * GRID_COLS, 3), dtype=np.float32)
    for p in patches:
        if p.pixels.shape != (ph, pw, 3):
            raise ValueError(f"patch at {p.grid_pos} has shape {p.pixels.shape}, expected {(ph, pw, 3)}")
        r, c = p.grid_pos
        out[r * ph:(r + 1) * ph, c * pw:(c + 1) * pw] = p.pixels
    return out


def feather_ramp(b: int) -> np.ndarray:
    # weight of the far-side tile across a 2b-pixel band
    return ((np.arange(2 * b) + 0.5) / (2 * b)).astype(np.float32)


def _feather_axis(img: np.ndarray, step: int, b: int, axis: int) -> np.ndarray:
    src = np.moveaxis(img, axis, 0)
    out = src.copy()
    alpha = feather_ramp(b).reshape((-1,) + (1,) * (src.ndim - 1))
    for s in range(step, src.shape[0], step):
        near = np.concatenate([src[s - b:s], np.repeat(src[s - 1:s], b, axis=0)])
        far = np.concatenate([np.repeat(src[s:s + 1], b, axis=0), src[s:s + b]])
        out[s - b:s + b] = (1.0 - alpha) * near + alpha * far
    return np.moveaxis(out, 0, axis)


def feather_seams(img: np.ndarray, grid: PatchGrid, b: int) -> np.ndarray:
    """Linearly feather every interior seam of ``grid`` over a ``2b`` band.

    Each tile is edge-extended ``b`` pixels past its border and the two
    tiles are mixed with a linear ramp; vertical seams first, then
    horizontal seams on the result.
    """
    if b < 0:
        raise ValueError(f"blend width must be non-negative, got {b}")
    if b == 0:
        return img
    if 2 * b > min(grid.patch_h, grid.patch_w):
        raise ValueError(f"blend width {b} too large for {grid.patch_h}x{grid.patch_w} patches")
    out = _feather_axis(img, grid.patch_w, b, axis=1)
    return _feather_axis(out, grid.patch_h, b, axis=0)


def _feather_axis_t(x: torch.Tensor, step: int, b: int, dim: int) -> torch.Tensor:
    alpha = torch.from_numpy(feather_ramp(b)).to(x.dtype)
    shape = [1] * x.ndim
    shape[dim] = 2 * b
    alpha = alpha.view(shape)
    pieces, prev = [], 0
    for s in range(step, x.shape[dim], step):
        near = torch.cat([x.narrow(dim, s - b, b), x.narrow(dim, s - 1, 1).expand_as(x.narrow(dim, s - b, b))], dim)
        far = torch.cat([x.narrow(dim, s, 1).expand_as(x.narrow(dim, s, b)), x.narrow(dim, s, b)], dim)
        pieces += [x.narrow(dim, prev, s - b - prev), (1 - alpha) * near + alpha * far]
        prev = s + b
    pieces.append(x.narrow(dim, prev, x.shape[dim] - prev))
    return torch.cat(pieces, dim)


def assemble_tensor(patches: torch.Tensor, b: int = 4) -> torch.Tensor:
    """Differentiable twin of ``assemble`` for (64, C, h, w) row-major patch stacks.

    Returns a (1, C, 8h, 8w) image.
    """
    n, c, ph, pw = patches.shape
    if n != NUM_PATCHES:
        raise ValueError(f"expected {NUM_PATCHES} patches, got {n}")
    img = patches.reshape(GRID_ROWS, GRID_COLS, c, ph, pw).permute(2, 0, 3, 1, 4)
    img = img.reshape(1, c, GRID_ROWS * ph, GRID_COLS * pw)
    if b == 0:
        return img
    if b < 0 or 2 * b > min(ph, pw):
        raise ValueError(f"blend width {b} invalid for {ph}x{pw} patches")
    img = _feather_axis_t(img, pw, b, dim=3)
    return _feather_axis_t(img, ph, b, dim=2)


def assemble(patches: Sequence[Patch], b: int = 4) -> np.ndarray:
    out = tile(patches)
    ph, pw = patches[0].pixels.shape[:2]
    return feather_seams(out, PatchGrid(ph, pw), b)


def luminance(img) -> np.ndarray:
    img = np.asarray(img)
    r, g, bl = LUMA_WEIGHTS
    return np.clip(r * img[..., 0] + g * img[..., 1] + bl * img[..., 2], 0.0, 1.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    # round half up
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def read_image(path) -> np.ndarray:
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return arr


def write_png(path, img: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(to_uint8(img)).save(path, format="PNG")
    return path


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(to_uint8(img)).save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data: bytes) -> np.ndarray:
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as exc:
        raise ValueError(f"cannot decode image bytes: {exc}") from exc
