"""Full-image quality metrics and report formatting."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from scipy.ndimage import convolve1d

from .backbone import PerceptualBackbone
from .errors import ConfigError
from .imaging import luminance

PSNR_CAP = 100.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
PROXY_TAG = "lpips-proxy"


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for [0, 1] images, capped at 100 dB."""
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    y = convolve1d(convolve1d(x, g, axis=0, mode="reflect"), g, axis=1, mode="reflect")
    return y[r:-r, r:-r]


def ssim(a, b) -> float:
    """Single-scale SSIM on luminance; Gaussian 11x11 window, sigma 1.5, L = 1.

    Averaged over window positions lying fully inside the image.
    """
    a, b = _same_shape(a, b)
    if min(a.shape[:2]) < SSIM_WIN:
        raise ValueError(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}")
    ya = luminance(a) if a.ndim == 3 else a
    yb = luminance(b) if b.ndim == 3 else b
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(ya, g), _filter_valid(yb, g)
    var_a = _filter_valid(ya * ya, g) - mu_a ** 2
    var_b = _filter_valid(yb * yb, g) - mu_b ** 2
    cov = _filter_valid(ya * yb, g) - mu_a * mu_b
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _unit(x: torch.Tensor) -> torch.Tensor:
    return x / (x.pow(2).sum(dim=1, keepdim=True).sqrt() + 1e-10)


@torch.no_grad()
def perceptual_distance(a, b, backbone: PerceptualBackbone | None, weights=None) -> float:
    """Channel-normalized, layer-weighted squared distance between tap activations.

    A stand-in for LPIPS built on our own backbone, reported as ``lpips-proxy``.
    """
    if backbone is None:
        raise ConfigError("perceptual distance needs a backbone")
    a, b = _same_shape(a, b)
    ta = torch.from_numpy(a.astype(np.float32)).permute(2, 0, 1)[None]
    tb = torch.from_numpy(b.astype(np.float32)).permute(2, 0, 1)[None]
    w = weights or (1 / 3, 1 / 3, 1 / 3)
    total = 0.0
    for wl, fa, fb in zip(w, backbone(ta), backbone(tb)):
        total += wl * float((_unit(fa) - _unit(fb)).pow(2).sum(dim=1).mean())
    return total


@dataclass
class MetricRow:
    id: str
    psnr_db: float
    ssim: float
    perceptual_distance: float
    backend: str = PROXY_TAG


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, row: MetricRow):
        self.rows.append(row)

    def means(self) -> dict:
        if not self.rows:
            return {}
        return {
            k: float(np.mean([getattr(r, k) for r in self.rows]))
            for k in ("psnr_db", "ssim", "perceptual_distance")
        }

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows], "mean": self.means(),
                           "metadata": self.metadata})

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["id", "psnr_db", "ssim", "perceptual_distance", "backend"])
        writer.writeheader()
        for r in self.rows:
            writer.writerow(asdict(r))
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'id':<20} {'psnr_db':>9} {'ssim':>8} {'perceptual':>11}  backend"]
        for r in self.rows:
            lines.append(f"{r.id:<20} {r.psnr_db:>9.3f} {r.ssim:>8.4f} {r.perceptual_distance:>11.5f}  {r.backend}")
        m = self.means()
        if m:
            lines.append(f"{'mean':<20} {m['psnr_db']:>9.3f} {m['ssim']:>8.4f} {m['perceptual_distance']:>11.5f}")
        return "\n".join(lines)


def evaluate(pred, gt, backbone: PerceptualBackbone, image_id: str = "image") -> MetricRow:
    """Metrics for one full assembled image against its ground truth."""
    backend = PROXY_TAG if backbone.kind != "lpips" else "lpips"
    return MetricRow(
        id=image_id,
        psnr_db=psnr(pred, gt),
        ssim=ssim(pred, gt),
        perceptual_distance=perceptual_distance(pred, gt, backbone),
        backend=backend,
    )
