"""Request and response models for the HTTP service."""

from __future__ import annotations

import base64
import binascii
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .imaging import decode_image, encode_png


def png_b64(img: np.ndarray) -> str:
    return base64.b64encode(encode_png(img)).decode("ascii")


def image_from_b64(data: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ValueError(f"image is not valid base64: {exc}") from exc
    return decode_image(raw)


class ImagePayload(BaseModel):
    png_b64: str = Field(description="base64-encoded PNG or JPEG bytes")

    @field_validator("png_b64")
    @classmethod
    def _nonempty(cls, v: str) -> str:
        if not v:
            raise ValueError("empty image payload")
        return v

    def to_array(self) -> np.ndarray:
        return image_from_b64(self.png_b64)


class Health(BaseModel):
    status: str
    version: str
    config_hash: str
    backbone: str


class MatchOut(BaseModel):
    wide_pos: List[int]
    narrow_pos: List[int]
    score: float
    above_threshold: bool
    degenerate: bool = False


class EnhanceReq(BaseModel):
    narrow: ImagePayload
    wide: ImagePayload
    include_matches: bool = False


class EnhanceRes(BaseModel):
    image: ImagePayload
    height: int
    width: int
    config_hash: str
    matches: Optional[List[MatchOut]] = None


class Shot(BaseModel):
    zoom: float = Field(gt=0)
    image: ImagePayload


class CascadeReq(BaseModel):
    shots: List[Shot] = Field(min_length=2, description="narrowest first, zoom strictly decreasing")


class StageOut(BaseModel):
    stage: int
    reference_zoom: float
    wide_zoom: float
    height: int
    width: int


class CascadeRes(BaseModel):
    image: ImagePayload
    stages: List[StageOut]


class EvalReq(BaseModel):
    pred: ImagePayload
    gt: ImagePayload
    id: str = "image"


class MetricRowOut(BaseModel):
    id: str
    psnr_db: float
    ssim: float
    perceptual_distance: float
    backend: str


class SimulateReq(BaseModel):
    gt: ImagePayload
    seed: int = 0
    zoom: float = Field(default=5 / 3, gt=1)
    down_factor: int = Field(default=2, ge=1)


class SimulateRes(BaseModel):
    narrow: ImagePayload
    wide: ImagePayload
    blur_sigma: float
    noise_sigma: float
    down_size: int
    variance: float
