"""HTTP service around a loaded enhancer.

Images travel as base64 PNGs inside JSON bodies. The app holds one
:class:`~widefov.inference.Enhancer`, built at startup from a checkpoint or,
when none is given, an untrained generator (which reproduces bicubic upscaling).
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from . import __version__
from .data import make_pair
from .errors import ConfigError, StateError
from .inference import Enhancer, LensStack, cascade
from .metrics import evaluate
from .schemas import (
    CascadeReq,
    CascadeRes,
    EnhanceReq,
    EnhanceRes,
    EvalReq,
    Health,
    ImagePayload,
    MatchOut,
    MetricRowOut,
    SimulateReq,
    SimulateRes,
    StageOut,
    png_b64,
)


def _payload(img) -> ImagePayload:
    return ImagePayload(png_b64=png_b64(img))


def _decode(p: ImagePayload, field: str):
    try:
        return p.to_array()
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=f"{field}: {exc}") from exc


def create_app(enhancer: Enhancer) -> FastAPI:
    app = FastAPI(title="widefov", version=__version__)

    @app.get("/health", response_model=Health)
    def health():
        return Health(status="ok", version=__version__, config_hash=enhancer.config_hash,
                      backbone=enhancer.backbone.label)

    @app.post("/enhance", response_model=EnhanceRes)
    def enhance(req: EnhanceReq):
        narrow, wide = _decode(req.narrow, "narrow"), _decode(req.wide, "wide")
        try:
            out, matches, _ = enhancer.enhance_with_matches(narrow, wide)
        except (ValueError, ConfigError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except StateError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc
        return EnhanceRes(
            image=_payload(out),
            height=out.shape[0],
            width=out.shape[1],
            config_hash=enhancer.config_hash,
            matches=[MatchOut(**m.to_dict()) for m in matches] if req.include_matches else None,
        )

    @app.post("/cascade", response_model=CascadeRes)
    def run_cascade(req: CascadeReq):
        shots = tuple((s.zoom, _decode(s.image, f"shot {i}")) for i, s in enumerate(req.shots))
        stages = []

        def record(k, ref_zoom, wide_zoom, out):
            stages.append(StageOut(stage=k, reference_zoom=ref_zoom, wide_zoom=wide_zoom,
                                   height=out.shape[0], width=out.shape[1]))

        try:
            out = cascade(LensStack(shots), enhancer, on_stage=record)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except StateError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc
        return CascadeRes(image=_payload(out), stages=stages)

    @app.post("/eval", response_model=MetricRowOut)
    def run_eval(req: EvalReq):
        pred, gt = _decode(req.pred, "pred"), _decode(req.gt, "gt")
        try:
            row = evaluate(pred, gt, enhancer.backbone, req.id)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return MetricRowOut(**row.__dict__)

    @app.post("/simulate", response_model=SimulateRes)
    def simulate(req: SimulateReq):
        gt = _decode(req.gt, "gt")
        try:
            pair, spec = make_pair(gt, "request", seed=req.seed, zoom=req.zoom, down_factor=req.down_factor)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return SimulateRes(narrow=_payload(pair.narrow), wide=_payload(pair.wide),
                           blur_sigma=spec.blur_sigma, noise_sigma=spec.noise_sigma,
                           down_size=spec.down_size, variance=pair.variance)

    return app
