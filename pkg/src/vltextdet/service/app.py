"""HTTP wrapper around the core package.

The service holds at most one loaded model.  Detection accepts a base64
PNG/JPEG body; evaluation scores client-supplied polygons, so it works
without a model.
"""

from __future__ import annotations

import base64
import binascii

import cv2
import numpy as np
from fastapi import FastAPI, HTTPException

from ..config import TrainConfig
from ..evaluation import evaluate_detections
from ..data.annotations import TextInstance
from ..model import image_to_tensor
from ..postprocess import Detection, detections_from_map, scale_detections
from ..tokenizer import BpeTokenizer, TokenizerError
from ..training import CheckpointError, load_checkpoint
from .schemas import (DetectionModel, DetectRequest, DetectResponse,
                      EvaluateRequest, EvaluateResponse, HealthResponse,
                      LoadRequest, ModelInfo, PromptsResponse,
                      ThresholdScoreModel, TokenizeRequest, TokenizeResponse)


def _decode_image(image_base64: str) -> np.ndarray:
    try:
        raw = base64.b64decode(image_base64, validate=True)
    except (binascii.Error, ValueError):
        raise HTTPException(status_code=400, detail="invalid base64 payload")
    bgr = cv2.imdecode(np.frombuffer(raw, dtype=np.uint8), cv2.IMREAD_COLOR)
    if bgr is None:
        raise HTTPException(status_code=400,
                            detail="payload is not a decodable image")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def create_app(checkpoint: str | None = None) -> FastAPI:
    app = FastAPI(title="vltextdet", version="0.1.0")
    app.state.model = None
    app.state.checkpoint = None
    app.state.tokenizer = BpeTokenizer.default()

    def _load(path: str) -> None:
        try:
            model, _ = load_checkpoint(path)
        except CheckpointError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        app.state.model = model
        app.state.checkpoint = str(path)
        app.state.tokenizer = model.tokenizer

    if checkpoint is not None:
        model, _ = load_checkpoint(checkpoint)
        app.state.model = model
        app.state.checkpoint = str(checkpoint)
        app.state.tokenizer = model.tokenizer

    def _require_model():
        if app.state.model is None:
            raise HTTPException(status_code=404,
                                detail="no model loaded; POST /model/load first")
        return app.state.model

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok")

    @app.get("/model", response_model=ModelInfo)
    def model_info() -> ModelInfo:
        model = _require_model()
        return ModelInfo(checkpoint=app.state.checkpoint,
                         config=model.config.to_dict(),
                         parameters=model.parameter_counts(),
                         text_encoder_fingerprint=model.text_encoder.fingerprint())

    @app.post("/model/load", response_model=ModelInfo)
    def model_load(req: LoadRequest) -> ModelInfo:
        _load(req.checkpoint_path)
        return model_info()

    @app.get("/prompts", response_model=PromptsResponse)
    def prompts() -> PromptsResponse:
        if app.state.model is not None:
            config = app.state.model.config
        else:
            config = TrainConfig()
        return PromptsResponse(prompts=dict(config.prompts),
                               default=config.prompt_id)

    @app.post("/tokenize", response_model=TokenizeResponse)
    def tokenize(req: TokenizeRequest) -> TokenizeResponse:
        try:
            tokens = app.state.tokenizer.tokenize(req.text, req.max_len)
        except TokenizerError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return TokenizeResponse(ids=list(tokens.ids), length=tokens.length,
                                decoded=app.state.tokenizer.decode(tokens.ids))

    @app.post("/detect", response_model=DetectResponse)
    def detect(req: DetectRequest) -> DetectResponse:
        model = _require_model()
        config = model.config
        rgb = _decode_image(req.image_base64)
        h, w = rgb.shape[:2]
        s = config.image_size
        resized = cv2.resize(rgb, (s, s), interpolation=cv2.INTER_LINEAR)
        if req.prompt_id is not None and req.prompt_id not in config.prompts:
            raise HTTPException(status_code=400,
                                detail=f"unknown prompt id {req.prompt_id!r}")
        sim = model.predict_map(image_to_tensor(resized, config.dtype),
                                prompt_id=req.prompt_id)
        threshold = (req.threshold if req.threshold is not None
                     else config.binarize_threshold)
        dets = detections_from_map(sim, threshold, config.min_area,
                                   config.polygon_mode)
        dets = scale_detections(dets, w / s, h / s)
        used_prompt = None
        if config.text_enabled:
            used_prompt = req.prompt_id or config.prompt_id
        return DetectResponse(
            detections=[DetectionModel(points=d.polygon.tolist(),
                                       score=d.score) for d in dets],
            image_height=h, image_width=w, prompt_id=used_prompt)

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(req: EvaluateRequest) -> EvaluateResponse:
        per_dets = {}
        per_gts = {}
        try:
            for image_id, pair in req.images.items():
                per_dets[image_id] = [
                    Detection(polygon=np.array(d.points, dtype=np.float32),
                              score=d.score) for d in pair.detections]
                per_gts[image_id] = [
                    TextInstance(points=np.array(g.points), ignore=g.ignore)
                    for g in pair.ground_truth]
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        report = evaluate_detections(per_dets, per_gts,
                                     tuple(req.thresholds))
        return EvaluateResponse(entries=[
            ThresholdScoreModel(**vars(e)) for e in report.entries])

    return app
