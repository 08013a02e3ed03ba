"""Request/response bodies for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"


class ModelInfo(BaseModel):
    checkpoint: str | None
    config: dict
    parameters: dict[str, int]
    text_encoder_fingerprint: str


class LoadRequest(BaseModel):
    checkpoint_path: str


class PromptsResponse(BaseModel):
    prompts: dict[str, str]
    default: str


class TokenizeRequest(BaseModel):
    text: str
    max_len: int = 77


class TokenizeResponse(BaseModel):
    ids: list[int]
    length: int
    decoded: str


class DetectionModel(BaseModel):
    points: list[list[float]]
    score: float = Field(ge=0.0, le=1.0)


class DetectRequest(BaseModel):
    image_base64: str
    prompt_id: str | None = None
    threshold: float | None = Field(default=None, gt=0.0, lt=1.0)


class DetectResponse(BaseModel):
    detections: list[DetectionModel]
    image_height: int
    image_width: int
    prompt_id: str | None


class GroundTruthModel(BaseModel):
    points: list[list[float]]
    ignore: bool = False


class ImagePair(BaseModel):
    detections: list[DetectionModel] = Field(default_factory=list)
    ground_truth: list[GroundTruthModel] = Field(default_factory=list)


class EvaluateRequest(BaseModel):
    images: dict[str, ImagePair]
    thresholds: list[float] = Field(default=[0.5, 0.6, 0.7, 0.8, 0.9])


class ThresholdScoreModel(BaseModel):
    iou_threshold: float
    precision: float
    recall: float
    f_score: float
    matched: int
    num_dets: int
    num_gts: int


class EvaluateResponse(BaseModel):
    entries: list[ThresholdScoreModel]
