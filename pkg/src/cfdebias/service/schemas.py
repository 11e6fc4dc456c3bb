"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from ..corpus import CorpusManifest, SynthConfig
from ..fairness import Averaging, FairnessReport
from ..harness import ExperimentConfig, RunResult
from ..types import PredictionRecord, SessionRecord


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class FuseRequest(BaseModel):
    d_g: list[float] = Field(min_length=2, max_length=2)
    d_f: list[float] = Field(min_length=2, max_length=2)


class FuseResponse(BaseModel):
    fused: list[float]


class TieRequest(BaseModel):
    fused_factual: list[float] = Field(min_length=2, max_length=2)
    fused_counterfactual: list[float] = Field(min_length=2, max_length=2)


class TieResponse(BaseModel):
    tie: list[float]
    predicted_label: int


class MetricsRequest(BaseModel):
    records: list[PredictionRecord] = Field(min_length=1)
    averaging: Averaging = "macro"


class SynthRequest(BaseModel):
    config: SynthConfig
    out_dir: Optional[str] = None


class SynthResponse(BaseModel):
    train: CorpusManifest
    test: CorpusManifest
    paths: Optional[dict[str, str]] = None


class IngestRequest(BaseModel):
    root: str
    phq_threshold: int = 10
    gender_map: Optional[dict[int, int]] = None
    exclude: Optional[list[str]] = None
    out_dir: Optional[str] = None


class ManifestSummary(BaseModel):
    split_name: str
    n_records: int
    distribution: dict[str, int]
    path: Optional[str] = None


class IngestResponse(BaseModel):
    splits: list[ManifestSummary]


class ValidateDistributionRequest(BaseModel):
    manifest_path: str
    expected: dict[str, int]


class ValidateDistributionResponse(BaseModel):
    ok: bool
    diff: dict[str, tuple[int, int]]


class ValidateSessionRequest(BaseModel):
    record: SessionRecord


class ValidateSessionResponse(BaseModel):
    ok: bool
    violations: list[str]


class TrainRequest(BaseModel):
    config: ExperimentConfig


class TrainResponse(BaseModel):
    run_dir: str
    checkpoint_path: str
    config_hash: str
    best_epoch: int
    best_loss: float
    effective_train_size: int


class EvaluateRequest(BaseModel):
    checkpoint: str
    test_manifest: str
    out_dir: Optional[str] = None


class EvaluateResponse(BaseModel):
    result: RunResult


class CompareRequest(BaseModel):
    configs: list[ExperimentConfig] = Field(min_length=1)


class CompareResponse(BaseModel):
    results: list[RunResult]
    table: str


class PredictRequest(BaseModel):
    checkpoint: str
    records: list[SessionRecord] = Field(min_length=1)


class PredictResponse(BaseModel):
    predictions: list[PredictionRecord]
    report: Optional[FairnessReport] = None
