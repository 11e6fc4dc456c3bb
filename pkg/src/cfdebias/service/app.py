"""FastAPI application wrapping the core package."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from ..fairness import FairnessReport
from . import ops, schemas


def create_app() -> FastAPI:
    app = FastAPI(
        title="cfdebias",
        description="Counterfactual debiasing service for audio-based depression detection",
    )

    def guard(fn, *args):
        try:
            return fn(*args)
        except (ValueError, FileNotFoundError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return ops.health()

    @app.post("/counterfactual/fuse", response_model=schemas.FuseResponse)
    def fuse(req: schemas.FuseRequest):
        return guard(ops.fuse_logits, req)

    @app.post("/counterfactual/tie", response_model=schemas.TieResponse)
    def tie(req: schemas.TieRequest):
        return guard(ops.tie_scores, req)

    @app.post("/fairness/report", response_model=FairnessReport)
    def metrics(req: schemas.MetricsRequest):
        return guard(ops.metrics_report, req)

    @app.post("/corpus/synth", response_model=schemas.SynthResponse)
    def synth(req: schemas.SynthRequest):
        return guard(ops.synth_corpus, req)

    @app.post("/corpus/ingest", response_model=schemas.IngestResponse)
    def ingest(req: schemas.IngestRequest):
        return guard(ops.ingest_corpus, req)

    @app.post("/corpus/validate", response_model=schemas.ValidateDistributionResponse)
    def validate_distribution(req: schemas.ValidateDistributionRequest):
        return guard(ops.validate_manifest_distribution, req)

    @app.post("/records/validate", response_model=schemas.ValidateSessionResponse)
    def validate_record(req: schemas.ValidateSessionRequest):
        return guard(ops.validate_session_record, req)

    @app.post("/experiments/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        return guard(ops.train_experiment, req)

    @app.post("/experiments/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest):
        return guard(ops.evaluate_checkpoint, req)

    @app.post("/experiments/compare", response_model=schemas.CompareResponse)
    def compare(req: schemas.CompareRequest):
        return guard(ops.compare_experiments, req)

    @app.post("/models/predict", response_model=schemas.PredictResponse)
    def predict(req: schemas.PredictRequest):
        return guard(ops.predict_records, req)

    return app


app = create_app()
