"""Service operations shared by the HTTP endpoints and the CLI.

Each function takes a request model and returns a response model, so the CLI
can execute them in-process while the FastAPI app exposes the same behavior
over HTTP.
"""

from __future__ import annotations

import torch

from .. import __version__
from .. import counterfactual as cf
from .. import fairness, harness
from ..backbones import DTYPE
from ..corpus import (
    CorpusManifest,
    generate_synthetic,
    ingest_daicwoz,
    save_manifests,
    summarize,
    validate_distribution,
)
from ..types import PredictionRecord, validate_session
from . import schemas


def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(version=__version__)


def fuse_logits(req: schemas.FuseRequest) -> schemas.FuseResponse:
    fused = cf.fuse(req.d_g, req.d_f)[0]
    return schemas.FuseResponse(fused=[float(v) for v in fused])


def tie_scores(req: schemas.TieRequest) -> schemas.TieResponse:
    t = cf.tie(req.fused_factual, req.fused_counterfactual)[0]
    return schemas.TieResponse(tie=[float(v) for v in t], predicted_label=cf.predict_tie(t))


def metrics_report(req: schemas.MetricsRequest) -> fairness.FairnessReport:
    return fairness.fairness_report(req.records, req.averaging)


def synth_corpus(req: schemas.SynthRequest) -> schemas.SynthResponse:
    train, test = generate_synthetic(req.config)
    paths = None
    if req.out_dir:
        paths = save_manifests({"train_combined": train, "test": test}, req.out_dir)
    return schemas.SynthResponse(train=train, test=test, paths=paths)


def ingest_corpus(req: schemas.IngestRequest) -> schemas.IngestResponse:
    manifests = ingest_daicwoz(
        req.root,
        phq_threshold=req.phq_threshold,
        gender_map=req.gender_map,
        exclude=req.exclude,
    )
    paths = save_manifests(manifests, req.out_dir) if req.out_dir else {}
    summaries = []
    for name in sorted(manifests):
        summary = summarize(manifests[name])
        summaries.append(schemas.ManifestSummary(**summary, path=paths.get(name)))
    return schemas.IngestResponse(splits=summaries)


def validate_manifest_distribution(
    req: schemas.ValidateDistributionRequest,
) -> schemas.ValidateDistributionResponse:
    manifest = CorpusManifest.load(req.manifest_path)
    ok, diff = validate_distribution(manifest, req.expected)
    return schemas.ValidateDistributionResponse(ok=ok, diff=diff)


def validate_session_record(req: schemas.ValidateSessionRequest) -> schemas.ValidateSessionResponse:
    violations = validate_session(req.record)
    return schemas.ValidateSessionResponse(ok=not violations, violations=violations)


def train_experiment(req: schemas.TrainRequest) -> schemas.TrainResponse:
    out = harness.train(req.config)
    return schemas.TrainResponse(**out.model_dump())


def evaluate_checkpoint(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
    result = harness.evaluate(req.checkpoint, req.test_manifest, out_dir=req.out_dir)
    return schemas.EvaluateResponse(result=result)


def compare_experiments(req: schemas.CompareRequest) -> schemas.CompareResponse:
    results = harness.compare(req.configs)
    table = fairness.render_text_table(harness.comparison_rows(results))
    return schemas.CompareResponse(results=results, table=table)


def predict_records(req: schemas.PredictRequest) -> schemas.PredictResponse:
    """Score feature-carrying session records with a trained checkpoint."""
    model, config, sidecar = harness.load_checkpoint(req.checkpoint)
    items, feature_dim, _ = harness.build_session_items(
        req.records, config.backbone, norm_stats=sidecar.get("norm_stats")
    )
    if feature_dim != sidecar["feature_dim"]:
        raise ValueError(
            f"checkpoint expects feature dim {sidecar['feature_dim']}, records have {feature_dim}"
        )
    is_cf = config.method == "counterfactual"
    predictions = []
    with torch.no_grad():
        for item in items:
            g = torch.as_tensor([item.gender], dtype=DTYPE)
            alf = harness._item_alf(model.m_f if is_cf else model, item).unsqueeze(0)
            if is_cf:
                out = model.branches(g, alf)
                t = out.tie()[0]
                pred, scores = cf.predict_tie(t), [float(v) for v in t]
            else:
                pred, scores = cf.predict_factual(model(g, alf)[0]), None
            predictions.append(PredictionRecord(
                session_id=item.session_id,
                gender=item.gender,
                true_label=item.label,
                predicted_label=pred,
                tie_scores=scores,
            ))
    report = None
    genders = {p.gender for p in predictions}
    if genders == {0, 1}:
        report = fairness.fairness_report(predictions, config.metric_averaging)
    return schemas.PredictResponse(predictions=predictions, report=report)
