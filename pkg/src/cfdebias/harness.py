"""Experiment orchestration: seeded training under the four debiasing
conditions, evaluation with the matching inference rule, and report emission.

The counterfactual condition and the three baseline conditions share the same
fusion-branch architecture and data loading; they differ only in the data
transformation applied up front (sub-sampling / feature augmentation), in the
losses, and in the inference rule (debiased difference vs. plain argmax).
Every reported number is fully determined by (config, seed, corpus); wall
clock is kept out of the deterministic artifacts.
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import baselines, counterfactual as cf, dsp, fairness
from .backbones import DTYPE, FusionModel, MlpConfig, NetvladConfig, StaConfig, seed_init
from .corpus import CorpusManifest, load_manifest, manifest_sha256
from .types import PredictionRecord, SessionRecord, write_jsonl

Backbone = Literal["sta", "netvlad", "tabular"]
Method = Literal["none", "subsample", "mixfeat", "counterfactual"]

METHOD_ORDER: tuple[Method, ...] = ("none", "subsample", "mixfeat", "counterfactual")
BACKBONE_ORDER: tuple[Backbone, ...] = ("sta", "netvlad", "tabular")

METHOD_LABELS = {
    "none": "None",
    "subsample": "Sub-sampling",
    "mixfeat": "Data Augmentation",
    "counterfactual": "Counterfactual Inference",
}
BACKBONE_LABELS = {
    "sta": "STA-based Model",
    "netvlad": "NetVLAD-based Model",
    "tabular": "Tabular Model",
}


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: Literal["adam"] = "adam"
    learning_rate: Optional[float] = None  # default 1e-3 tabular, 1e-4 audio
    batch_size: int = Field(default=16, ge=1)
    epochs: int = Field(default=100, ge=1)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    backbone: Backbone
    method: Method
    train_manifest: str
    test_manifest: str
    output_dir: str
    optimizer: OptimizerConfig = OptimizerConfig()
    seed: int = 0
    metric_averaging: fairness.Averaging = "macro"
    class_weighting: bool = False
    mixfeat_alpha: float = 1.0
    mixfeat_beta: float = 1.0
    head_hidden_dims: list[int] = Field(default=[32, 32])
    gender_hidden_dims: list[int] = Field(default=[8])
    epsilon_mode: Literal["head", "logit"] = "head"
    sta: StaConfig = StaConfig()
    netvlad: NetvladConfig = NetvladConfig()
    debug_log: bool = False

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if self.optimizer.epochs < 1:
            raise ValueError("epochs must be >= 1")
        return self

    def effective_learning_rate(self) -> float:
        if self.optimizer.learning_rate is not None:
            return self.optimizer.learning_rate
        return 1e-3 if self.backbone == "tabular" else 1e-4


def config_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(config.model_dump(mode="json"), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


class RunResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    config_hash: str
    backbone: Backbone
    method: Method
    report: fairness.FairnessReport
    n_test: int
    checkpoint_path: str
    predictions_path: str
    report_path: str
    wall_clock_seconds: float


@dataclass
class SessionItem:
    """One training/eval sample: either live backbone inputs, a precomputed
    constant session feature, or a live mix of two parents' features."""

    session_id: str
    gender: int
    label: int
    inputs: object = None
    const_alf: Optional[torch.Tensor] = None
    mix: Optional[tuple["SessionItem", "SessionItem", float]] = None


def _tensor_rows(record: SessionRecord) -> torch.Tensor:
    if record.features is None:
        raise ValueError(f"session {record.session_id} has no features")
    return torch.as_tensor(record.features.to_array(), dtype=DTYPE)


def build_session_items(
    records: list[SessionRecord],
    backbone: Backbone,
    norm_stats: Optional[dsp.NormStats] = None,
    fit_stats: bool = False,
) -> tuple[list[SessionItem], int, Optional[dsp.NormStats]]:
    """Turn manifest records into per-session model inputs.

    Feature-carrying records are used directly (tabular rows, or cached
    segment-feature sequences for the audio backbones). Audio-only records go
    through the DSP chain; for the spectrogram path the per-bin normalization
    statistics are fit on this set only when `fit_stats` is set (training) and
    must be supplied otherwise (evaluation).
    """
    items: list[SessionItem] = []
    feature_dim: Optional[int] = None

    def check_dim(d: int, sid: str):
        nonlocal feature_dim
        if feature_dim is None:
            feature_dim = d
        elif feature_dim != d:
            raise ValueError(f"session {sid}: feature dim {d} != corpus dim {feature_dim}")

    if backbone == "tabular":
        for rec in records:
            rows = _tensor_rows(rec)
            check_dim(rows.shape[1], rec.session_id)
            items.append(SessionItem(rec.session_id, rec.gender, rec.label,
                                     const_alf=rows.mean(dim=0)))
        return items, feature_dim or 0, None

    if backbone == "sta":
        by_id: dict[str, SessionItem] = {}
        pending_audio: list[tuple[SessionRecord, dsp.Spectrogram]] = []
        for rec in records:
            if rec.features is not None:
                rows = _tensor_rows(rec)
                if rows.shape[1] != 64:
                    raise ValueError(f"session {rec.session_id}: cached spectrogram-path features must be T x 64")
                by_id[rec.session_id] = SessionItem(rec.session_id, rec.gender, rec.label, inputs=rows)
            elif rec.audio_path:
                audio, rate = dsp.read_wav(rec.audio_path)
                pending_audio.append((rec, dsp.sta_session_spectrogram(audio, rate)))
            else:
                raise ValueError(f"session {rec.session_id}: neither features nor audio")
        if pending_audio:
            if fit_stats:
                norm_stats = dsp.spectrogram_stats([s for _, s in pending_audio])
            if norm_stats is None:
                raise ValueError("spectrogram normalization stats required for evaluation")
            for rec, spec in pending_audio:
                clips = dsp.segment_clips(dsp.normalize_spectrogram(spec, norm_stats))
                by_id[rec.session_id] = SessionItem(
                    rec.session_id, rec.gender, rec.label,
                    inputs=[torch.as_tensor(c, dtype=DTYPE) for c in clips.clips])
        # manifest ordering drives the prediction log, so preserve it
        items = [by_id[rec.session_id] for rec in records]
        return items, 64, norm_stats

    # netvlad
    for rec in records:
        if rec.features is not None:
            rows = _tensor_rows(rec)
            if rows.shape[1] != 256:
                raise ValueError(f"session {rec.session_id}: cached transcript-path features must be S x 256")
            items.append(SessionItem(rec.session_id, rec.gender, rec.label, inputs=rows))
        elif rec.audio_path and rec.transcript_path:
            audio, rate = dsp.read_wav(rec.audio_path)
            transcript = dsp.read_transcript_csv(rec.transcript_path)
            mels = dsp.netvlad_session_mels(audio, rate, transcript)
            if not mels:
                raise ValueError(f"session {rec.session_id}: no participant turns in transcript")
            items.append(SessionItem(rec.session_id, rec.gender, rec.label,
                                     inputs=[torch.as_tensor(m.data, dtype=DTYPE) for m in mels]))
        else:
            raise ValueError(f"session {rec.session_id}: need features or audio+transcript")
    return items, 256, None


def build_fusion_model(config: ExperimentConfig, feature_dim: int) -> FusionModel:
    alf_dim = {"tabular": feature_dim, "sta": 64, "netvlad": 256}[config.backbone]
    head_cfg = MlpConfig(input_dim=alf_dim + 1, hidden_dims=list(config.head_hidden_dims))
    return FusionModel(config.backbone, head_cfg,
                       sta_cfg=config.sta, netvlad_cfg=config.netvlad)


def build_model(config: ExperimentConfig, feature_dim: int) -> torch.nn.Module:
    """One factory for every condition: the debiasing wrapper and the plain
    fusion branch are built around the identical backbone."""
    m_f = build_fusion_model(config, feature_dim)
    if config.method == "counterfactual":
        model = cf.CounterfactualModel(
            m_f,
            gender_hidden_dims=tuple(config.gender_hidden_dims),
            epsilon_mode=config.epsilon_mode,
        )
    else:
        model = m_f
    return seed_init(model, config.seed)


def _item_alf(model: FusionModel, item: SessionItem) -> torch.Tensor:
    if item.const_alf is not None:
        return item.const_alf
    if item.mix is not None:
        a, b, lam = item.mix
        return lam * _item_alf(model, a) + (1.0 - lam) * _item_alf(model, b)
    return model.session_feature(item.inputs)


def _alf_batch(model: FusionModel, items: list[SessionItem]) -> torch.Tensor:
    return torch.stack([_item_alf(model, it) for it in items])


def _apply_method(
    config: ExperimentConfig, manifest: CorpusManifest, items: list[SessionItem]
) -> list[SessionItem]:
    if config.method == "subsample":
        kept = baselines.sub_sample(manifest, config.seed)
        keep_ids = {r.session_id for r in kept.records}
        return [it for it in items if it.session_id in keep_ids]
    if config.method == "mixfeat":
        by_id = {it.session_id: it for it in items}
        if config.backbone == "tabular":
            augset = baselines.balance_by_augmentation(
                manifest, config.seed, config.mixfeat_alpha, config.mixfeat_beta
            )
            aug_items = [
                SessionItem(f"mixfeat-aug-{i:05d}", a.gender, a.label,
                            const_alf=torch.as_tensor(a.features, dtype=DTYPE))
                for i, a in enumerate(augset.augmented)
            ]
        else:
            # Audio backbones: interpolate session features inside the loop so
            # the mix always reflects the current backbone weights.
            plan = baselines.augmentation_plan(
                manifest, config.seed, config.mixfeat_alpha, config.mixfeat_beta
            )
            aug_items = [
                SessionItem(f"mixfeat-aug-{i:05d}", gender, label,
                            mix=(by_id[pid_i], by_id[pid_j], lam))
                for i, (gender, label, pid_i, pid_j, lam) in enumerate(plan)
            ]
        return items + aug_items
    return items


class TrainOutput(BaseModel):
    model_config = ConfigDict(frozen=True)

    run_dir: str
    checkpoint_path: str
    config_hash: str
    best_epoch: int
    best_loss: float
    effective_train_size: int


def _class_weights(labels: list[int]) -> torch.Tensor:
    counts = np.bincount(labels, minlength=2).astype(np.float64)
    counts = np.maximum(counts, 1.0)
    w = counts.sum() / (2.0 * counts)
    return torch.as_tensor(w, dtype=DTYPE)


def train(config: ExperimentConfig) -> TrainOutput:
    """Train one condition to its best-training-loss checkpoint.

    Counterfactual runs optimize the classification loss (branch networks)
    plus the similarity loss (empty-input vector only) in a single step; the
    baselines optimize plain cross-entropy on the fusion branch over the
    method-transformed training set. Never touches the test manifest.
    """
    manifest = load_manifest(config.train_manifest)
    items, feature_dim, norm_stats = build_session_items(
        manifest.records, config.backbone, fit_stats=True
    )
    if not items:
        raise ValueError("training manifest has no records")
    items = _apply_method(config, manifest, items)

    model = build_model(config, feature_dim)
    opt = torch.optim.Adam(model.parameters(), lr=config.effective_learning_rate())
    weights = _class_weights([it.label for it in items]) if config.class_weighting else None
    rng = np.random.default_rng(config.seed)
    is_cf = config.method == "counterfactual"

    best_loss = float("inf")
    best_epoch = -1
    best_state = None
    n = len(items)
    bs = config.optimizer.batch_size
    for epoch in range(config.optimizer.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, bs):
            batch = [items[i] for i in order[start:start + bs]]
            g = torch.as_tensor([it.gender for it in batch], dtype=DTYPE)
            y = torch.as_tensor([it.label for it in batch], dtype=torch.long)
            alf = _alf_batch(model if not is_cf else model.m_f, batch)
            if is_cf:
                out = model.branches(g, alf)
                loss = cf.loss_total(
                    cf.loss_cls(out.d_g, out.fused_factual, y, weights),
                    cf.loss_kl(out.fused_factual, out.fused_counterfactual),
                )
            else:
                logits = model(g, alf)
                loss = torch.nn.functional.cross_entropy(logits, y, weight=weights)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * len(batch)
        epoch_loss /= n
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)

    chash = config_hash(config)
    run_dir = Path(config.output_dir) / f"{config.backbone}-{config.method}-seed{config.seed}-{chash[:8]}"
    run_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = run_dir / "checkpoint.pt"
    blob = {"model_state": model.state_dict()}
    if norm_stats is not None:
        blob["norm_stats"] = {"mean": norm_stats.mean, "std": norm_stats.std}
    torch.save(blob, checkpoint_path)
    sidecar = {
        "config": config.model_dump(mode="json"),
        "config_hash": chash,
        "seed": config.seed,
        "corpus_hash": manifest_sha256(config.train_manifest),
        "best_epoch": best_epoch,
        "best_loss": best_loss,
        "effective_train_size": n,
        "feature_dim": feature_dim,
    }
    (run_dir / "checkpoint.json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return TrainOutput(
        run_dir=str(run_dir),
        checkpoint_path=str(checkpoint_path),
        config_hash=chash,
        best_epoch=best_epoch,
        best_loss=best_loss,
        effective_train_size=n,
    )


def load_checkpoint(checkpoint_path: str | Path) -> tuple[torch.nn.Module, ExperimentConfig, dict]:
    checkpoint_path = Path(checkpoint_path)
    sidecar_path = checkpoint_path.with_suffix(".json")
    if not checkpoint_path.exists() or not sidecar_path.exists():
        raise FileNotFoundError(f"checkpoint {checkpoint_path} (with sidecar) not found")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    config = ExperimentConfig.model_validate(sidecar["config"])
    blob = torch.load(checkpoint_path, weights_only=False)
    model = build_model(config, sidecar["feature_dim"])
    model.load_state_dict(blob["model_state"])
    model.eval()
    if "norm_stats" in blob:
        sidecar["norm_stats"] = dsp.NormStats(mean=blob["norm_stats"]["mean"],
                                              std=blob["norm_stats"]["std"])
    return model, config, sidecar


def evaluate(
    checkpoint_path: str | Path,
    test_manifest_path: str | Path,
    out_dir: Optional[str | Path] = None,
) -> RunResult:
    """Predict every test session with the condition's inference rule and emit
    the prediction log and the metrics report (both deterministic)."""
    started = time.perf_counter()
    model, config, sidecar = load_checkpoint(checkpoint_path)
    manifest = load_manifest(test_manifest_path)
    items, feature_dim, _ = build_session_items(
        manifest.records, config.backbone, norm_stats=sidecar.get("norm_stats")
    )
    if sidecar["feature_dim"] != feature_dim:
        raise ValueError(
            f"checkpoint expects feature dim {sidecar['feature_dim']}, test corpus has {feature_dim}"
        )

    is_cf = config.method == "counterfactual"
    predictions: list[PredictionRecord] = []
    debug_rows: list[dict] = []
    with torch.no_grad():
        for item in items:
            g = torch.as_tensor([item.gender], dtype=DTYPE)
            alf = _item_alf(model.m_f if is_cf else model, item).unsqueeze(0)
            if is_cf:
                out = model.branches(g, alf)
                tie_vec = out.tie()[0]
                pred = cf.predict_tie(tie_vec)
                tie_scores = [float(v) for v in tie_vec]
                if config.debug_log:
                    debug_rows.append({
                        "session_id": item.session_id,
                        "d_g": out.d_g[0].tolist(),
                        "d_f_factual": out.d_f_factual[0].tolist(),
                        "d_f_counterfactual": out.d_f_counterfactual[0].tolist(),
                        "fused_factual": out.fused_factual[0].tolist(),
                        "fused_counterfactual": out.fused_counterfactual[0].tolist(),
                        "tie": tie_scores,
                        "prediction": pred,
                    })
            else:
                logits = model(g, alf)[0]
                pred = cf.predict_factual(logits)
                tie_scores = None
            predictions.append(PredictionRecord(
                session_id=item.session_id,
                gender=item.gender,
                true_label=item.label,
                predicted_label=pred,
                tie_scores=tie_scores,
            ))

    report = fairness.fairness_report(predictions, config.metric_averaging)
    run_dir = Path(out_dir) if out_dir is not None else Path(checkpoint_path).parent
    run_dir.mkdir(parents=True, exist_ok=True)
    predictions_path = run_dir / "predictions.jsonl"
    write_jsonl(predictions, predictions_path)
    if debug_rows:
        with (run_dir / "debug.jsonl").open("w", encoding="utf-8") as fh:
            for row in debug_rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    report_path = run_dir / "report.json"
    report_payload = {
        "backbone": config.backbone,
        "method": config.method,
        "config_hash": sidecar["config_hash"],
        "checkpoint": str(checkpoint_path),
        "n_test": len(predictions),
        "metrics": report.model_dump(mode="json"),
    }
    report_path.write_text(json.dumps(report_payload, sort_keys=True, indent=2) + "\n",
                           encoding="utf-8")
    elapsed = time.perf_counter() - started
    (run_dir / "runmeta.json").write_text(
        json.dumps({"wall_clock_seconds": elapsed}) + "\n", encoding="utf-8"
    )
    return RunResult(
        config_hash=sidecar["config_hash"],
        backbone=config.backbone,
        method=config.method,
        report=report,
        n_test=len(predictions),
        checkpoint_path=str(checkpoint_path),
        predictions_path=str(predictions_path),
        report_path=str(report_path),
        wall_clock_seconds=elapsed,
    )


def run_experiment(config: ExperimentConfig) -> RunResult:
    trained = train(config)
    return evaluate(trained.checkpoint_path, config.test_manifest, out_dir=trained.run_dir)


def compare(configs: list[ExperimentConfig]) -> list[RunResult]:
    """Run every config against the shared test manifest; rows come back
    grouped by backbone with methods in the canonical order."""
    if not configs:
        raise ValueError("compare needs at least one config")
    test_paths = {c.test_manifest for c in configs}
    if len(test_paths) > 1:
        raise ValueError(f"configs must share one test manifest, got {sorted(test_paths)}")
    results = [run_experiment(c) for c in configs]
    results.sort(key=lambda r: (BACKBONE_ORDER.index(r.backbone), METHOD_ORDER.index(r.method)))
    return results


def comparison_rows(results: list[RunResult]) -> list[tuple[str, str, fairness.FairnessReport]]:
    return [(BACKBONE_LABELS[r.backbone], METHOD_LABELS[r.method], r.report) for r in results]


def emit_report(results: list[RunResult], fmt: Literal["json", "text"],
                out_path: Optional[str | Path] = None) -> str:
    """Render results deterministically; JSON re-emits byte-identically after
    a parse round trip."""
    if not results:
        raise ValueError("no results to report")
    if fmt == "json":
        payload = [r.model_dump(mode="json") for r in results]
        text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    elif fmt == "text":
        text = fairness.render_text_table(comparison_rows(results))
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(text, encoding="utf-8")
    return text
