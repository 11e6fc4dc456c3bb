"""Command-line client for the service operations.

Every subcommand builds the same request models the HTTP endpoints accept and
executes the service operation in-process, so the CLI works without a running
server; `serve` starts the HTTP service itself.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import fairness
from .corpus import SynthConfig
from .harness import (
    BACKBONE_LABELS,
    BACKBONE_ORDER,
    METHOD_LABELS,
    METHOD_ORDER,
    ExperimentConfig,
)
from .service import ops, schemas


def _fail(message: str) -> None:
    raise click.ClickException(message)


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        _fail(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        _fail(f"{path} is not valid JSON: {exc}")


@click.group()
def main():
    """Counterfactual debiasing toolkit."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def synth(config_path: str, out_dir: str):
    """Generate a synthetic train/test corpus pair."""
    cfg = SynthConfig.model_validate(_load_json(config_path))
    try:
        resp = ops.synth_corpus(schemas.SynthRequest(config=cfg, out_dir=out_dir))
    except ValueError as exc:
        _fail(str(exc))
    for name, path in (resp.paths or {}).items():
        click.echo(f"{name}: {path}")


def _parse_gender_map(spec: str) -> dict[int, int] | None:
    if spec == "identity":
        return None
    if spec == "flipped":
        return {0: 1, 1: 0}
    try:
        return {int(a): int(b) for a, b in (pair.split(":") for pair in spec.split(","))}
    except ValueError:
        _fail(f"bad --gender-map {spec!r}; use 'identity', 'flipped', or '0:1,1:0'")


@main.command()
@click.option("--root", required=True, type=click.Path(exists=True))
@click.option("--threshold", default=10, show_default=True, type=int,
              help="PHQ-8 cutoff: score >= threshold is Depressed.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--gender-map", default="identity", show_default=True,
              help="Map from score-table gender values to codes (0=male, 1=female).")
@click.option("--exclude", multiple=True, help="Session ids to skip.")
def ingest(root: str, threshold: int, out_dir: str, gender_map: str, exclude: tuple[str, ...]):
    """Ingest a DAIC-WOZ-layout corpus into split manifests."""
    req = schemas.IngestRequest(
        root=root,
        phq_threshold=threshold,
        gender_map=_parse_gender_map(gender_map),
        exclude=list(exclude) or None,
        out_dir=out_dir,
    )
    try:
        resp = ops.ingest_corpus(req)
    except (ValueError, FileNotFoundError) as exc:
        _fail(str(exc))
    for split in resp.splits:
        click.echo(f"{split.split_name}: {split.n_records} records {split.distribution} -> {split.path}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def train(config_path: str):
    """Train one experiment configuration."""
    cfg = ExperimentConfig.model_validate(_load_json(config_path))
    try:
        resp = ops.train_experiment(schemas.TrainRequest(config=cfg))
    except (ValueError, FileNotFoundError) as exc:
        _fail(str(exc))
    click.echo(f"checkpoint: {resp.checkpoint_path}")
    click.echo(f"best epoch {resp.best_epoch}, training loss {resp.best_loss:.6f}, "
               f"{resp.effective_train_size} training samples")


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--test", "test_manifest", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default=None, type=click.Path())
def eval_cmd(checkpoint: str, test_manifest: str, out_dir: str | None):
    """Evaluate a checkpoint on a test manifest."""
    try:
        resp = ops.evaluate_checkpoint(schemas.EvaluateRequest(
            checkpoint=checkpoint, test_manifest=test_manifest, out_dir=out_dir))
    except (ValueError, FileNotFoundError) as exc:
        _fail(str(exc))
    r = resp.result
    click.echo(fairness.render_text_table(
        [(BACKBONE_LABELS[r.backbone], METHOD_LABELS[r.method], r.report)]), nl=False)
    click.echo(f"predictions: {r.predictions_path}")
    click.echo(f"report: {r.report_path}")


def _expand_grid(payload) -> list[ExperimentConfig]:
    if isinstance(payload, list):
        return [ExperimentConfig.model_validate(c) for c in payload]
    if "configs" in payload:
        return [ExperimentConfig.model_validate(c) for c in payload["configs"]]
    if "base" in payload:
        configs = []
        for backbone in payload.get("backbones", [payload["base"].get("backbone")]):
            for method in payload.get("methods", [payload["base"].get("method")]):
                for seed in payload.get("seeds", [payload["base"].get("seed", 0)]):
                    merged = dict(payload["base"], backbone=backbone, method=method, seed=seed)
                    configs.append(ExperimentConfig.model_validate(merged))
        return configs
    _fail("grid file must be a list of configs, {'configs': [...]}, or {'base': ..., 'backbones': ..., 'methods': ...}")


@main.command()
@click.option("--grid", "grid_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default=None, type=click.Path(),
              help="Where to write comparison.json/.txt (default: first config's output dir).")
def compare(grid_path: str, out_dir: str | None):
    """Train and evaluate a grid of configurations against one test manifest."""
    configs = _expand_grid(_load_json(grid_path))
    try:
        resp = ops.compare_experiments(schemas.CompareRequest(configs=configs))
    except (ValueError, FileNotFoundError) as exc:
        _fail(str(exc))
    target = Path(out_dir) if out_dir else Path(configs[0].output_dir)
    target.mkdir(parents=True, exist_ok=True)
    from .harness import emit_report

    emit_report(resp.results, "json", target / "comparison.json")
    (target / "comparison.txt").write_text(resp.table, encoding="utf-8")
    click.echo(resp.table, nl=False)
    click.echo(f"written: {target / 'comparison.json'}")


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text",
              show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path())
def report(in_dir: str, fmt: str, out_path: str | None):
    """Re-render the reports found under a results directory."""
    payloads = []
    for path in sorted(Path(in_dir).rglob("report.json")):
        payloads.append(json.loads(path.read_text(encoding="utf-8")))
    if not payloads:
        _fail(f"no report.json files under {in_dir}")
    payloads.sort(key=lambda p: (BACKBONE_ORDER.index(p["backbone"]), METHOD_ORDER.index(p["method"])))
    if fmt == "json":
        text = json.dumps(payloads, sort_keys=True, indent=2) + "\n"
    else:
        rows = [
            (BACKBONE_LABELS[p["backbone"]], METHOD_LABELS[p["method"]],
             fairness.FairnessReport.model_validate(p["metrics"]))
            for p in payloads
        ]
        text = fairness.render_text_table(rows)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    click.echo(text, nl=False)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host: str, port: int):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
