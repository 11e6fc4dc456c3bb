"""HTTP service endpoints."""

import math

import pytest
from fastapi.testclient import TestClient

from cfdebias.corpus import generate_synthetic, save_manifests
from cfdebias.service.app import create_app

from conftest import make_synth_config


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


class TestBasics:
    def test_health(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        assert resp.json()["status"] == "ok"

    def test_fuse(self, client):
        resp = client.post("/counterfactual/fuse", json={"d_g": [0.0, 0.0], "d_f": [0.0, 0.0]})
        assert resp.status_code == 200
        assert resp.json()["fused"] == pytest.approx([math.log(0.5)] * 2)

    def test_tie(self, client):
        resp = client.post("/counterfactual/tie", json={
            "fused_factual": [-0.048587, -1.313262],
            "fused_counterfactual": [-0.126928, -1.313262],
        })
        assert resp.status_code == 200
        body = resp.json()
        assert body["tie"] == pytest.approx([0.078341, 0.0], abs=1e-6)
        assert body["predicted_label"] == 0

    def test_fuse_rejects_wrong_length(self, client):
        resp = client.post("/counterfactual/fuse", json={"d_g": [0.0], "d_f": [0.0, 0.0]})
        assert resp.status_code == 422


class TestFairnessEndpoint:
    def test_report(self, client):
        records = (
            [dict(session_id=f"f{i}", gender=1, true_label=0, predicted_label=0) for i in range(17)]
            + [dict(session_id=f"fd{i}", gender=1, true_label=1, predicted_label=1) for i in range(7)]
            + [dict(session_id=f"m{i}", gender=0, true_label=0, predicted_label=0) for i in range(16)]
            + [dict(session_id=f"md{i}", gender=0, true_label=1, predicted_label=1) for i in range(7)]
        )
        resp = client.post("/fairness/report", json={"records": records})
        assert resp.status_code == 200
        body = resp.json()
        assert body["accuracy"] == 1.0
        assert body["ea"] == 0.0
        assert body["di"] == pytest.approx(23 / 24)

    def test_na_ratio_serializes_as_null(self, client):
        records = [
            dict(session_id="a", gender=1, true_label=0, predicted_label=1),
            dict(session_id="b", gender=0, true_label=0, predicted_label=0),
        ]
        resp = client.post("/fairness/report", json={"records": records})
        assert resp.status_code == 200
        assert resp.json()["di"] is None

    def test_empty_records_rejected(self, client):
        resp = client.post("/fairness/report", json={"records": []})
        assert resp.status_code == 422


class TestCorpusEndpoints:
    def test_synth_inline(self, client):
        cfg = make_synth_config(n_train=20, n_test=10).model_dump()
        resp = client.post("/corpus/synth", json={"config": cfg})
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["train"]["records"]) == 20
        assert len(body["test"]["records"]) == 10

    def test_validate_distribution(self, client, tmp_path):
        train, _ = generate_synthetic(make_synth_config())
        path = tmp_path / "train.json"
        train.save(path)
        resp = client.post("/corpus/validate", json={
            "manifest_path": str(path),
            "expected": {"0,0": 60, "0,1": 19, "1,0": 39, "1,1": 24},
        })
        assert resp.status_code == 200
        assert resp.json() == {"ok": True, "diff": {}}

    def test_validate_session_record(self, client):
        resp = client.post("/records/validate", json={
            "record": {"session_id": "x", "gender": 2, "label": 0, "audio_path": "a.wav"}
        })
        assert resp.status_code == 200
        body = resp.json()
        assert not body["ok"]
        assert "gender not in {0,1}" in body["violations"]

    def test_ingest_bad_root_is_client_error(self, client):
        resp = client.post("/corpus/ingest", json={"root": "/nonexistent/corpus"})
        assert resp.status_code == 400


@pytest.fixture(scope="module")
def corpus_paths(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc_corpus")
    train, test = generate_synthetic(make_synth_config(n_train=60, n_test=24, seed=2))
    return save_manifests({"train_combined": train, "test": test}, root)


class TestExperimentEndpoints:
    def config_payload(self, corpus_paths, out_dir, method="counterfactual"):
        return {
            "backbone": "tabular",
            "method": method,
            "train_manifest": corpus_paths["train_combined"],
            "test_manifest": corpus_paths["test"],
            "output_dir": str(out_dir),
            "optimizer": {"epochs": 2, "batch_size": 16},
            "seed": 0,
            "head_hidden_dims": [8],
        }

    def test_train_then_evaluate_then_predict(self, client, corpus_paths, tmp_path_factory):
        out_dir = tmp_path_factory.mktemp("svc_runs")
        resp = client.post("/experiments/train",
                           json={"config": self.config_payload(corpus_paths, out_dir)})
        assert resp.status_code == 200
        checkpoint = resp.json()["checkpoint_path"]

        resp = client.post("/experiments/evaluate", json={
            "checkpoint": checkpoint, "test_manifest": corpus_paths["test"]})
        assert resp.status_code == 200
        result = resp.json()["result"]
        assert result["method"] == "counterfactual"
        assert set(result["report"]) == {"f1", "accuracy", "recall", "male_f1",
                                         "female_f1", "ea", "di"}

        train_manifest = generate_synthetic(make_synth_config(n_train=60, n_test=24, seed=2))[1]
        records = [r.model_dump(exclude_none=True) for r in train_manifest.records[:6]]
        resp = client.post("/models/predict", json={"checkpoint": checkpoint, "records": records})
        assert resp.status_code == 200
        preds = resp.json()["predictions"]
        assert len(preds) == 6
        assert all(p["tie_scores"] is not None for p in preds)

    def test_evaluate_missing_checkpoint_is_client_error(self, client, corpus_paths):
        resp = client.post("/experiments/evaluate", json={
            "checkpoint": "/nonexistent/checkpoint.pt",
            "test_manifest": corpus_paths["test"]})
        assert resp.status_code == 400

    def test_compare_over_http(self, client, corpus_paths, tmp_path_factory):
        out_dir = tmp_path_factory.mktemp("svc_cmp")
        payload = {"configs": [
            self.config_payload(corpus_paths, out_dir, method="counterfactual"),
            self.config_payload(corpus_paths, out_dir, method="none"),
        ]}
        resp = client.post("/experiments/compare", json=payload)
        assert resp.status_code == 200
        body = resp.json()
        assert [r["method"] for r in body["results"]] == ["none", "counterfactual"]
        assert body["table"].splitlines()[0].startswith("Model")
