import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from zslkit.service import models
from zslkit.service.app import create_app
from zslkit.service.handlers import run_build_graph, run_synth


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("svc") / "fix"
    run_synth(models.SynthRequest(out_dir=str(out), seed=5, samples_per_class=4))
    return out


@pytest.fixture(scope="module")
def graph_dir(fixture_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("svc-graph")
    run_build_graph(models.BuildGraphRequest(
        class_list=str(fixture_dir / "classes.tsv"),
        taxonomy=str(fixture_dir / "taxonomy.tsv"),
        word_vectors=str(fixture_dir / "word_vectors.txt"),
        out_dir=str(out),
    ))
    return out


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"


def test_synth_endpoint_writes_fixture(client, tmp_path):
    resp = client.post("/synth", json={"out_dir": str(tmp_path / "fx"), "seed": 1,
                                       "samples_per_class": 2})
    assert resp.status_code == 200
    body = resp.json()
    assert body["n_classes"] == 30
    assert (tmp_path / "fx" / "classes.tsv").exists()
    assert set(body["files"]) >= {"classes", "taxonomy", "word_vectors",
                                  "gt_classifiers", "features"}


def test_build_graph_endpoint(client, fixture_dir, tmp_path):
    resp = client.post("/graph/build", json={
        "class_list": str(fixture_dir / "classes.tsv"),
        "taxonomy": str(fixture_dir / "taxonomy.tsv"),
        "word_vectors": str(fixture_dir / "word_vectors.txt"),
        "out_dir": str(tmp_path / "g"),
    })
    assert resp.status_code == 200
    body = resp.json()
    assert body["n"] == 30 and body["n_seen"] == 20
    assert body["edges_taxonomy"] == 29  # tree over 30 nodes
    stats = json.loads((tmp_path / "g" / "stats.json").read_text())
    assert stats["edges_knn"] == body["edges_knn"]
    for name in ("graph_a.tsv", "graph_b.tsv", "graph_c.tsv", "graph_a_hat.tsv"):
        assert (tmp_path / "g" / name).exists()


def test_train_then_eval_roundtrip(client, fixture_dir, graph_dir, tmp_path):
    ckpt = tmp_path / "model.ckpt"
    loss_log = tmp_path / "loss.csv"
    resp = client.post("/train", json={
        "graph_dir": str(graph_dir),
        "class_list": str(fixture_dir / "classes.tsv"),
        "word_vectors": str(fixture_dir / "word_vectors.txt"),
        "gt_classifiers": str(fixture_dir / "gt_classifiers.tsv"),
        "out_checkpoint": str(ckpt),
        "loss_log": str(loss_log),
        "config": {"epochs": 5, "seed": 2},
    })
    assert resp.status_code == 200
    body = resp.json()
    assert body["epochs_run"] == 5
    assert ckpt.exists()
    assert loss_log.read_text().startswith("epoch,loss\n")

    resp = client.post("/eval", json={
        "class_list": str(fixture_dir / "classes.tsv"),
        "features": str(fixture_dir / "features.tsv"),
        "checkpoint": str(ckpt),
        "graph_dir": str(graph_dir),
        "word_vectors": str(fixture_dir / "word_vectors.txt"),
        "setting": "conventional",
    })
    assert resp.status_code == 200
    body = resp.json()
    assert set(body["hit_at"]) == {"1", "2", "5", "10", "20"}
    assert body["n_samples"] == 40


def test_eval_with_oracle_classifiers(client, fixture_dir):
    resp = client.post("/eval", json={
        "class_list": str(fixture_dir / "classes.tsv"),
        "features": str(fixture_dir / "features.tsv"),
        "classifiers": str(fixture_dir / "oracle_classifiers.tsv"),
        "setting": "conventional",
        "per_class": True,
    })
    assert resp.status_code == 200
    body = resp.json()
    assert body["hit_at"]["1"] >= 0.95
    assert body["per_class_hit1"] is not None


def test_eval_requires_exactly_one_source(client, fixture_dir):
    resp = client.post("/eval", json={
        "class_list": str(fixture_dir / "classes.tsv"),
        "features": str(fixture_dir / "features.tsv"),
    })
    assert resp.status_code == 400
    assert resp.json()["error"] == "InputError"


def test_missing_file_is_client_error(client, tmp_path):
    resp = client.post("/graph/build", json={
        "class_list": str(tmp_path / "nope.tsv"),
        "taxonomy": str(tmp_path / "nope2.tsv"),
        "word_vectors": str(tmp_path / "nope3.txt"),
        "out_dir": str(tmp_path / "out"),
    })
    assert resp.status_code == 400
    assert "nope" in resp.json()["detail"]


def test_validation_error_is_422(client, tmp_path):
    resp = client.post("/graph/build", json={
        "class_list": "x", "taxonomy": "y", "word_vectors": "z",
        "out_dir": str(tmp_path), "k": 0,
    })
    assert resp.status_code == 422


def test_gradcheck_endpoint(client):
    resp = client.post("/gradcheck", json={"model_id": 4, "seed": 0})
    assert resp.status_code == 200
    body = resp.json()
    assert body["passed"] is True
    assert body["max_relative_error"] < body["tolerance"] == 1e-4


def test_arch_mismatch_rejected(client, fixture_dir, graph_dir, tmp_path):
    ckpt = tmp_path / "model.ckpt"
    client.post("/train", json={
        "graph_dir": str(graph_dir),
        "class_list": str(fixture_dir / "classes.tsv"),
        "word_vectors": str(fixture_dir / "word_vectors.txt"),
        "gt_classifiers": str(fixture_dir / "gt_classifiers.tsv"),
        "out_checkpoint": str(ckpt),
        "config": {"epochs": 1, "seed": 2},
    })
    # word vectors of the wrong width for the stored arch
    wrong = tmp_path / "wv.txt"
    lines = []
    for line in (fixture_dir / "word_vectors.txt").read_text().splitlines():
        tok, _, rest = line.partition(" ")
        lines.append(tok + " " + " ".join(rest.split(" ")[:-1]))
    wrong.write_text("\n".join(lines) + "\n")
    resp = client.post("/eval", json={
        "class_list": str(fixture_dir / "classes.tsv"),
        "features": str(fixture_dir / "features.tsv"),
        "checkpoint": str(ckpt),
        "graph_dir": str(graph_dir),
        "word_vectors": str(wrong),
    })
    assert resp.status_code == 400
    assert "embedding dim" in resp.json()["detail"]
