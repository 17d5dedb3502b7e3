import json

import httpx
import pytest
from fastapi.testclient import TestClient

import operc.cli as cli_mod
from operc.runs import ThetaConfig, build_theta
from operc.service import app
from operc.tables import table_from_payload

client = TestClient(app)


def test_health():
    r = client.get("/v1/health")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok"
    assert body["hash_spec"] == "splitmix64-cascade-v1"


def test_theta_endpoint_matches_local():
    cfg = {"p": 0.7, "horizon": 40, "replicas": 300, "seed": 11}
    r = client.post("/v1/theta", json=cfg)
    assert r.status_code == 200
    payload = r.json()
    local = build_theta(ThetaConfig(**cfg))
    assert payload["columns"] == local.columns
    assert payload["rows"] == local.canon_rows()
    assert payload["metadata"]["config_digest"] == local.metadata["config_digest"]
    # a table rebuilt from the payload renders byte-identically
    assert table_from_payload(payload).to_csv_text() == local.to_csv_text()


def test_validation_errors_are_422():
    assert client.post("/v1/theta", json={"p": 1.5}).status_code == 422
    assert client.post("/v1/theta", json={"p": 0.5, "bogus": 1}).status_code == 422
    assert client.post("/v1/block", json={"delta": "3/10"}).status_code == 422


def test_estimator_errors_are_400():
    r = client.post(
        "/v1/rho",
        json={"p": 0.3, "depth": 60, "replicas": 150, "alpha_replicas": 200, "alpha_n_levels": 40, "seed": 2},
    )
    assert r.status_code == 400
    assert r.json()["detail"]["error"] == "estimator"


def test_oracle_endpoint_with_document():
    r = client.post("/v1/oracle", json={"op": "tau-dist", "p": 0.6, "n_max": 3})
    assert r.status_code == 200
    body = r.json()
    assert body["document"]["op"] == "tau-dist"
    # death at 1 has probability exactly 1 - p, with p the dyadic value of the float
    probs = {row[0]: row[2] for row in body["rows"]}
    assert probs[1.0] == pytest.approx(0.4)
    assert probs[3.0] == pytest.approx(0.6 * 0.4**3)


def test_block_endpoint_geometry_document():
    r = client.post("/v1/block", json={"p": 0.9, "replicas": 200, "eta_replicas": 50, "eta_levels": 2, "footprint_range": 2})
    assert r.status_code == 200
    doc = r.json()["document"]
    assert doc["rising_tube"][0]["exact"] == ["0", "-9/4"]
    assert doc["center"]["float"] == [0.0, 0.0]


def test_cli_thin_client_matches_local(tmp_path, monkeypatch):
    # route the CLI's HTTP call through the in-process test app
    def fake_post(url, json=None, timeout=None):
        path = url.split("http://svc", 1)[1]
        return client.post(path, json=json)

    monkeypatch.setattr(httpx, "post", fake_post)
    out_remote = tmp_path / "remote"
    rc = cli_mod.main(
        ["theta", "--p", "0.7", "--horizon", "40", "--replicas", "300", "--seed", "11",
         "--out", str(out_remote), "--server", "http://svc"]
    )
    assert rc == 0
    out_local = tmp_path / "local"
    rc = cli_mod.main(
        ["theta", "--p", "0.7", "--horizon", "40", "--replicas", "300", "--seed", "11", "--out", str(out_local)]
    )
    assert rc == 0
    assert (out_remote / "theta.csv").read_bytes() == (out_local / "theta.csv").read_bytes()
