import pytest
from fastapi.testclient import TestClient

from main import app


@pytest.fixture
def client():
    return TestClient(app)


@pytest.fixture
def config_path(synthetic_blob, write_config):
    return str(write_config(synthetic_blob))


def test_health(client):
    body = client.get("/health").json()
    assert body["ok"] is True
    assert body["sim_version"]


def test_classify_parallelogram(client):
    res = client.post("/classify", json={
        "oa": 1.0, "ab": 2.0, "bc": 1.0, "pivot_c": [2.0, 0.0], "psi_i": 0.5, "psi_e": 2.0,
    })
    assert res.status_code == 200
    body = res.json()
    assert body["policy"] == {"allow": True, "reason": "Allowed"}
    assert body["agent_trace"]["delegate"]["agent"] == "feasibility"


def test_classify_rejects_bad_lengths(client):
    res = client.post("/classify", json={
        "oa": -1.0, "ab": 2.0, "bc": 1.0, "pivot_c": [2.0, 0.0], "psi_i": 0.5, "psi_e": 2.0,
    })
    assert res.status_code == 422


def test_objective_endpoint(client, config_path):
    body = client.post("/objective", json={"config": config_path, "design": [20.0, 1.0, 1.0]}).json()
    assert body["feasible"] is True
    assert body["t_rms"] == pytest.approx(3.008032, rel=1e-6)
    outside = client.post("/objective", json={"config": config_path, "design": [99.0, 1.0, 1.0]}).json()
    assert outside["feasible"] is False
    assert outside["reason"] == "outside design box"


def test_pipeline_and_model_evaluation(client, config_path, tmp_path):
    sampled = client.post("/pipeline/sample", json={"config": config_path})
    assert sampled.status_code == 200
    assert sampled.json()["result"]["counts"] == [40] * 5

    fitted = client.post("/pipeline/fit", json={"config": config_path}).json()
    assert fitted["result"]["n_terms"] == 15

    body = client.post("/model/evaluate", json={
        "model": fitted["result"]["model"], "points": [[20.0, 1.0, 1.0]],
    }).json()
    assert body["n_terms"] == 15
    assert body["values"][0] == pytest.approx(3.008032, rel=1e-6)


def test_pipeline_errors(client, config_path, tmp_path):
    assert client.post("/pipeline/launch", json={"config": config_path}).status_code == 404
    missing = client.post("/pipeline/sample", json={"config": str(tmp_path / "nope.json")})
    assert missing.status_code == 400
    assert missing.json()["error"] == "ConfigError"
    no_cache = client.post("/pipeline/fit", json={"config": config_path})
    assert no_cache.status_code == 400
    assert no_cache.json()["error"] == "CacheIntegrityError"
