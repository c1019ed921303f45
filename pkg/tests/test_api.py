from __future__ import annotations

import pytest

import src.api.main as api
from src.core.loaders import write_streams
from src.core.models import ModelConfig
from src.core.network import build_model
from src.core.training import save_checkpoint


@pytest.fixture()
def client():
    api.app.config.update(TESTING=True)
    return api.app.test_client()


@pytest.fixture(scope="module")
def payload(tmp_path_factory, streams):
    paths = write_streams(streams, tmp_path_factory.mktemp("upload"))
    body = {key: paths[f"{key}.csv"].read_text(encoding="utf-8") for key in ("points", "trajectory", "gaze")}
    return {**body, "resolution": 8}


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.get_json()["status"] == "ok"


def test_lift(client, payload):
    resp = client.post("/lift", json=payload)
    assert resp.status_code == 200
    data = resp.get_json()
    assert data["resolution"] == 8
    assert set(data["levels"]) == {"foveal", "central", "peripheral", "orientation"}
    assert data["scene_count"] > 0


def test_lift_missing_stream(client, payload):
    resp = client.post("/lift", json={"points": payload["points"]})
    assert resp.status_code == 400
    assert resp.get_json()["details"] == ["trajectory", "gaze"]


def test_lift_malformed_stream(client, payload):
    resp = client.post("/lift", json={**payload, "trajectory": "t,qw\n0,oops\n"})
    assert resp.status_code == 400


def test_api_key_required(client, payload, monkeypatch):
    monkeypatch.setattr(api, "API_KEY", "secret")
    assert client.post("/lift", json=payload).status_code == 401
    assert client.post("/lift", json=payload, headers={"X-API-Key": "secret"}).status_code == 200


def test_forecast_without_checkpoint(client, payload, monkeypatch):
    monkeypatch.setattr(api, "FOVS_CHECKPOINT", None)
    assert client.post("/forecast", json=payload).status_code == 503


def test_forecast(client, payload, tmp_path, monkeypatch):
    cfg = ModelConfig(feature_dim=8, encoder_widths=(2, 4, 4), layers=1, heads=2, resolution=8, frames=2)
    path = save_checkpoint(build_model(cfg), tmp_path / "model.fvsm")
    monkeypatch.setattr(api, "FOVS_CHECKPOINT", str(path))
    resp = client.post("/forecast", json={**payload, "n_steps": 3})
    assert resp.status_code == 200
    data = resp.get_json()
    assert set(data["levels"]) == {"foveal", "central", "peripheral", "orientation"}
    assert len(data["gaze_2d"]["points"]) == 3
