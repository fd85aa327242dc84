import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.models.schemas import FilterParams
from app.services.network import topology_to_document
from app.services.topology_builder import chain_topology


@pytest.fixture
def client():
    with TestClient(app) as c:
        yield c


def test_root_and_health(client):
    assert client.get("/health").json() == {"status": "healthy"}
    assert "/sweep" in client.get("/").json()["endpoints"].values()


def test_analyze(client):
    response = client.post("/analyze", json={"rho_m": 0.5, "l_min": 1, "l_max": 3})
    assert response.status_code == 200
    body = response.json()
    assert [r["l"] for r in body] == [1, 2, 3]
    assert body[0]["p_fw"] == pytest.approx(0.03125)


def test_analyze_validation(client):
    assert client.post("/analyze", json={"p_sc": 2}).status_code == 422
    assert client.post("/analyze", json={"hash_bits": 24}).status_code == 400
    assert client.post("/analyze", json={"l_min": 5, "l_max": 2}).status_code == 400


def test_sweep(client):
    body = client.post("/sweep", json={}).json()
    assert len(body) == 16
    assert {r["scheme"] for r in body} == {"efid", "lipsin"}


def test_replay_attack(client):
    fresh = client.post("/attack", json={"mode": "replay", "scheme": "efid", "trials": 50}).json()
    rotated = client.post("/attack", json={"mode": "replay", "scheme": "efid", "trials": 50, "rotations": 1}).json()
    assert fresh[0]["successes"] == 50
    assert rotated[0]["successes"] == 0


def test_correlation_attack(client):
    body = client.post("/attack", json={"mode": "corr", "trials": 1000}).json()
    assert [r["source"] for r in body] == ["fid", "efid"]


def test_simulate_upload(client):
    doc = topology_to_document(chain_topology(4, FilterParams()))
    response = client.post(
        "/simulate",
        files={"file": ("chain.json", doc, "application/json")},
        data={"flows": "3", "seed": "1"},
    )
    assert response.status_code == 200
    body = response.json()
    assert len(body) == 3
    assert all(r["delivered"] for r in body)

    tampered = client.post(
        "/simulate",
        files={"file": ("chain.json", doc, "application/json")},
        data={"tamper": "true"},
    ).json()
    assert not tampered[0]["delivered"]


def test_simulate_rejects_bad_uploads(client):
    response = client.post("/simulate", files={"file": ("chain.txt", "{}", "text/plain")})
    assert response.status_code == 400
    response = client.post("/simulate", files={"file": ("bad.json", '{"nodes": []}', "application/json")})
    assert response.status_code == 400
    assert "params" in response.json()["detail"]
