import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.core.config import settings
from app.main import app


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


def test_root(client):
    response = client.get("/")
    assert response.status_code == 200
    assert response.json()["service"] == settings.APP_NAME


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "healthy", "service": "band-structure"}
    assert "X-Process-Time" in response.headers


def test_schedule(client):
    response = client.post("/api/v1/bands/schedule", json={"kappa": 4})
    assert response.status_code == 200
    body = response.json()
    assert body["points"] == 16
    assert body["schedule"][0] == {"i": 0, "j": 0, "stage": "row0", "sources": []}
    last = body["schedule"][-1]
    assert (last["i"], last["j"], last["stage"]) == (3, 3, "rows")
    assert last["sources"] == [[0, 3], [1, 3], [2, 3]]


def test_schedule_rejects_small_grid(client):
    assert client.post("/api/v1/bands/schedule", json={"kappa": 1}).status_code == 422


def test_solve_homogeneous_corner(client):
    payload = {"n0": 4, "m0": 4, "levels": 2, "k1": np.pi, "k2": np.pi, "p": 4, "tol": 1e-6}
    response = client.post("/api/v1/bands/solve", json=payload)
    assert response.status_code == 200
    body = response.json()
    assert body["converged"]
    assert body["grid"] == [16, 16]
    assert len(body["eigenvalues"]) == 4
    assert np.allclose(body["eigenvalues"], 2 * np.pi**2, rtol=0.03)


def test_solve_disc(client):
    payload = {
        "n0": 4,
        "m0": 4,
        "levels": 1,
        "permittivity": {"kind": "disc", "center": [0.5, 0.5], "radius": 0.3, "eps_inside": 8.0},
        "k1": 1.0,
        "k2": 0.5,
        "p": 2,
    }
    response = client.post("/api/v1/bands/solve", json=payload)
    assert response.status_code == 200
    assert all(v > 0 for v in response.json()["eigenvalues"])


def test_solve_rejects_oversized_grid(client, monkeypatch):
    monkeypatch.setattr(settings, "MAX_API_CELLS", 100)
    response = client.post("/api/v1/bands/solve", json={"n0": 8, "m0": 8, "levels": 1, "k1": 0.0, "k2": 0.0})
    assert response.status_code == 400
    assert response.json()["error"] == "Invalid Input"


def test_solve_rejects_mismatched_raster(client):
    payload = {
        "n0": 4,
        "m0": 4,
        "levels": 1,
        "permittivity": {"kind": "raster", "n": 2, "m": 2, "values": [1.0, 2.0, 3.0, 4.0]},
        "k1": 0.3,
        "k2": 0.3,
    }
    response = client.post("/api/v1/bands/solve", json=payload)
    assert response.status_code == 400
    assert "raster" in response.json()["message"]


def test_solve_validates_body(client):
    assert client.post("/api/v1/bands/solve", json={"k1": 0.0}).status_code == 422
    assert client.post("/api/v1/bands/solve", json={"k1": 0.0, "k2": 0.0, "p": 0}).status_code == 422
