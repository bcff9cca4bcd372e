"""
Pruebas de la API HTTP
"""


def test_root_and_health(client):
    assert client.get("/").json()["status"] == "running"
    assert client.get("/health").json() == {"status": "healthy"}


def test_stability_report_endpoint(client):
    response = client.post("/api/stability/report", json={
        "model": {"family": "quadratic", "Q1": [[4.0]]},
        "sensor": {"b": 1.0, "sigma2": 1.0},
        "initial": {"P0": [[0.1]]},
    })
    assert response.status_code == 200
    body = response.json()
    assert body["lambda_S"] == 8.0
    assert body["lambda_R"] == 8.0
    assert body["lambda_K"] == "inf"


def test_stability_report_rejects_unstable_signal(client):
    response = client.post("/api/stability/report", json={
        "model": {"family": "linear", "A": [[1.0]]},
    })
    assert response.status_code == 422


def test_stability_report_schema_errors(client):
    response = client.post("/api/stability/report", json={"model": {"family": "quadratic", "beta": -1}})
    assert response.status_code == 422


def test_validate_endpoint(client, base_document):
    response = client.post("/api/experiments/validate", json=base_document)
    assert response.status_code == 200
    assert response.json() == []


def test_run_and_registry(client, base_document):
    response = client.post("/api/experiments/run", json=base_document)
    assert response.status_code == 200
    manifest = response.json()
    assert manifest["status"] == "ok"

    runs = client.get("/api/experiments/runs").json()
    assert len(runs) == 1
    run_id = runs[0]["id"]
    detail = client.get(f"/api/experiments/runs/{run_id}").json()
    assert detail["config_hash"] == manifest["config_hash"]
    assert {f["path"] for f in detail["files"]} == set(manifest["output_files"])


def test_missing_run_is_404(client):
    response = client.get("/api/experiments/runs/999")
    assert response.status_code == 404
    assert response.json()["detail"] == "Corrida no encontrada"
