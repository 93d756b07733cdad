import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient

from dcpa.dataset import build_dataset, simulate_batch
from dcpa.grid import build_grid
from dcpa.neuralop import OperatorConfig
from dcpa.sampling import SamplingConfig, make_scenarios
from dcpa.service import Envelope, WhatIfService, create_app
from dcpa.training import TrainConfig, train_stage

from .conftest import make_single_server_scene


@pytest.fixture(scope="module")
def served(tmp_path_factory):
    scene = make_single_server_scene()
    grid = build_grid(scene, 0.25)
    cfg = SamplingConfig(n_scenarios=6, seed=31, acu_flow_fixed=0.1)
    scenarios = make_scenarios(scene, cfg)
    solutions = simulate_batch(scene, grid, scenarios)
    ds = build_dataset(scene, grid, scenarios, solutions, (4, 1, 1), 31,
                       tmp_path_factory.mktemp("svcds"),
                       sampling_config=cfg.to_obj())
    op = OperatorConfig(d_model=24, n_blocks=1, n_heads=2, fourier_m=6)
    tc = TrainConfig(epochs=2, batch_scenarios=2, points_per_scenario=256,
                     val_points_per_scenario=256, seed=9)
    model, _ = train_stage("fluid", scene, ds, tc, op)
    model, _ = train_stage("thermal", scene, ds, tc, fluid_model=model)
    envelope = Envelope.from_sampling_config(cfg.to_obj())
    service = WhatIfService(scene, model, resolution=0.25, envelope=envelope)
    app = create_app(service)
    return scene, service, TestClient(app)


def test_health(served):
    _, _, client = served
    r = client.get("/api/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok"}


def test_scene_endpoint(served):
    scene, _, client = served
    r = client.get("/api/scene")
    assert r.status_code == 200
    body = r.json()
    assert len(body["acus"]) == 1
    assert len(body["servers"]) == 1
    assert body["format_version"] == 1


def test_grid_endpoint(served):
    _, service, client = served
    r = client.get("/api/grid")
    assert r.status_code == 200
    body = r.json()
    assert body["dims"] == [16, 16, 12]
    assert body["resolution"] == 0.25
    assert "default_slice" in body


def test_whatif_surrogate_roundtrip(served):
    _, service, client = served
    r = client.post("/api/whatif", json={"engine": "surrogate"})
    assert r.status_code == 200
    body = r.json()
    assert body["engine"] == "surrogate"
    assert body["latency_ms"] > 0
    temps = body["slice"]["temps_c"]
    assert len(temps) == 16 and len(temps[0]) == 16  # z-slice is (ny, nx)
    assert len(body["server_inlet_temps_c"]) == 1
    assert set(body["stats"]) == {"median_inlet_c", "p95_inlet_c", "max_inlet_c"}


def test_whatif_slice_has_nulls_at_solids(served):
    _, service, client = served
    # rack occupies z < 2, so a low z-slice crosses it
    r = client.post("/api/whatif", json={"engine": "surrogate",
                                         "slice": {"axis": "z", "index": 2}})
    temps = r.json()["slice"]["temps_c"]
    flat = [v for row in temps for v in row]
    assert any(v is None for v in flat)
    assert any(v is not None for v in flat)


def test_whatif_malformed_body(served):
    _, _, client = served
    r = client.post("/api/whatif", content=b"{not json",
                    headers={"content-type": "application/json"})
    assert r.status_code == 400
    assert r.json()["code"] == "E_SCHEMA"


def test_whatif_bad_engine(served):
    _, _, client = served
    r = client.post("/api/whatif", json={"engine": "warp-drive"})
    assert r.status_code == 400
    assert r.json()["code"] == "E_SCHEMA"


def test_whatif_out_of_envelope_surrogate(served):
    _, _, client = served
    r = client.post("/api/whatif", json={
        "engine": "surrogate",
        "acu_overrides": {"0": {"supply_temp_c": 30.0}}})
    assert r.status_code == 400
    assert r.json()["code"] == "E_RANGE"


def test_whatif_out_of_envelope_oracle_warns(served):
    _, _, client = served
    r = client.post("/api/whatif", json={
        "engine": "oracle",
        "acu_overrides": {"0": {"supply_temp_c": 30.0}}})
    assert r.status_code == 200
    assert r.json()["warning"]


def test_whatif_oracle_shift_equivariance(served):
    _, _, client = served
    base = client.post("/api/whatif", json={"engine": "oracle"}).json()
    up = client.post("/api/whatif", json={
        "engine": "oracle",
        "acu_overrides": {"0": {"supply_temp_c": 21.0}}}).json()
    t0 = np.array([[v for v in row if v is not None]
                   for row in base["slice"]["temps_c"]], dtype=object)
    t1 = np.array([[v for v in row if v is not None]
                   for row in up["slice"]["temps_c"]], dtype=object)
    diffs = []
    for r0, r1 in zip(base["slice"]["temps_c"], up["slice"]["temps_c"]):
        for a, b in zip(r0, r1):
            if a is not None:
                diffs.append(b - a)
    diffs = np.asarray(diffs)
    assert np.abs(diffs - 1.0).max() <= 2e-3  # slice temps rounded to 1e-4


def test_concurrent_identical_requests(served):
    _, _, client = served
    payload = {"engine": "surrogate",
               "acu_overrides": {"0": {"supply_temp_c": 21.5}}}

    def call(_):
        r = client.post("/api/whatif", json=payload)
        body = r.json()
        del body["latency_ms"]
        return json.dumps(body, sort_keys=True)

    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(call, range(16)))
    assert len(set(results)) == 1


def test_rack_power_override_multiplies(served):
    scene, service, _ = served
    from dcpa.service import _parse_overrides

    scenario = _parse_overrides({"rack_power_overrides": {"R0": 1.3}}, scene)
    assert scenario.server_power_w[0] == pytest.approx(1500.0 * 1.3)
    # flow follows the fan law from the new power
    from dcpa.constants import server_flow_from_power
    assert scenario.server_flow_m3s[0] == pytest.approx(
        server_flow_from_power(1950.0))


def test_unknown_rack_rejected(served):
    _, _, client = served
    r = client.post("/api/whatif", json={"rack_power_overrides": {"RX": 1.1}})
    assert r.status_code == 400
    assert r.json()["code"] == "E_SCHEMA"


def test_service_never_mutates_scene_or_model(served):
    scene, service, client = served
    from dcpa.evaluation import model_params_hash

    before = model_params_hash(service.model)
    client.post("/api/whatif", json={"engine": "surrogate",
                                     "server_power_overrides": {"0": 1777.0}})
    assert model_params_hash(service.model) == before
    assert service.scene == scene
