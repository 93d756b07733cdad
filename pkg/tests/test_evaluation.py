import csv
import json
import math

import numpy as np
import pytest

from dcpa.dataset import build_dataset, simulate_batch
from dcpa.evaluation import (bench_latency, evaluate_model, export_report,
                             slice_rows)
from dcpa.grid import build_grid
from dcpa.sampling import SamplingConfig, make_scenarios
from dcpa.solver import solve_flow, solve_temperature

from .conftest import make_single_server_scene


@pytest.fixture(scope="module")
def eval_dataset(tmp_path_factory):
    scene = make_single_server_scene()
    grid = build_grid(scene, 0.25)
    cfg = SamplingConfig(n_scenarios=5, seed=41)
    scenarios = make_scenarios(scene, cfg)
    solutions = simulate_batch(scene, grid, scenarios)
    ds = build_dataset(scene, grid, scenarios, solutions, (3, 1, 1), 41,
                       tmp_path_factory.mktemp("evds"),
                       sampling_config=cfg.to_obj())
    return scene, grid, ds


def oracle_predictor(grid):
    def predict(scene, scenario, points):
        flow = solve_flow(grid, scenario)
        temp = solve_temperature(grid, scenario, flow)
        idx = grid.fluid_indices()
        vel = np.stack([flow.velocity[c].ravel()[idx] for c in range(3)], axis=1)
        return vel, temp.temperature.ravel()[idx]
    return predict


def test_oracle_vs_self_identity(eval_dataset):
    scene, grid, ds = eval_dataset
    report = evaluate_model(None, scene, ds, split="test",
                            predictor=oracle_predictor(grid))
    # stored fields are f32; re-solved fields are f64, so "identity" is the
    # f32 quantization floor
    assert report.median_abs_c <= 1e-5
    assert report.max_abs_c <= 1e-4
    assert report.frac_within_band == 1.0
    assert report.p95_abs_c <= 1e-5


def test_report_invariants(eval_dataset):
    scene, grid, ds = eval_dataset
    report = evaluate_model(None, scene, ds, split="val",
                            predictor=oracle_predictor(grid))
    assert report.median_abs_c <= report.p95_abs_c <= report.max_abs_c
    assert 0.0 <= report.frac_within_band <= 1.0
    assert sum(n for _, _, n in report.histogram) == report.n_points


def test_histogram_bins_cover_max(eval_dataset):
    scene, grid, ds = eval_dataset

    def noisy(scene, scenario, points):
        vel, temp = oracle_predictor(grid)(scene, scenario, points)
        rng = np.random.default_rng(1)
        return vel, temp + rng.uniform(-1.0, 1.0, size=temp.shape)

    report = evaluate_model(None, scene, ds, split="test", predictor=noisy)
    n_bins = len(report.histogram)
    assert n_bins == math.ceil(report.max_abs_c / 0.1) or \
        n_bins == math.ceil(report.max_abs_c / 0.1) + 1


def test_export_report_files_consistent(eval_dataset, tmp_path):
    scene, grid, ds = eval_dataset

    def noisy(scene, scenario, points):
        vel, temp = oracle_predictor(grid)(scene, scenario, points)
        rng = np.random.default_rng(2)
        return vel, temp + rng.normal(0, 1.2, size=temp.shape)

    report = evaluate_model(None, scene, ds, split="test", predictor=noisy)
    sol = ds.load_case(ds.split[2][0])
    full = np.zeros(grid.n_cells)
    _, tp = noisy(scene, sol.scenario, grid.cell_centers())
    full[grid.fluid_indices()] = tp
    rows = slice_rows(scene, grid, full.reshape(grid.shape), sol.temperature,
                      z_height=1.0)
    out = export_report(report, tmp_path / "rep", slice_data=rows)

    body = json.loads((out / "report.json").read_text())
    assert body["scene_hash"] == ds.scene_hash
    assert "checkpoint_hash" in body

    with open(out / "errors_histogram.csv") as fh:
        hist_rows = list(csv.DictReader(fh))
    assert len(hist_rows) == len(report.histogram)
    within = sum(int(r["count"]) for r in hist_rows
                 if float(r["bin_hi"]) <= 2.5 + 1e-9)
    assert within / body["n_points"] == pytest.approx(body["frac_within_band"],
                                                      abs=1e-12)

    with open(out / "slices.csv") as fh:
        slice_csv = list(csv.DictReader(fh))
    assert set(slice_csv[0]) == {"x", "y", "t_pred_c", "t_true_c", "abs_err_c"}
    assert len(slice_csv) == len(rows)


def test_metrics_permutation_invariant(eval_dataset):
    scene, grid, ds = eval_dataset
    pred = oracle_predictor(grid)

    def noisy(scene, scenario, points):
        vel, temp = pred(scene, scenario, points)
        rng = np.random.default_rng(int(1000 * scenario.server_power_w[0]) % 7)
        return vel, temp + rng.normal(0, 0.5, size=temp.shape)

    r1 = evaluate_model(None, scene, ds, split="train", predictor=noisy)
    ds.manifest["split"]["train"] = list(reversed(ds.manifest["split"]["train"]))
    try:
        r2 = evaluate_model(None, scene, ds, split="train", predictor=noisy)
    finally:
        ds.manifest["split"]["train"] = list(reversed(ds.manifest["split"]["train"]))
    assert r1.median_abs_c == r2.median_abs_c
    assert r1.p95_abs_c == r2.p95_abs_c
    assert r1.max_abs_c == r2.max_abs_c


def test_bench_latency_contract(eval_dataset):
    scene, grid, ds = eval_dataset
    from dcpa.neuralop import OperatorConfig, OperatorModel, make_domain_specs

    op_cfg = OperatorConfig(d_model=16, n_blocks=1, n_heads=2, fourier_m=4)
    model = OperatorModel(config=op_cfg, scene_hash=ds.scene_hash,
                          hall_dims=tuple(scene.hall_dims),
                          rack_boxes=[(r.box.lo, r.box.hi) for r in scene.racks],
                          domain_specs=make_domain_specs(scene, op_cfg),
                          norm_stats=ds.norm_stats)
    for spec in model.domain_specs:
        model.init_part(spec.name, "fluid")
        model.init_part(spec.name, "thermal")
    sol = ds.load_case(0)
    res = bench_latency(model, scene, sol.scenario, point_counts=(256, 512),
                        repeats=5)
    assert set(res["point_counts"]) == {256, 512}
    for stats in res["point_counts"].values():
        assert stats["p50_s"] > 0
        assert stats["p95_s"] >= stats["p50_s"]
    assert res["hardware"]
