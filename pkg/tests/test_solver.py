import numpy as np
import pytest

from dcpa.constants import CP_AIR, RHO_AIR, server_delta_t
from dcpa.errors import IncompatibleFluxError
from dcpa.grid import build_grid
from dcpa.scenario import Scenario, default_scenario
from dcpa.scene import Scene
from dcpa.solver import (build_flow_operator, check_conservation, solve_flow,
                         solve_temperature)

from .conftest import make_single_server_scene


def shifted(scenario, delta):
    return Scenario(
        tuple(t + delta for t in scenario.acu_supply_temp_c),
        scenario.acu_flow_m3s, scenario.server_power_w, scenario.server_flow_m3s)


def test_empty_scene_zero_velocity():
    scene = Scene(hall_dims=(4.0, 4.0, 2.0), racks=(), servers=(), acus=())
    grid = build_grid(scene, 0.5)
    scenario = Scenario((), (), (), ())
    flow = solve_flow(grid, scenario)
    assert np.all(flow.velocity == 0.0)
    assert flow.max_divergence == 0.0


def test_flow_divergence_free(demo_grid, demo_solution):
    _, flow, _ = demo_solution
    assert flow.max_divergence <= 1e-8


def test_flow_supply_return_paired(single_server_solution):
    scene, grid, scenario, flow, _ = single_server_solution
    q = scenario.acu_flow_m3s[0]
    # supply enters through the x = 0 wall plane
    supply_flux = flow.face_flux[0][:, :, 0].sum()
    assert supply_flux == pytest.approx(q, abs=1e-9)
    # return extracts upward through the ceiling plane
    return_flux = flow.face_flux[2][-1, :, :].sum()
    assert return_flux == pytest.approx(q, abs=1e-9)


def test_incompatible_fluxes_guarded(demo_scene, demo_grid):
    sc = default_scenario(demo_scene)
    # break the pairing by monkeying one ACU's flow in the source vector:
    # an ACU with supply != return cannot be expressed through Scenario, so
    # drive the guard directly with mismatched totals
    from dcpa import solver

    bad = Scenario(sc.acu_supply_temp_c, sc.acu_flow_m3s,
                   sc.server_power_w, sc.server_flow_m3s)
    entries = list(solver._face_flux_entries(demo_grid, bad))
    total = sum(q for _, q in entries)
    assert abs(total) < 1e-12  # scenario flows always pair up

    class Unbalanced:
        acu_supply_temp_c = sc.acu_supply_temp_c
        acu_flow_m3s = sc.acu_flow_m3s
        server_power_w = sc.server_power_w
        server_flow_m3s = sc.server_flow_m3s

    orig = solver._face_flux_entries

    def broken(grid, scenario):
        for g, q in orig(grid, scenario):
            if g.kind == "acu_return" and g.entity == 0:
                q *= 0.5
            yield g, q

    solver._face_flux_entries = broken
    try:
        with pytest.raises(IncompatibleFluxError):
            solve_flow(demo_grid, bad)
    finally:
        solver._face_flux_entries = orig


def test_zero_power_uniform_temperature():
    scene = make_single_server_scene(power_w=0.0, flow_m3s=0.1)
    grid = build_grid(scene, 0.25)
    scenario = default_scenario(scene)
    flow = solve_flow(grid, scenario)
    temp = solve_temperature(grid, scenario, flow)
    fluid_t = temp.temperature[grid.fluid]
    assert np.abs(fluid_t - 20.0).max() <= 1e-6


def test_isolated_server_delta_t(single_server_solution):
    scene, grid, scenario, flow, temp = single_server_solution
    rep = check_conservation(grid, scenario, flow, temp)
    measured, closed = rep.per_server_dt[0]
    assert closed == pytest.approx(1500.0 / (RHO_AIR * CP_AIR * 0.10), rel=1e-12)
    assert closed == pytest.approx(12.68, abs=0.01)
    assert measured == pytest.approx(closed, rel=0.05)


def test_supply_shift_equivariance(demo_scene, demo_grid, demo_solution):
    scenario, flow, temp = demo_solution
    for delta in (-2.0, 1.0):
        sc2 = shifted(scenario, delta)
        flow2 = solve_flow(demo_grid, sc2)
        temp2 = solve_temperature(demo_grid, sc2, flow2)
        diff = (temp2.temperature - temp.temperature)[demo_grid.fluid]
        assert np.abs(diff - delta).max() <= 1e-3


def test_temperature_maximum_principle(demo_grid, demo_solution):
    scenario, _, temp = demo_solution
    t_min = temp.temperature[demo_grid.fluid].min()
    assert t_min >= min(scenario.acu_supply_temp_c) - 1e-3


def test_energy_balance_demo(demo_grid, demo_solution):
    scenario, flow, temp = demo_solution
    rep = check_conservation(demo_grid, scenario, flow, temp)
    assert rep.mass_rel <= 1e-6
    assert rep.energy_rel <= 0.01


def test_energy_rel_zero_power_convention():
    scene = make_single_server_scene(power_w=0.0)
    grid = build_grid(scene, 0.25)
    scenario = default_scenario(scene)
    flow = solve_flow(grid, scenario)
    temp = solve_temperature(grid, scenario, flow)
    rep = check_conservation(grid, scenario, flow, temp)
    assert rep.energy_rel == 0.0


def test_per_server_dt_demo_nominal(demo_grid, demo_solution):
    scenario, flow, temp = demo_solution
    rep = check_conservation(demo_grid, scenario, flow, temp)
    dts = np.asarray(rep.per_server_dt)
    rel = np.abs(dts[:, 0] - dts[:, 1]) / dts[:, 1]
    assert rel.max() <= 0.05


def test_determinism_bit_identical(demo_scene, demo_grid):
    scenario = default_scenario(demo_scene)
    f1 = solve_flow(demo_grid, scenario)
    t1 = solve_temperature(demo_grid, scenario, f1)
    f2 = solve_flow(demo_grid, scenario)
    t2 = solve_temperature(demo_grid, scenario, f2)
    assert np.array_equal(f1.velocity, f2.velocity)
    assert np.array_equal(t1.temperature, t2.temperature)


def test_flow_operator_symmetric_on_fluid(demo_grid):
    op = build_flow_operator(demo_grid)
    rng = np.random.default_rng(0)
    x = rng.normal(size=demo_grid.shape)
    y = rng.normal(size=demo_grid.shape)
    # <Ax, y> == <x, Ay> for the discrete Laplacian
    ax = op.matvec(x)
    ay = op.matvec(y)
    assert float((ax * y).sum()) == pytest.approx(float((x * ay).sum()), rel=1e-12)


def test_solver_time_budget(demo_scene, demo_grid):
    import time

    scenario = default_scenario(demo_scene)
    t0 = time.monotonic()
    flow = solve_flow(demo_grid, scenario)
    solve_temperature(demo_grid, scenario, flow)
    assert time.monotonic() - t0 < 60.0
