import numpy as np
import pytest

from dcpa.grid import build_grid
from dcpa.scenario import default_scenario
from dcpa.scene import Acu, Box, Face, Rack, Scene, Server, builtin_demo_scene
from dcpa.solver import solve_flow, solve_temperature

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def demo_scene():
    return builtin_demo_scene()


@pytest.fixture(scope="session")
def demo_grid(demo_scene):
    return build_grid(demo_scene, 0.5)


def make_single_server_scene(power_w=1500.0, flow_m3s=0.10):
    """Small hall with one rack, one server, one matched ACU. The server face
    spans 1.0 x 0.25 m so a 0.25 m grid resolves it with 4 faces. The exhaust
    side is a contained pocket with a ceiling return, so the outlet air is
    captured rather than diffusing into the room."""
    rack = Rack(id="R0", box=Box((1.5, 1.5, 0.0), (2.5, 2.5, 2.0)))
    server = Server(
        id="S0", rack_id="R0",
        inlet_face=Face(rect=Box((1.5, 1.5, 1.0), (2.5, 1.5, 1.25)),
                        normal=(0.0, -1.0, 0.0)),
        outlet_face=Face(rect=Box((1.5, 2.5, 1.0), (2.5, 2.5, 1.25)),
                         normal=(0.0, 1.0, 0.0)),
        power_w=power_w, flow_m3s=flow_m3s)
    acu = Acu(
        id="A0",
        supply_face=Face(rect=Box((0.0, 1.0, 0.5), (0.0, 2.0, 1.5)),
                         normal=(1.0, 0.0, 0.0)),
        return_face=Face(rect=Box((1.5, 2.5, 3.0), (2.5, 3.0, 3.0)),
                         normal=(0.0, 0.0, -1.0)),
        supply_temp_c=20.0, flow_m3s=flow_m3s)
    walls = (
        Box((1.5, 2.5, 0.0), (1.5, 3.0, 3.0)),    # pocket side x = 1.5
        Box((2.5, 2.5, 0.0), (2.5, 3.0, 3.0)),    # pocket side x = 2.5
        Box((1.5, 3.0, 0.0), (2.5, 3.0, 3.0)),    # pocket back y = 3.0
        Box((1.5, 2.5, 2.0), (2.5, 2.5, 2.75)),   # above the rack, spill window on top
    )
    return Scene(hall_dims=(4.0, 4.0, 3.0), racks=(rack,), servers=(server,),
                 acus=(acu,), containment_walls=walls,
                 hot_aisles=(Box((1.5, 2.5, 0.0), (2.5, 3.0, 3.0)),),
                 name="single-server")


@pytest.fixture(scope="session")
def single_server_solution():
    scene = make_single_server_scene()
    grid = build_grid(scene, 0.25)
    scenario = default_scenario(scene)
    flow = solve_flow(grid, scenario)
    temp = solve_temperature(grid, scenario, flow)
    return scene, grid, scenario, flow, temp


@pytest.fixture(scope="session")
def demo_solution(demo_scene, demo_grid):
    scenario = default_scenario(demo_scene)
    flow = solve_flow(demo_grid, scenario)
    temp = solve_temperature(demo_grid, scenario, flow)
    return scenario, flow, temp


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))
