import numpy as np
import pytest

from dcpa.errors import FormatError
from dcpa.fields import make_solution, read_field_file, write_field_file


def test_roundtrip_bit_identical(tmp_path, single_server_solution):
    scene, grid, scenario, flow, temp = single_server_solution
    sol = make_solution(grid, scenario, flow, temp)
    path = tmp_path / "case.bin"
    write_field_file(path, sol)
    again = read_field_file(path)
    # storage is f32; read-back must equal the f32 cast bit for bit
    for c in range(4):
        np.testing.assert_array_equal(
            again.channel(c).astype(np.float32),
            sol.channel(c).astype(np.float32))
    assert again.scenario == scenario
    assert again.scene_hash == sol.scene_hash
    assert again.grid_key == sol.grid_key
    assert again.residuals == pytest.approx(sol.residuals)


def test_bad_magic_rejected(tmp_path, single_server_solution):
    scene, grid, scenario, flow, temp = single_server_solution
    sol = make_solution(grid, scenario, flow, temp)
    path = tmp_path / "case.bin"
    write_field_file(path, sol)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(raw)
    with pytest.raises(FormatError):
        read_field_file(path)


def test_truncated_rejected(tmp_path, single_server_solution):
    scene, grid, scenario, flow, temp = single_server_solution
    sol = make_solution(grid, scenario, flow, temp)
    path = tmp_path / "case.bin"
    write_field_file(path, sol)
    path.write_bytes(path.read_bytes()[:100])
    with pytest.raises(FormatError):
        read_field_file(path)


def test_x_fastest_layout(tmp_path, single_server_solution):
    scene, grid, scenario, flow, temp = single_server_solution
    sol = make_solution(grid, scenario, flow, temp)
    path = tmp_path / "case.bin"
    write_field_file(path, sol)
    raw = path.read_bytes()
    nx, ny, nz = sol.dims
    header = 20
    u = np.frombuffer(raw, dtype="<f4", count=nx * ny * nz, offset=header)
    # first nx values are the x-row at j=0, k=0
    np.testing.assert_array_equal(u[:nx], sol.velocity[0][0, 0].astype(np.float32))


def test_solid_cells_zero(single_server_solution):
    scene, grid, scenario, flow, temp = single_server_solution
    sol = make_solution(grid, scenario, flow, temp)
    solid = ~grid.fluid
    assert solid.any()
    for c in range(4):
        assert np.all(sol.channel(c)[solid] == 0.0)
