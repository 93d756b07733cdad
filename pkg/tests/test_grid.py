import numpy as np
import pytest

from dcpa.errors import ResolutionError
from dcpa.grid import build_grid
from dcpa.scene import builtin_demo_scene

from .conftest import make_single_server_scene


def test_demo_grid_dims(demo_grid):
    assert demo_grid.dims == (60, 40, 8)
    assert demo_grid.n_cells == 19200


def test_rack_cells_solid(demo_scene, demo_grid):
    # every cell whose center lies in a rack is solid, and nothing else is
    centers_all = np.stack(np.meshgrid(
        (np.arange(60) + 0.5) * 0.5,
        (np.arange(40) + 0.5) * 0.5,
        (np.arange(8) + 0.5) * 0.5, indexing="ij"), axis=-1).reshape(-1, 3)
    solid_expected = np.zeros(len(centers_all), dtype=bool)
    for rack in demo_scene.racks:
        lo, hi = np.asarray(rack.box.lo), np.asarray(rack.box.hi)
        inside = ((centers_all > lo) & (centers_all < hi)).all(axis=1)
        solid_expected |= inside
    # centers_all is in (i, j, k) order; grid arrays are [k, j, i]
    solid_grid = ~demo_grid.fluid.transpose(2, 1, 0).reshape(-1)
    assert np.array_equal(solid_grid, solid_expected)
    assert demo_grid.n_fluid == 19200 - solid_expected.sum()


def test_finer_resolution_scales_cell_count(demo_scene, demo_grid):
    fine = build_grid(demo_scene, 0.25)
    assert fine.n_cells == 8 * demo_grid.n_cells


def test_snap_warns_on_nondivisible_resolution(demo_scene):
    grid = build_grid(demo_scene, 0.45)
    assert grid.warnings  # hall dims snapped
    assert grid.dims == (67, 44, 9)


def test_face_groups_cover_all_entities(demo_scene, demo_grid):
    kinds = {}
    for g in demo_grid.face_groups:
        kinds.setdefault(g.kind, set()).add(g.entity)
    assert kinds["acu_supply"] == set(range(6))
    assert kinds["acu_return"] == set(range(6))
    assert kinds["server_inlet"] == set(range(340))
    assert kinds["server_outlet"] == set(range(340))


def test_face_weights_normalized(demo_grid):
    for g in demo_grid.face_groups:
        assert g.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert (g.weights > 0).all()
        assert demo_grid.fluid.ravel()[g.cells].all()


def test_rasterization_zero_faces_raises():
    scene = make_single_server_scene()
    # 2 m cells cannot resolve the 0.25 m-tall server faces onto this grid:
    # the receiving cells collapse into the rack-free interior and the face
    # plane snaps onto the hall boundary
    with pytest.raises(ResolutionError):
        build_grid(scene, 4.0)


def test_containment_blocks_faces(demo_scene, demo_grid):
    # the end-cap wall at x = 7.5 blocks x-connectivity inside aisle A
    conn_x = demo_grid.conn[0]
    # cells i=14 | i=15 at y in [5, 6.5) (j 10..12), z below 3.5 m (k 0..6)
    assert not conn_x[0:7, 10:13, 14].any()
    # same band is open in the cold zone away from the aisle (j 0..7)
    assert conn_x[2, 2, 14]


def test_grid_key_binds_scene_and_resolution(demo_scene, demo_grid):
    fine = build_grid(demo_scene, 0.25)
    assert fine.key() != demo_grid.key()
    again = build_grid(demo_scene, 0.5)
    assert again.key() == demo_grid.key()


def test_cells_in_box_partition(demo_scene, demo_grid):
    hot = [demo_grid.cells_in_box(b) for b in demo_scene.hot_aisles]
    all_hot = np.concatenate(hot)
    assert len(np.unique(all_hot)) == len(all_hot)  # aisles disjoint
    assert demo_grid.fluid.ravel()[all_hot].all()
