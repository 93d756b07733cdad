"""Uniform structured grid construction from a scene.

Cells are indexed [k, j, i] (z, y, x) with x fastest when flattened. Rack
interiors become solid cells; containment rectangles close off interior grid
faces; ACU and server faces are rasterized onto grid boundary faces with
flux-preserving area weights.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ResolutionError
from .scene import scene_hash

log = logging.getLogger(__name__)


@dataclass
class FaceGroup:
    """One scene face rasterized onto grid faces adjacent to fluid cells.

    kind is one of acu_supply / acu_return / server_inlet / server_outlet.
    weights are flux fractions (sum to 1); flow direction along the axis is
    +normal_sign for sources (supply, outlet) and -normal_sign for sinks.
    """

    kind: str
    entity: int
    axis: int
    normal_sign: int
    cells: np.ndarray      # flat indices of receiving fluid cells
    weights: np.ndarray    # flux fraction per grid face
    areas: np.ndarray      # physical overlap areas, m^2

    @property
    def is_source(self):
        return self.kind in ("acu_supply", "server_outlet")

    @property
    def flow_sign(self):
        return 1.0 if self.is_source else -1.0


@dataclass
class Grid:
    resolution: float
    dims: tuple[int, int, int]            # (nx, ny, nz)
    fluid: np.ndarray                     # bool (nz, ny, nx)
    conn: tuple[np.ndarray, np.ndarray, np.ndarray]  # open x/y/z internal faces
    face_groups: list[FaceGroup]
    scene_hash: str
    warnings: list[str] = field(default_factory=list)

    @property
    def n_cells(self):
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def n_fluid(self):
        return int(self.fluid.sum())

    @property
    def shape(self):
        nx, ny, nz = self.dims
        return (nz, ny, nx)

    def key(self):
        nx, ny, nz = self.dims
        raw = f"{self.scene_hash}:{self.resolution:.9g}:{nx}x{ny}x{nz}"
        return hashlib.sha256(raw.encode()).hexdigest()

    def cell_centers(self, flat_idx=None):
        """(n, 3) xyz centers for flat indices (default: all fluid cells)."""
        if flat_idx is None:
            flat_idx = self.fluid_indices()
        nx, ny, _ = self.dims
        i = flat_idx % nx
        j = (flat_idx // nx) % ny
        k = flat_idx // (nx * ny)
        h = self.resolution
        return np.stack([(i + 0.5) * h, (j + 0.5) * h, (k + 0.5) * h], axis=1)

    def fluid_indices(self):
        return np.flatnonzero(self.fluid.ravel())

    def cells_in_box(self, box):
        """Flat indices of fluid cells whose centers lie inside the box."""
        centers = self.cell_centers()
        idx = self.fluid_indices()
        m = np.ones(len(idx), dtype=bool)
        for a in range(3):
            m &= (centers[:, a] >= box.lo[a]) & (centers[:, a] <= box.hi[a])
        return idx[m]

    def groups_for(self, kind, entity=None):
        return [g for g in self.face_groups
                if g.kind == kind and (entity is None or g.entity == entity)]


def _snap_counts(hall_dims, h, warnings):
    dims = []
    for a, length in enumerate(hall_dims):
        n = max(1, round(length / h))
        if abs(n * h - length) > 1e-9 * max(1.0, length):
            warnings.append(
                f"hall dim {a} = {length} snapped to {n * h} at resolution {h}")
            log.warning("grid: %s", warnings[-1])
        dims.append(n)
    return tuple(dims)


def _cell_range(lo, hi, h, n):
    """Cells whose centers fall strictly inside [lo, hi] along one axis."""
    i0 = max(0, int(np.ceil(lo / h - 0.5 - 1e-12)))
    i1 = min(n - 1, int(np.floor(hi / h - 0.5 + 1e-12)))
    return i0, i1


def _overlap_range(lo, hi, h, n):
    """Cells whose [ih, (i+1)h] spans overlap (lo, hi) with positive measure."""
    i0 = max(0, int(np.floor(lo / h + 1e-12)))
    i1 = min(n - 1, int(np.ceil(hi / h - 1e-12)) - 1)
    return i0, i1


def _snap_plane(coord, h, n_planes, what, warnings):
    p = int(round(coord / h))
    p = min(max(p, 0), n_planes)
    if abs(p * h - coord) > 1e-9 * max(1.0, abs(coord)):
        warnings.append(f"{what} plane {coord} snapped to grid plane {p * h}")
        log.warning("grid: %s", warnings[-1])
    return p


def _rasterize_face(face, kind, entity, grid_dims, h, fluid, warnings):
    nx, ny, nz = grid_dims
    n_by_axis = (nx, ny, nz)
    axis = face.axis
    sign = 1 if face.normal[axis] > 0 else -1
    p = _snap_plane(face.plane, h, n_by_axis[axis], f"{kind}[{entity}] {face.normal}", warnings)
    recv = p if sign > 0 else p - 1
    if recv < 0 or recv >= n_by_axis[axis]:
        raise ResolutionError(
            f"{kind}[{entity}]: face on hall boundary points outside the hall")

    other = [a for a in range(3) if a != axis]
    ranges = []
    for b in other:
        lo, hi = face.rect.lo[b], face.rect.hi[b]
        ranges.append((_overlap_range(lo, hi, h, n_by_axis[b]), lo, hi))

    cells, areas = [], []
    (r0, lo0, hi0), (r1, lo1, hi1) = ranges
    for u in range(r0[0], r0[1] + 1):
        ov0 = min(hi0, (u + 1) * h) - max(lo0, u * h)
        if ov0 <= 1e-12:
            continue
        for v in range(r1[0], r1[1] + 1):
            ov1 = min(hi1, (v + 1) * h) - max(lo1, v * h)
            if ov1 <= 1e-12:
                continue
            ijk = [0, 0, 0]
            ijk[axis] = recv
            ijk[other[0]] = u
            ijk[other[1]] = v
            i, j, k = ijk
            if not fluid[k, j, i]:
                continue
            cells.append(i + nx * (j + ny * k))
            areas.append(ov0 * ov1)

    if not cells:
        raise ResolutionError(
            f"{kind}[{entity}]: face rasterizes to zero grid faces at resolution {h}")

    areas = np.asarray(areas, dtype=np.float64)
    return FaceGroup(
        kind=kind, entity=entity, axis=axis, normal_sign=sign,
        cells=np.asarray(cells, dtype=np.int64),
        weights=areas / areas.sum(), areas=areas)


def build_grid(scene, resolution):
    """Build the structured grid for a scene at the given cell size (m)."""
    if resolution <= 0:
        raise ResolutionError(f"resolution must be positive, got {resolution}")
    h = float(resolution)
    warnings: list[str] = []
    nx, ny, nz = _snap_counts(scene.hall_dims, h, warnings)

    fluid = np.ones((nz, ny, nx), dtype=bool)
    for rack in scene.racks:
        i0, i1 = _cell_range(rack.box.lo[0], rack.box.hi[0], h, nx)
        j0, j1 = _cell_range(rack.box.lo[1], rack.box.hi[1], h, ny)
        k0, k1 = _cell_range(rack.box.lo[2], rack.box.hi[2], h, nz)
        if i0 <= i1 and j0 <= j1 and k0 <= k1:
            fluid[k0:k1 + 1, j0:j1 + 1, i0:i1 + 1] = False

    conn_x = fluid[:, :, :-1] & fluid[:, :, 1:]
    conn_y = fluid[:, :-1, :] & fluid[:, 1:, :]
    conn_z = fluid[:-1, :, :] & fluid[1:, :, :]
    conn = (conn_x, conn_y, conn_z)

    face_area = h * h
    n_by_axis = (nx, ny, nz)
    for widx, wall in enumerate(scene.containment_walls):
        axis = wall.degenerate_axis()
        if axis is None:
            continue
        p = _snap_plane(wall.lo[axis], h, n_by_axis[axis], f"containment_walls[{widx}]",
                        warnings)
        if p <= 0 or p >= n_by_axis[axis]:
            continue  # wall merged into the hall boundary
        other = [a for a in range(3) if a != axis]
        cmask = conn[axis]
        for u in range(*_span(_overlap_range(wall.lo[other[0]], wall.hi[other[0]], h,
                                             n_by_axis[other[0]]))):
            ov0 = min(wall.hi[other[0]], (u + 1) * h) - max(wall.lo[other[0]], u * h)
            for v in range(*_span(_overlap_range(wall.lo[other[1]], wall.hi[other[1]], h,
                                                 n_by_axis[other[1]]))):
                ov1 = min(wall.hi[other[1]], (v + 1) * h) - max(wall.lo[other[1]], v * h)
                if ov0 * ov1 <= 0.5 * face_area:
                    continue  # wall covers a minority of this grid face
                ijk = [0, 0, 0]
                ijk[axis] = p - 1
                ijk[other[0]] = u
                ijk[other[1]] = v
                i, j, k = ijk
                cmask[k, j, i] = False

    sh = scene_hash(scene)
    groups = []
    for idx, acu in enumerate(scene.acus):
        groups.append(_rasterize_face(acu.supply_face, "acu_supply", idx,
                                      (nx, ny, nz), h, fluid, warnings))
        groups.append(_rasterize_face(acu.return_face, "acu_return", idx,
                                      (nx, ny, nz), h, fluid, warnings))
    for idx, srv in enumerate(scene.servers):
        groups.append(_rasterize_face(srv.inlet_face, "server_inlet", idx,
                                      (nx, ny, nz), h, fluid, warnings))
        groups.append(_rasterize_face(srv.outlet_face, "server_outlet", idx,
                                      (nx, ny, nz), h, fluid, warnings))

    return Grid(resolution=h, dims=(nx, ny, nz), fluid=fluid, conn=conn,
                face_groups=groups, scene_hash=sh, warnings=warnings)


def _span(rng):
    return rng[0], rng[1] + 1
