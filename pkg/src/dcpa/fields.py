"""Field container and the binary field-file format.

Layout (little-endian): magic "DCPA", u32 version, u32 nx, ny, nz, then four
f32 arrays [u, v, w, T] each of nx*ny*nz values in x-fastest order. A JSON
sidecar (same stem, .json) carries the scenario, residuals and scene hash.
Solid cells hold 0.0 in every channel; consumers mask with the grid's fluid
flags, never by value.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constants import FIELD_MAGIC, FIELD_VERSION
from .errors import FormatError
from .scenario import Scenario

_HEADER = struct.Struct("<4sIIII")


@dataclass
class FieldSolution:
    grid_key: str
    scene_hash: str
    dims: tuple[int, int, int]            # (nx, ny, nz)
    velocity: np.ndarray                   # (3, nz, ny, nx) float
    temperature: np.ndarray                # (nz, ny, nx) float
    residuals: dict
    scenario: Scenario

    @property
    def shape(self):
        nx, ny, nz = self.dims
        return (nz, ny, nx)

    def channel(self, idx):
        """Channel 0..3 = u, v, w, T as a (nz, ny, nx) array."""
        if idx < 3:
            return self.velocity[idx]
        return self.temperature


def write_field_file(path, solution: FieldSolution):
    path = Path(path)
    nx, ny, nz = solution.dims
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, nx, ny, nz))
        for ch in range(4):
            arr = np.ascontiguousarray(solution.channel(ch), dtype="<f4")
            fh.write(arr.tobytes())
    sidecar = {
        "scene_hash": solution.scene_hash,
        "grid_key": solution.grid_key,
        "dims": [nx, ny, nz],
        "residuals": solution.residuals,
        "scenario": solution.scenario.to_obj(),
    }
    path.with_suffix(".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def read_field_file(path):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated field file")
    magic, version, nx, ny, nz = _HEADER.unpack_from(raw)
    if magic != FIELD_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FIELD_VERSION:
        raise FormatError(f"{path}: unsupported field version {version}")
    n = nx * ny * nz
    expected = _HEADER.size + 4 * n * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(4, nz, ny, nx)

    sidecar_path = path.with_suffix(".json")
    if not sidecar_path.exists():
        raise FormatError(f"{sidecar_path}: missing sidecar")
    side = json.loads(sidecar_path.read_text(encoding="utf-8"))
    return FieldSolution(
        grid_key=side["grid_key"],
        scene_hash=side["scene_hash"],
        dims=(nx, ny, nz),
        velocity=data[:3].astype(np.float64),
        temperature=data[3].astype(np.float64),
        residuals=side["residuals"],
        scenario=Scenario.from_obj(side["scenario"]),
    )


def make_solution(grid, scenario, flow, temp) -> FieldSolution:
    """Assemble a FieldSolution from solver outputs."""
    nx, ny, nz = grid.dims
    residuals = {
        "max_divergence_m3s": flow.max_divergence,
        "flow_linear_residual": flow.linear_residual,
        "transport_linear_residual": temp.linear_residual,
        "server_outer_iterations": temp.outer_iterations,
    }
    return FieldSolution(
        grid_key=grid.key(), scene_hash=grid.scene_hash, dims=(nx, ny, nz),
        velocity=flow.velocity, temperature=temp.temperature,
        residuals=residuals, scenario=scenario)
