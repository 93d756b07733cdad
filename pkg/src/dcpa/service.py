"""What-if evaluation and the HTTP service around the trained surrogate.

The service holds one immutable scene + grid + model; every what-if request
builds a transient scenario from the scene defaults plus the request's
overrides and never mutates shared state. Surrogate requests may run
concurrently; oracle requests are serialized through a bounded queue and
answer 503 when it is full.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass

import numpy as np

from .constants import server_flow_from_power
from .errors import DcpaError, RangeError, SchemaError
from .grid import build_grid
from .scenario import Scenario, default_scenario
from .scene import scene_to_obj
from .solver import solve_flow, solve_temperature

log = logging.getLogger(__name__)

_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class Envelope:
    """Boundary-condition ranges the surrogate was trained on."""

    supply_temp_c: tuple[float, float] = (18.0, 24.0)
    server_power_w: tuple[float, float] = (1000.0, 2000.0)
    acu_flow_m3s: tuple[float, float] | None = None  # None: fixed at defaults

    @classmethod
    def from_sampling_config(cls, obj):
        if not obj:
            return cls()
        fixed = obj.get("acu_flow_fixed")
        rng = obj.get("acu_flow_range")
        return cls(
            supply_temp_c=tuple(obj["supply_temp_range"]),
            server_power_w=tuple(obj["server_power_range"]),
            acu_flow_m3s=tuple(rng) if rng else (fixed, fixed))


@dataclass
class WhatIfResult:
    scenario: Scenario
    slice_axis: str
    slice_index: int
    slice_temps: list          # 2-d, None at solid cells
    slice_speed: list
    server_inlet_temps_c: list
    stats: dict
    latency_ms: float
    engine: str
    warning: str | None


def _parse_overrides(req, scene):
    """Scenario from scene defaults plus request overrides; returns
    (scenario, out_of_envelope: bool description or None)."""
    base = default_scenario(scene)
    supply = list(base.acu_supply_temp_c)
    aflow = list(base.acu_flow_m3s)
    power = list(base.server_power_w)

    rack_servers = {}
    for i, srv in enumerate(scene.servers):
        rack_servers.setdefault(srv.rack_id, []).append(i)

    for key, fields in (req.get("acu_overrides") or {}).items():
        idx = _entity_index(key, len(scene.acus), "acu_overrides")
        if not isinstance(fields, dict):
            raise SchemaError(f"acu_overrides[{key}]: expected object")
        if "supply_temp_c" in fields:
            supply[idx] = _number(fields["supply_temp_c"], f"acu_overrides[{key}].supply_temp_c")
        if "flow_m3s" in fields:
            aflow[idx] = _number(fields["flow_m3s"], f"acu_overrides[{key}].flow_m3s")

    for key, watts in (req.get("server_power_overrides") or {}).items():
        idx = _entity_index(key, len(scene.servers), "server_power_overrides")
        power[idx] = _number(watts, f"server_power_overrides[{key}]")

    for rack_id, mult in (req.get("rack_power_overrides") or {}).items():
        if rack_id not in rack_servers:
            raise SchemaError(f"rack_power_overrides: unknown rack {rack_id!r}")
        m = _number(mult, f"rack_power_overrides[{rack_id}]")
        for i in rack_servers[rack_id]:
            power[i] = scene.servers[i].power_w * m

    flows = [server_flow_from_power(p) if p > 0 else base.server_flow_m3s[i]
             for i, p in enumerate(power)]
    scenario = Scenario(tuple(supply), tuple(aflow), tuple(power), tuple(flows))
    scenario.check_against(scene)
    return scenario


def _entity_index(key, count, what):
    try:
        idx = int(key)
    except (TypeError, ValueError):
        raise SchemaError(f"{what}: key {key!r} is not an entity index")
    if not 0 <= idx < count:
        raise SchemaError(f"{what}: index {idx} out of range 0..{count - 1}")
    return idx


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{path}: expected number")
    return float(value)


def check_envelope(scenario, envelope: Envelope):
    """Text describing the first out-of-envelope value, or None."""
    lo, hi = envelope.supply_temp_c
    for i, t in enumerate(scenario.acu_supply_temp_c):
        if not lo <= t <= hi:
            return f"acu[{i}].supply_temp_c={t} outside trained range [{lo}, {hi}]"
    lo, hi = envelope.server_power_w
    for i, p in enumerate(scenario.server_power_w):
        if not lo <= p <= hi:
            return f"server[{i}].power_w={p} outside trained range [{lo}, {hi}]"
    if envelope.acu_flow_m3s is not None:
        lo, hi = envelope.acu_flow_m3s
        for i, q in enumerate(scenario.acu_flow_m3s):
            if not lo - 1e-9 <= q <= hi + 1e-9:
                return f"acu[{i}].flow_m3s={q} outside trained range [{lo}, {hi}]"
    return None


class WhatIfService:
    """Immutable bundle of scene, grid, model and envelope."""

    def __init__(self, scene, model, resolution=0.5, envelope=None,
                 oracle_queue_depth=3):
        self.scene = scene
        self.model = model
        self.grid = build_grid(scene, resolution)
        self.envelope = envelope or Envelope()
        self.points = self.grid.cell_centers()
        self._oracle_lock = threading.Lock()
        self._oracle_waiting = 0
        self._oracle_depth = oracle_queue_depth
        self._wait_lock = threading.Lock()

    # -- engines -------------------------------------------------------------
    def _surrogate_fields(self, scenario):
        vel, temp = self.model.predict_full_field(self.scene, scenario, self.points)
        return self._to_grid(vel, temp)

    def _oracle_fields(self, scenario):
        flow = solve_flow(self.grid, scenario)
        temp = solve_temperature(self.grid, scenario, flow)
        speed = np.sqrt((flow.velocity ** 2).sum(axis=0))
        return speed, temp.temperature

    def _to_grid(self, vel, temp):
        shape = self.grid.shape
        speed_flat = np.zeros(self.grid.n_cells)
        temp_flat = np.zeros(self.grid.n_cells)
        idx = self.grid.fluid_indices()
        speed_flat[idx] = np.linalg.norm(vel, axis=1)
        temp_flat[idx] = temp
        return speed_flat.reshape(shape), temp_flat.reshape(shape)

    # -- entry point ----------------------------------------------------------
    def whatif(self, req: dict) -> WhatIfResult:
        if not isinstance(req, dict):
            raise SchemaError("request body must be a JSON object")
        engine = req.get("engine", "surrogate")
        if engine not in ("surrogate", "oracle"):
            raise SchemaError(f"engine must be surrogate or oracle, got {engine!r}")
        slice_spec = req.get("slice") or {"axis": "z", "index": None}
        axis = slice_spec.get("axis", "z")
        if axis not in _AXES:
            raise SchemaError(f"slice.axis must be one of x/y/z, got {axis!r}")
        a = _AXES[axis]
        n_axis = self.grid.dims[a]
        index = slice_spec.get("index")
        if index is None:
            # default inspection plane: 1.5 m (server inlet height) for z
            index = (min(int(1.5 / self.grid.resolution), n_axis - 1)
                     if axis == "z" else n_axis // 2)
        if not isinstance(index, int) or not 0 <= index < n_axis:
            raise SchemaError(f"slice.index must be an integer in 0..{n_axis - 1}")

        scenario = _parse_overrides(req, self.scene)
        warning = check_envelope(scenario, self.envelope)
        if warning and engine == "surrogate":
            raise RangeError(warning + " (surrogate refuses to extrapolate; "
                             "use engine=oracle to force)")

        t0 = time.perf_counter()
        if engine == "surrogate":
            speed, temp = self._surrogate_fields(scenario)
        else:
            with self._wait_lock:
                if self._oracle_waiting >= self._oracle_depth:
                    raise OracleBusyError("oracle queue is full, retry later")
                self._oracle_waiting += 1
            try:
                with self._oracle_lock:
                    speed, temp = self._oracle_fields(scenario)
            finally:
                with self._wait_lock:
                    self._oracle_waiting -= 1
        latency_ms = (time.perf_counter() - t0) * 1000.0

        inlet = self._inlet_temps(temp)
        sl_t, sl_s = self._extract_slice(temp, speed, a, index)
        return WhatIfResult(
            scenario=scenario, slice_axis=axis, slice_index=index,
            slice_temps=sl_t, slice_speed=sl_s,
            server_inlet_temps_c=[round(float(t), 4) for t in inlet],
            stats={
                "median_inlet_c": float(np.median(inlet)),
                "p95_inlet_c": float(np.percentile(inlet, 95)),
                "max_inlet_c": float(np.max(inlet)),
            },
            latency_ms=latency_ms, engine=engine, warning=warning)

    def _inlet_temps(self, temp_grid):
        flat = temp_grid.ravel()
        out = []
        for s in range(len(self.scene.servers)):
            g = self.grid.groups_for("server_inlet", s)[0]
            out.append(float(np.dot(flat[g.cells], g.weights)))
        return np.asarray(out)

    def _extract_slice(self, temp, speed, axis, index):
        sl = [slice(None)] * 3
        sl[2 - axis] = index
        t2 = temp[tuple(sl)]
        s2 = speed[tuple(sl)]
        f2 = self.grid.fluid[tuple(sl)]
        temps = [[round(float(t2[r, c]), 4) if f2[r, c] else None
                  for c in range(t2.shape[1])] for r in range(t2.shape[0])]
        speeds = [[round(float(s2[r, c]), 5) if f2[r, c] else None
                   for c in range(s2.shape[1])] for r in range(s2.shape[0])]
        return temps, speeds

    def grid_meta(self):
        nx, ny, nz = self.grid.dims
        return {
            "dims": [nx, ny, nz],
            "resolution": self.grid.resolution,
            "hall_dims": list(self.scene.hall_dims),
            "n_fluid_cells": self.grid.n_fluid,
            "scene_hash": self.grid.scene_hash,
            "default_slice": {"axis": "z",
                              "index": min(int(1.5 / self.grid.resolution), nz - 1)},
        }


class OracleBusyError(DcpaError):
    code = "E_BUSY"


def result_to_obj(res: WhatIfResult):
    return {
        "engine": res.engine,
        "latency_ms": res.latency_ms,
        "warning": res.warning,
        "slice": {
            "axis": res.slice_axis,
            "index": res.slice_index,
            "temps_c": res.slice_temps,
            "speed_ms": res.slice_speed,
        },
        "server_inlet_temps_c": res.server_inlet_temps_c,
        "stats": res.stats,
    }


def create_app(service: WhatIfService, ui_dir=None):
    """FastAPI app exposing health/scene/grid/whatif plus optional static UI."""
    import os

    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse

    app = FastAPI(title="dcpa what-if service", docs_url=None, redoc_url=None)
    scene_obj = scene_to_obj(service.scene)

    threads = os.environ.get("DCPA_THREADS")
    if threads:
        @app.on_event("startup")
        async def _cap_workers():
            import anyio.to_thread

            limiter = anyio.to_thread.current_default_thread_limiter()
            limiter.total_tokens = max(1, int(threads))

    @app.exception_handler(DcpaError)
    async def _dcpa_error(request: Request, exc: DcpaError):
        status = 503 if isinstance(exc, OracleBusyError) else 400
        return JSONResponse(status_code=status,
                            content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"code": "E_SCHEMA", "message": str(exc)})

    @app.get("/api/health")
    def health():
        return {"status": "ok"}

    @app.get("/api/scene")
    def scene():
        return scene_obj

    @app.get("/api/grid")
    def grid():
        return service.grid_meta()

    @app.post("/api/whatif")
    def whatif(body: dict):
        return result_to_obj(service.whatif(body))

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve_http(scene, model, port=8080, host="127.0.0.1", resolution=0.5,
               envelope=None, ui_dir=None):
    """Blocking uvicorn server; raises BindError if the port is taken."""
    import errno

    import uvicorn

    from .errors import BindError

    service = WhatIfService(scene, model, resolution=resolution, envelope=envelope)
    app = create_app(service, ui_dir=ui_dir)
    config = uvicorn.Config(app, host=host, port=port, log_level="info")
    server = uvicorn.Server(config)
    try:
        server.run()
    except OSError as exc:
        if exc.errno in (errno.EADDRINUSE, errno.EACCES):
            raise BindError(f"cannot bind {host}:{port}: {exc}") from exc
        raise
    return 0
