"""Boundary-condition assignment for one simulated case."""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import SchemaError


@dataclass(frozen=True)
class Scenario:
    """Per-ACU (supply_temp_c, flow_m3s) and per-server (power_w, flow_m3s),
    ordered as in the scene."""

    acu_supply_temp_c: tuple[float, ...]
    acu_flow_m3s: tuple[float, ...]
    server_power_w: tuple[float, ...]
    server_flow_m3s: tuple[float, ...]

    def check_against(self, scene):
        if len(self.acu_supply_temp_c) != len(scene.acus) \
                or len(self.acu_flow_m3s) != len(scene.acus):
            raise SchemaError(
                f"scenario has {len(self.acu_supply_temp_c)} ACU settings, "
                f"scene has {len(scene.acus)} ACUs")
        if len(self.server_power_w) != len(scene.servers) \
                or len(self.server_flow_m3s) != len(scene.servers):
            raise SchemaError(
                f"scenario has {len(self.server_power_w)} server settings, "
                f"scene has {len(scene.servers)} servers")
        if any(q <= 0 for q in self.acu_flow_m3s) or any(q <= 0 for q in self.server_flow_m3s):
            raise SchemaError("scenario flows must be > 0")
        if any(p < 0 for p in self.server_power_w):
            raise SchemaError("scenario powers must be >= 0")

    def to_obj(self):
        return {
            "acu_supply_temp_c": list(self.acu_supply_temp_c),
            "acu_flow_m3s": list(self.acu_flow_m3s),
            "server_power_w": list(self.server_power_w),
            "server_flow_m3s": list(self.server_flow_m3s),
        }

    @classmethod
    def from_obj(cls, obj):
        try:
            return cls(
                acu_supply_temp_c=tuple(float(v) for v in obj["acu_supply_temp_c"]),
                acu_flow_m3s=tuple(float(v) for v in obj["acu_flow_m3s"]),
                server_power_w=tuple(float(v) for v in obj["server_power_w"]),
                server_flow_m3s=tuple(float(v) for v in obj["server_flow_m3s"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad scenario object: {exc}") from exc

    def to_json(self):
        return json.dumps(self.to_obj(), sort_keys=True, indent=2)


def default_scenario(scene):
    """Scenario carrying the scene's built-in boundary values."""
    return Scenario(
        acu_supply_temp_c=tuple(a.supply_temp_c for a in scene.acus),
        acu_flow_m3s=tuple(a.flow_m3s for a in scene.acus),
        server_power_w=tuple(s.power_w for s in scene.servers),
        server_flow_m3s=tuple(s.flow_m3s for s in scene.servers),
    )
