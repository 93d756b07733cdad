"""Latin Hypercube scenario sampling over boundary-condition ranges.

All randomness flows through a counter-based Philox generator keyed by the
config seed, so sampled scenarios are bit-reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import server_flow_from_power
from .scenario import Scenario


@dataclass(frozen=True)
class SamplingConfig:
    n_scenarios: int = 96
    supply_temp_range: tuple[float, float] = (18.0, 24.0)
    server_power_range: tuple[float, float] = (1000.0, 2000.0)
    acu_flow_fixed: float = 4.0                     # m^3/s per ACU
    acu_flow_range: tuple[float, float] | None = None  # sampled when set
    seed: int = 42

    def __post_init__(self):
        if self.n_scenarios < 1:
            raise ValueError("n_scenarios must be >= 1")
        for lo, hi in (self.supply_temp_range, self.server_power_range,
                       self.acu_flow_range or (0.0, 1.0)):
            if not lo < hi:
                raise ValueError(f"range [{lo}, {hi}] must have lo < hi")

    def to_obj(self):
        return {
            "n_scenarios": self.n_scenarios,
            "supply_temp_range": list(self.supply_temp_range),
            "server_power_range": list(self.server_power_range),
            "acu_flow_fixed": self.acu_flow_fixed,
            "acu_flow_range": list(self.acu_flow_range) if self.acu_flow_range else None,
            "seed": self.seed,
        }

    @classmethod
    def from_obj(cls, obj):
        return cls(
            n_scenarios=int(obj["n_scenarios"]),
            supply_temp_range=tuple(obj["supply_temp_range"]),
            server_power_range=tuple(obj["server_power_range"]),
            acu_flow_fixed=float(obj["acu_flow_fixed"]),
            acu_flow_range=tuple(obj["acu_flow_range"]) if obj.get("acu_flow_range") else None,
            seed=int(obj["seed"]),
        )


PAPER_PRESET = SamplingConfig(n_scenarios=500, seed=42)
DESK_PRESET = SamplingConfig(n_scenarios=96, seed=42)


def lhs_sample(ranges, n, seed):
    """n x d Latin Hypercube: each dimension's n samples hit each of the n
    equal-width strata exactly once, uniform within the stratum."""
    ranges = np.asarray(ranges, dtype=np.float64)
    if ranges.ndim != 2 or ranges.shape[1] != 2:
        raise ValueError("ranges must be a list of [lo, hi] pairs")
    if n < 1:
        raise ValueError("n must be >= 1")
    d = ranges.shape[0]
    rng = np.random.Generator(np.random.Philox(np.uint64(seed)))
    out = np.empty((n, d), dtype=np.float64)
    for col in range(d):
        strata = rng.permutation(n)
        u = rng.random(n)
        unit = (strata + u) / n
        lo, hi = ranges[col]
        out[:, col] = lo + unit * (hi - lo)
    return out


def make_scenarios(scene, cfg: SamplingConfig):
    """LHS over (per-ACU supply temp [, per-ACU flow], per-server power);
    server flows derived from the sampled powers."""
    n_acu = len(scene.acus)
    n_srv = len(scene.servers)
    ranges = [cfg.supply_temp_range] * n_acu
    if cfg.acu_flow_range is not None:
        ranges += [cfg.acu_flow_range] * n_acu
    ranges += [cfg.server_power_range] * n_srv

    mat = lhs_sample(ranges, cfg.n_scenarios, cfg.seed)
    scenarios = []
    for row in mat:
        temps = tuple(row[:n_acu])
        if cfg.acu_flow_range is not None:
            flows = tuple(row[n_acu:2 * n_acu])
            powers = row[2 * n_acu:]
        else:
            flows = tuple(cfg.acu_flow_fixed for _ in range(n_acu))
            powers = row[n_acu:]
        scenarios.append(Scenario(
            acu_supply_temp_c=temps,
            acu_flow_m3s=flows,
            server_power_w=tuple(powers),
            server_flow_m3s=tuple(server_flow_from_power(p) for p in powers),
        ))
    return scenarios
