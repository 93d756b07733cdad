"""Dataset packaging: batch simulation, splits, normalization statistics.

Directory layout:
    manifest.json      scene hash, grid, sampling config, split indices
    norm_stats.json    per-channel mean/std from the train split only
    cases/case_%04d.bin (+ .json sidecar)   field files in solve order
All JSON is UTF-8 with sorted keys so dataset bytes are reproducible.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constants import DATASET_FORMAT_VERSION
from .errors import FormatError, HashMismatchError, SplitError, UnconvergedCaseError
from .features import acu_features, server_features
from .fields import FieldSolution, make_solution, read_field_file, write_field_file
from .grid import build_grid
from .scene import scene_hash
from .solver import (DIVERGENCE_TOL, LINEAR_TOL, solve_flow, solve_temperature)

log = logging.getLogger(__name__)

OUTPUT_CHANNELS = ("u", "v", "w", "T")


@dataclass
class NormStats:
    server_mean: np.ndarray
    server_std: np.ndarray
    acu_mean: np.ndarray
    acu_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray
    degenerate: dict

    def to_obj(self):
        return {
            "server_inputs": {"mean": self.server_mean.tolist(),
                              "std": self.server_std.tolist()},
            "acu_inputs": {"mean": self.acu_mean.tolist(),
                           "std": self.acu_std.tolist()},
            "outputs": {"mean": self.out_mean.tolist(),
                        "std": self.out_std.tolist()},
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_obj(cls, obj):
        return cls(
            server_mean=np.asarray(obj["server_inputs"]["mean"]),
            server_std=np.asarray(obj["server_inputs"]["std"]),
            acu_mean=np.asarray(obj["acu_inputs"]["mean"]),
            acu_std=np.asarray(obj["acu_inputs"]["std"]),
            out_mean=np.asarray(obj["outputs"]["mean"]),
            out_std=np.asarray(obj["outputs"]["std"]),
            degenerate=obj["degenerate"],
        )


@dataclass
class Dataset:
    root: Path
    manifest: dict
    norm_stats: NormStats

    @property
    def scene_hash(self):
        return self.manifest["scene_hash"]

    @property
    def n_cases(self):
        return self.manifest["n_cases"]

    @property
    def split(self):
        sp = self.manifest["split"]
        return sp["train"], sp["val"], sp["test"]

    @property
    def resolution(self):
        return self.manifest["grid"]["resolution"]

    def case_path(self, i):
        return self.root / "cases" / f"case_{i:04d}.bin"

    def load_case(self, i) -> FieldSolution:
        return read_field_file(self.case_path(i))


def _floored_std(arr, axis):
    std = arr.std(axis=axis)
    degenerate = std < 1e-12
    if degenerate.any():
        log.warning("norm stats: %d degenerate channel(s), std forced to 1",
                    int(degenerate.sum()))
    return np.where(degenerate, 1.0, std), degenerate


def compute_norm_stats(scene, grid, scenarios, solutions, train_idx) -> NormStats:
    srv = np.stack([server_features(scene, scenarios[i]) for i in train_idx])
    acu = np.stack([acu_features(scene, scenarios[i]) for i in train_idx])
    srv = srv.reshape(-1, srv.shape[-1])
    acu = acu.reshape(-1, acu.shape[-1])

    fluid = grid.fluid
    outs = []
    for i in train_idx:
        sol = solutions[i]
        outs.append(np.stack([sol.channel(c)[fluid] for c in range(4)], axis=1))
    outs = np.concatenate(outs, axis=0)

    srv_std, srv_deg = _floored_std(srv, 0)
    acu_std, acu_deg = _floored_std(acu, 0)
    out_std, out_deg = _floored_std(outs, 0)
    return NormStats(
        server_mean=srv.mean(axis=0), server_std=srv_std,
        acu_mean=acu.mean(axis=0), acu_std=acu_std,
        out_mean=outs.mean(axis=0), out_std=out_std,
        degenerate={
            "server_inputs": srv_deg.tolist(),
            "acu_inputs": acu_deg.tolist(),
            "outputs": out_deg.tolist(),
        })


def _check_converged(sol: FieldSolution, idx):
    res = sol.residuals
    if res.get("max_divergence_m3s", np.inf) > 2 * DIVERGENCE_TOL:
        raise UnconvergedCaseError(
            f"case {idx}: divergence {res['max_divergence_m3s']:.2e} above tolerance")
    if res.get("transport_linear_residual", np.inf) > 2 * LINEAR_TOL:
        raise UnconvergedCaseError(
            f"case {idx}: transport residual {res['transport_linear_residual']:.2e} "
            "above tolerance")


def build_dataset(scene, grid, scenarios, solutions, split, seed, out_dir,
                  sampling_config=None) -> Dataset:
    """Write a dataset directory from solved cases and return the handle."""
    n_train, n_val, n_test = split
    n = len(scenarios)
    if len(solutions) != n:
        raise SplitError(f"{n} scenarios but {len(solutions)} solutions")
    if n_train + n_val + n_test != n:
        raise SplitError(
            f"split {split} does not sum to the {n} available cases")
    for i, sol in enumerate(solutions):
        _check_converged(sol, i)

    rng = np.random.Generator(np.random.Philox(np.uint64(seed)))
    perm = rng.permutation(n)
    train_idx = sorted(int(i) for i in perm[:n_train])
    val_idx = sorted(int(i) for i in perm[n_train:n_train + n_val])
    test_idx = sorted(int(i) for i in perm[n_train + n_val:])

    stats = compute_norm_stats(scene, grid, scenarios, solutions, train_idx)

    root = Path(out_dir)
    (root / "cases").mkdir(parents=True, exist_ok=True)
    for i, sol in enumerate(solutions):
        write_field_file(root / "cases" / f"case_{i:04d}.bin", sol)

    nx, ny, nz = grid.dims
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "scene_hash": scene_hash(scene),
        "grid": {"resolution": grid.resolution, "dims": [nx, ny, nz],
                 "key": grid.key()},
        "n_cases": n,
        "split": {"train": train_idx, "val": val_idx, "test": test_idx},
        "split_seed": seed,
        "sampling_config": sampling_config,
    }
    (root / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    (root / "norm_stats.json").write_text(
        json.dumps(stats.to_obj(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return Dataset(root=root, manifest=manifest, norm_stats=stats)


def load_dataset(path, scene=None) -> Dataset:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{root}: not a dataset directory (no manifest.json)")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: {exc}") from exc
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise FormatError(
            f"{root}: unsupported dataset version {manifest.get('format_version')}")
    if scene is not None and scene_hash(scene) != manifest["scene_hash"]:
        raise HashMismatchError(
            f"dataset was built for scene {manifest['scene_hash'][:12]}..., "
            f"got {scene_hash(scene)[:12]}...")
    stats = NormStats.from_obj(
        json.loads((root / "norm_stats.json").read_text(encoding="utf-8")))
    return Dataset(root=root, manifest=manifest, norm_stats=stats)


def simulate_batch(scene, grid, scenarios, workers=None):
    """Solve every scenario; returns solutions in scenario order.

    Worker processes fan out across scenarios (each solve stays
    single-threaded and deterministic); assembly order is by index, so the
    result is identical with or without parallelism.
    """
    if workers is None:
        workers = int(os.environ.get("DCPA_THREADS", "1"))
    if workers <= 1 or len(scenarios) <= 1:
        return [_solve_one(grid, sc) for sc in scenarios]

    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_solve_one, [grid] * len(scenarios), scenarios,
                             chunksize=max(1, len(scenarios) // (4 * workers))))


def _solve_one(grid, scenario):
    flow = solve_flow(grid, scenario)
    temp = solve_temperature(grid, scenario, flow)
    return make_solution(grid, scenario, flow, temp)


def generate_dataset(scene, cfg, split, resolution, out_dir, workers=None):
    """End-to-end: sample scenarios, simulate, package. Returns Dataset."""
    from .sampling import make_scenarios

    grid = build_grid(scene, resolution)
    scenarios = make_scenarios(scene, cfg)
    solutions = simulate_batch(scene, grid, scenarios, workers=workers)
    return build_dataset(scene, grid, scenarios, solutions, split, cfg.seed,
                         out_dir, sampling_config=cfg.to_obj())
