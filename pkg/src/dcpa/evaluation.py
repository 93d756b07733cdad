"""Error metrics, latency benchmarking, report emission.

Errors are measured at fluid cell centers only; solid cells never enter the
statistics. The histogram uses 0.1 degC bins so sub-degree medians resolve.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import HashMismatchError, IoError
from .grid import build_grid
from .scene import scene_hash

HIST_BIN_C = 0.1
BULK_BAND_C = 2.5


@dataclass
class ErrorReport:
    n_scenarios: int
    n_points: int
    median_abs_c: float
    mean_abs_c: float
    p95_abs_c: float
    max_abs_c: float
    frac_within_band: float
    band_c: float
    velocity_rel_l2: float
    histogram: list            # [(bin_lo, bin_hi, count), ...]
    scene_hash: str
    checkpoint_hash: str
    dataset_manifest: dict
    per_scenario_median: list = field(default_factory=list)
    slice_plane: dict | None = None

    def to_obj(self):
        return {
            "n_scenarios": self.n_scenarios,
            "n_points": self.n_points,
            "median_abs_c": self.median_abs_c,
            "mean_abs_c": self.mean_abs_c,
            "p95_abs_c": self.p95_abs_c,
            "max_abs_c": self.max_abs_c,
            "frac_within_band": self.frac_within_band,
            "band_c": self.band_c,
            "velocity_rel_l2": self.velocity_rel_l2,
            "histogram": [[lo, hi, int(n)] for lo, hi, n in self.histogram],
            "scene_hash": self.scene_hash,
            "checkpoint_hash": self.checkpoint_hash,
            "dataset_manifest": self.dataset_manifest,
            "per_scenario_median": self.per_scenario_median,
        }


def model_params_hash(model):
    """sha256 over all parameter bytes in name order."""
    digest = hashlib.sha256()
    for key in sorted(model.params):
        part = model.params[key]
        for pname in part:
            digest.update(f"{key}.{pname}".encode())
            digest.update(np.ascontiguousarray(part[pname].data, dtype="<f4").tobytes())
    return digest.hexdigest()


def evaluate_model(model, scene, dataset, split="test", predictor=None):
    """Predict every scenario of a dataset split at all fluid cell centers
    and aggregate absolute temperature errors against the stored fields.

    predictor(scene, scenario, points) may override the model's own
    predict_full_field (used for oracle-vs-self identity checks)."""
    if model is not None and model.scene_hash != dataset.scene_hash:
        raise HashMismatchError("model and dataset scenes differ")
    grid = build_grid(scene, dataset.resolution)
    points = grid.cell_centers()
    fluid_flat = grid.fluid_indices()
    idx = {"train": 0, "val": 1, "test": 2}[split]
    case_ids = dataset.split[idx]

    abs_errors = []
    per_scpe_median = []
    vel_rel = []
    for i in case_ids:
        sol = dataset.load_case(i)
        if predictor is not None:
            vel_pred, temp_pred = predictor(scene, sol.scenario, points)
        else:
            vel_pred, temp_pred = model.predict_full_field(scene, sol.scenario, points)
        truth_t = sol.temperature.ravel()[fluid_flat]
        err = np.abs(temp_pred - truth_t)
        abs_errors.append(err)
        per_scpe_median.append(float(np.median(err)))

        truth_v = np.stack([sol.velocity[c].ravel()[fluid_flat] for c in range(3)], axis=1)
        diff = vel_pred - truth_v
        vel_rel.append(float(np.linalg.norm(diff) / (np.linalg.norm(truth_v) + 1e-12)))

    err = np.concatenate(abs_errors)
    edges = np.arange(0.0, max(float(err.max()), HIST_BIN_C) + HIST_BIN_C, HIST_BIN_C)
    counts, _ = np.histogram(err, bins=edges)
    hist = [(float(edges[k]), float(edges[k + 1]), int(counts[k]))
            for k in range(len(counts))]

    return ErrorReport(
        n_scenarios=len(case_ids),
        n_points=int(err.size),
        median_abs_c=float(np.median(err)),
        mean_abs_c=float(err.mean()),
        p95_abs_c=float(np.percentile(err, 95)),
        max_abs_c=float(err.max()),
        frac_within_band=float((err <= BULK_BAND_C).mean()),
        band_c=BULK_BAND_C,
        velocity_rel_l2=float(np.mean(vel_rel)),
        histogram=hist,
        scene_hash=dataset.scene_hash,
        checkpoint_hash=model_params_hash(model) if model is not None else "",
        dataset_manifest={"n_cases": dataset.n_cases,
                          "split": dataset.manifest["split"],
                          "grid": dataset.manifest["grid"]},
        per_scenario_median=per_scpe_median,
    )


def bench_latency(model, scene, scenario, point_counts=(19200,), repeats=100,
                  hardware=""):
    """p50/p95 wall-clock seconds of predict_full_field per point count."""
    import platform

    grid = build_grid(scene, 0.5)
    base = grid.cell_centers()
    results = {}
    for n in point_counts:
        reps = int(np.ceil(n / len(base)))
        pts = np.concatenate([base] * reps)[:n]
        model.predict_full_field(scene, scenario, pts)  # warm-up
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            model.predict_full_field(scene, scenario, pts)
            times.append(time.perf_counter() - t0)
        results[int(n)] = {
            "p50_s": float(np.percentile(times, 50)),
            "p95_s": float(np.percentile(times, 95)),
            "repeats": repeats,
        }
    return {
        "hardware": hardware or platform.processor() or platform.machine(),
        "point_counts": results,
        # published figure for transformer-operator inference on a V100 at
        # ~340k-cell CFD scale; recorded alongside, not comparable to desk CPU
        "reference": {"published_v100_s": 0.01, "comparable": False},
    }


def export_report(report: ErrorReport, out_dir, slice_data=None):
    """Write report.json, errors_histogram.csv and slices.csv."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(
            json.dumps(report.to_obj(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8", newline="\n")

        with open(out / "errors_histogram.csv", "w", newline="\n",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, n in report.histogram:
                writer.writerow([f"{lo:.1f}", f"{hi:.1f}", n])

        with open(out / "slices.csv", "w", newline="\n", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "y", "t_pred_c", "t_true_c", "abs_err_c"])
            for row in (slice_data or []):
                writer.writerow([f"{v:.6g}" for v in row])
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from exc
    return out


def slice_rows(scene, grid, temp_pred, temp_true, z_height=1.5):
    """(x, y, T_pred, T_true, |err|) rows for one horizontal plane.

    temp arrays are full-grid (nz, ny, nx); solid cells are skipped."""
    k = min(int(z_height / grid.resolution), grid.dims[2] - 1)
    h = grid.resolution
    rows = []
    for j in range(grid.dims[1]):
        for i in range(grid.dims[0]):
            if not grid.fluid[k, j, i]:
                continue
            tp = float(temp_pred[k, j, i])
            tt = float(temp_true[k, j, i])
            rows.append(((i + 0.5) * h, (j + 0.5) * h, tp, tt, abs(tp - tt)))
    return rows
