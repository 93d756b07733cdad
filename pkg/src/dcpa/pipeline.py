"""End-to-end desk pipeline: dataset -> two-stage training -> evaluation.

One call reproduces the shipped desk preset (96 scenarios, 64/16/16 split,
seed 42, 0.5 m grid) and returns everything the acceptance gate inspects.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

from .dataset import generate_dataset, load_dataset
from .evaluation import evaluate_model
from .neuralop import OperatorConfig
from .sampling import SamplingConfig
from .scene import builtin_demo_scene
from .training import TrainConfig, load_checkpoint, save_checkpoint, train_stage

log = logging.getLogger(__name__)


def run_desk_pipeline(out_dir, scene=None, n_scenarios=96, split=(64, 16, 16),
                      seed=42, resolution=0.5, op_cfg=None,
                      fluid_epochs=60, thermal_epochs=80, points=1024,
                      wall_clock_cap_s=7200.0):
    """Returns dict with dataset, model, report and per-phase timings (s)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = scene or builtin_demo_scene()
    op_cfg = op_cfg or OperatorConfig(seed=seed)

    timings = {}
    t0 = time.monotonic()
    ds_dir = out / "dataset"
    cfg = SamplingConfig(n_scenarios=n_scenarios, seed=seed)
    dataset = generate_dataset(scene, cfg, split, resolution, ds_dir)
    timings["dataset_s"] = time.monotonic() - t0

    common = dict(batch_scenarios=4, points_per_scenario=points,
                  val_points_per_scenario=points, plateau_patience=6,
                  early_stop_patience=16, wall_clock_cap_s=wall_clock_cap_s)
    t1 = time.monotonic()
    fluid_cfg = TrainConfig(epochs=fluid_epochs, seed=seed, **common)
    model, meta_fluid = train_stage("fluid", scene, dataset, fluid_cfg, op_cfg)
    timings["train_fluid_s"] = time.monotonic() - t1

    t2 = time.monotonic()
    thermal_cfg = TrainConfig(epochs=thermal_epochs, seed=seed + 1, **common)
    model, meta_thermal = train_stage("thermal", scene, dataset, thermal_cfg,
                                      fluid_model=model)
    timings["train_thermal_s"] = time.monotonic() - t2

    ckpt = out / "model.dcpw"
    save_checkpoint(ckpt, model, {
        "stage": "thermal", "sampling_config": cfg.to_obj(),
        "fluid": {d: h["best_val"] for d, h in meta_fluid["domains"].items()},
        "thermal": {d: h["best_val"] for d, h in meta_thermal["domains"].items()},
    })

    t3 = time.monotonic()
    report = evaluate_model(model, scene, dataset, split="test")
    timings["eval_s"] = time.monotonic() - t3
    timings["total_s"] = time.monotonic() - t0

    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True))
    log.info("desk pipeline: median %.3f C, p95 %.3f C, total %.0f s",
             report.median_abs_c, report.p95_abs_c, timings["total_s"])
    return {"scene": scene, "dataset": dataset, "model": model,
            "checkpoint": ckpt, "report": report, "timings": timings,
            "metadata": {"fluid": meta_fluid, "thermal": meta_thermal}}


def load_desk_pipeline(out_dir, scene=None):
    """Reload a previously produced pipeline directory (None if incomplete)."""
    out = Path(out_dir)
    ckpt = out / "model.dcpw"
    if not (ckpt.exists() and (out / "dataset" / "manifest.json").exists()
            and (out / "timings.json").exists()):
        return None
    scene = scene or builtin_demo_scene()
    dataset = load_dataset(out / "dataset", scene=scene)
    model, _ = load_checkpoint(ckpt, scene=scene)
    timings = json.loads((out / "timings.json").read_text())
    report = evaluate_model(model, scene, dataset, split="test")
    return {"scene": scene, "dataset": dataset, "model": model,
            "checkpoint": ckpt, "report": report, "timings": timings,
            "metadata": None}
