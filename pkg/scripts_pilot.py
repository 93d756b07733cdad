"""Pilot run: mid-size dataset, full two-stage training, test-split eval."""
import logging
import sys
import tempfile
import time

import numpy as np

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s",
                    stream=sys.stdout)

from dcpa.scene import builtin_demo_scene
from dcpa.sampling import SamplingConfig
from dcpa.dataset import generate_dataset
from dcpa.neuralop import OperatorConfig
from dcpa.training import TrainConfig, train_stage, save_checkpoint
from dcpa.evaluation import evaluate_model

t0 = time.time()
scene = builtin_demo_scene()
cfg = SamplingConfig(n_scenarios=48, seed=42)
ds = generate_dataset(scene, cfg, (32, 8, 8), 0.5, "/tmp/pilot_ds")
print(f"dataset: {time.time()-t0:.0f}s", flush=True)

op_cfg = OperatorConfig()
tc = TrainConfig(epochs=60, batch_scenarios=4, points_per_scenario=1024,
                 val_points_per_scenario=1024, seed=7, early_stop_patience=16,
                 plateau_patience=6)
model, meta_f = train_stage("fluid", scene, ds, tc, op_cfg)
print(f"fluid done: {time.time()-t0:.0f}s", flush=True)
tc2 = TrainConfig(epochs=80, batch_scenarios=4, points_per_scenario=1024,
                  val_points_per_scenario=1024, seed=8, early_stop_patience=16,
                  plateau_patience=6)
model, meta_t = train_stage("thermal", scene, ds, tc2, fluid_model=model)
print(f"thermal done: {time.time()-t0:.0f}s", flush=True)
save_checkpoint("/tmp/pilot_model.dcpw", model, {"pilot": True})

rep = evaluate_model(model, scene, ds, split="test")
print("TEST median %.3f C  mean %.3f  p95 %.3f  max %.3f  frac<=2.5 %.4f  vel_rel %.3f"
      % (rep.median_abs_c, rep.mean_abs_c, rep.p95_abs_c, rep.max_abs_c,
         rep.frac_within_band, rep.velocity_rel_l2), flush=True)
print("per-scenario medians:", [f"{m:.3f}" for m in rep.per_scenario_median], flush=True)
rep_v = evaluate_model(model, scene, ds, split="val")
print("VAL  median %.3f C  p95 %.3f" % (rep_v.median_abs_c, rep_v.p95_abs_c), flush=True)
print(f"total {time.time()-t0:.0f}s", flush=True)
