"""Command-line entry point.

Subcommands: scene, simulate, sample, dataset, train, eval, bench, serve.
Exit code 0 on success; DcpaError prints its code and exits 1; usage errors
print E_USAGE and exit 2. All randomness flows from --seed flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import DcpaError, SchemaError

log = logging.getLogger("dcpa")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error E_USAGE: {message}", file=sys.stderr)
        raise SystemExit(2)


def _load_scene(args):
    from .scene import builtin_demo_scene, parse_scene

    if getattr(args, "demo", False) or args.scene is None:
        return builtin_demo_scene()
    return parse_scene(Path(args.scene).read_text(encoding="utf-8"))


def _add_scene_arg(p):
    p.add_argument("--scene", help="scene JSON file (default: built-in demo hall)")
    p.add_argument("--demo", action="store_true", help="use the built-in demo hall")


def cmd_scene(args):
    from .scene import scene_hash, serialize_scene, validate_scene

    scene = _load_scene(args)
    if args.action == "validate":
        rep = validate_scene(scene)
        for code, msg, entity in rep.errors:
            print(f"error {code}: {msg} [{entity}]")
        for code, msg, entity in rep.warnings:
            print(f"warning {code}: {msg} [{entity}]")
        print(f"{len(rep.errors)} error(s), {len(rep.warnings)} warning(s); "
              f"hash {scene_hash(scene)}")
        return 0 if rep.ok else 1
    if args.action == "export":
        text = serialize_scene(scene)
        if args.out:
            Path(args.out).write_text(text + "\n", encoding="utf-8")
            print(f"wrote {args.out}")
        else:
            print(text)
        return 0
    raise AssertionError(args.action)


def cmd_simulate(args):
    from .fields import make_solution, write_field_file
    from .grid import build_grid
    from .sampling import SamplingConfig, make_scenarios
    from .scenario import Scenario, default_scenario
    from .solver import check_conservation, solve_flow, solve_temperature

    scene = _load_scene(args)
    grid = build_grid(scene, args.resolution)
    if args.scenario:
        obj = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
        scenario = Scenario.from_obj(obj)
    elif args.default_scenario:
        scenario = default_scenario(scene)
    else:
        cfg = SamplingConfig(n_scenarios=1, seed=args.seed)
        scenario = make_scenarios(scene, cfg)[0]
    scenario.check_against(scene)

    flow = solve_flow(grid, scenario)
    temp = solve_temperature(grid, scenario, flow)
    sol = make_solution(grid, scenario, flow, temp)
    write_field_file(args.out, sol)
    rep = check_conservation(grid, scenario, flow, temp)
    print(f"wrote {args.out}: max divergence {flow.max_divergence:.2e} m3/s, "
          f"mass_rel {rep.mass_rel:.2e}, energy_rel {rep.energy_rel:.2e}")
    return 0


def cmd_sample(args):
    from .sampling import SamplingConfig, make_scenarios

    scene = _load_scene(args)
    cfg = SamplingConfig(
        n_scenarios=args.n, seed=args.seed,
        supply_temp_range=tuple(args.supply_range),
        server_power_range=tuple(args.power_range))
    scenarios = make_scenarios(scene, cfg)
    payload = {"sampling_config": cfg.to_obj(),
               "scenarios": [s.to_obj() for s in scenarios]}
    Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                              encoding="utf-8")
    print(f"wrote {args.out}: {len(scenarios)} scenarios")
    return 0


_PRESETS = {
    # n_scenarios, split
    "desk": (96, (64, 16, 16)),
    "paper": (500, (400, 50, 50)),
}


def cmd_dataset(args):
    from .dataset import generate_dataset
    from .sampling import SamplingConfig

    scene = _load_scene(args)
    if args.preset:
        n, split = _PRESETS[args.preset]
    else:
        n, split = args.n, tuple(args.split)
    if sum(split) != n:
        raise SchemaError(f"split {split} does not sum to {n}")
    cfg = SamplingConfig(n_scenarios=n, seed=args.seed)
    ds = generate_dataset(scene, cfg, split, args.resolution, args.out,
                          workers=args.workers)
    tr, va, te = ds.split
    print(f"wrote {args.out}: {ds.n_cases} cases, split "
          f"{len(tr)}/{len(va)}/{len(te)}, scene {ds.scene_hash[:12]}")
    return 0


def cmd_train(args):
    from .dataset import load_dataset
    from .neuralop import OperatorConfig
    from .training import (TrainConfig, load_checkpoint, save_checkpoint,
                           train_stage)

    scene = _load_scene(args)
    dataset = load_dataset(args.dataset, scene=scene)
    cfg = TrainConfig(
        epochs=args.epochs, batch_scenarios=args.batch,
        points_per_scenario=args.points, seed=args.seed,
        lambda_mass=args.lambda_mass, lambda_energy=args.lambda_energy,
        wall_clock_cap_s=args.time_cap)
    fluid_model = None
    if args.fluid_checkpoint:
        fluid_model, _ = load_checkpoint(args.fluid_checkpoint, scene=scene)
    op_cfg = OperatorConfig(seed=args.seed)
    model, meta = train_stage(args.stage, scene, dataset, cfg, op_cfg,
                              fluid_model=fluid_model)
    save_checkpoint(args.out, model, meta)
    vals = {d: h["best_val"] for d, h in meta["domains"].items()}
    print(f"wrote {args.out}: stage {args.stage}, best val {vals}")
    return 0


def cmd_eval(args):
    from .dataset import load_dataset
    from .evaluation import evaluate_model, export_report, slice_rows
    from .grid import build_grid
    from .training import load_checkpoint

    scene = _load_scene(args)
    dataset = load_dataset(args.dataset, scene=scene)
    model, _ = load_checkpoint(args.checkpoint, scene=scene)
    report = evaluate_model(model, scene, dataset, split=args.split)

    grid = build_grid(scene, dataset.resolution)
    test_ids = dataset.split[{"train": 0, "val": 1, "test": 2}[args.split]]
    slice_data = []
    if test_ids:
        sol = dataset.load_case(test_ids[0])
        points = grid.cell_centers()
        _, temp_pred = model.predict_full_field(scene, sol.scenario, points)
        full = np.zeros(grid.n_cells)
        full[grid.fluid_indices()] = temp_pred
        slice_data = slice_rows(scene, grid, full.reshape(grid.shape),
                                sol.temperature)
    export_report(report, args.out, slice_data=slice_data)
    print(f"wrote {args.out}: median {report.median_abs_c:.3f} C, "
          f"p95 {report.p95_abs_c:.3f} C, within {report.band_c} C: "
          f"{report.frac_within_band:.4f}")
    return 0


def cmd_bench(args):
    results = {}
    if args.what in ("kernels", "all"):
        results["kernels"] = bench_kernels()
    if args.what in ("attention", "all"):
        results["attention"] = bench_attention()
    if args.what in ("latency", "all"):
        if not args.checkpoint:
            raise SchemaError("bench latency requires --checkpoint")
        from .evaluation import bench_latency
        from .scenario import default_scenario
        from .training import load_checkpoint

        scene = _load_scene(args)
        model, _ = load_checkpoint(args.checkpoint, scene=scene)
        results["latency"] = bench_latency(
            model, scene, default_scenario(scene),
            point_counts=tuple(args.points), repeats=args.repeats)
    print(json.dumps(results, indent=2, sort_keys=True))
    return 0


def bench_kernels(repeats=50):
    """Compare stencil matvec backends on the demo-grid flow operator."""
    import time

    from . import kernels
    from .grid import build_grid
    from .scene import builtin_demo_scene
    from .solver import build_flow_operator

    grid = build_grid(builtin_demo_scene(), 0.5)
    op = build_flow_operator(grid)
    x = np.random.default_rng(0).normal(size=grid.shape)
    out = np.empty_like(x)
    results = {}
    for name in kernels.available_backends():
        fn = kernels.get_backend(name)
        fn(op.diag, op.cxm, op.cxp, op.cym, op.cyp, op.czm, op.czp, x, out)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(op.diag, op.cxm, op.cxp, op.cym, op.cyp, op.czm, op.czp, x, out)
            times.append(time.perf_counter() - t0)
        results[name] = {"p50_us": float(np.percentile(times, 50) * 1e6)}
    if "cython" in results and "numpy" in results:
        results["speedup_cython_over_numpy"] = (
            results["numpy"]["p50_us"] / results["cython"]["p50_us"])
    results["active_backend"] = kernels.BACKEND
    return results


def bench_attention(point_counts=(2048, 4096, 8192), t_tokens=256, d=64,
                    repeats=20):
    """Wall-clock scaling of galerkin_attention in the query count."""
    import time

    from .neuralop import galerkin_attention

    rng = np.random.default_rng(0)
    k = rng.normal(size=(t_tokens, d)).astype(np.float32)
    v = rng.normal(size=(t_tokens, d)).astype(np.float32)
    out = {}
    for n in point_counts:
        q = rng.normal(size=(n, d)).astype(np.float32)
        galerkin_attention(q, k, v)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            galerkin_attention(q, k, v)
            times.append(time.perf_counter() - t0)
        out[int(n)] = {"p50_us": float(np.percentile(times, 50) * 1e6)}
    ns = sorted(out)
    out["doubling_ratios"] = [
        out[b]["p50_us"] / out[a]["p50_us"] for a, b in zip(ns, ns[1:])]
    return out


def cmd_serve(args):
    from .sampling import SamplingConfig
    from .service import Envelope, serve_http
    from .training import load_checkpoint

    scene = _load_scene(args)
    model, meta = load_checkpoint(args.checkpoint, scene=scene)
    envelope = Envelope.from_sampling_config(
        (meta or {}).get("sampling_config")
        or SamplingConfig().to_obj())
    ui_dir = None
    if args.ui_dir and Path(args.ui_dir).is_dir():
        ui_dir = args.ui_dir
    return serve_http(scene, model, port=args.port, host=args.host,
                      resolution=args.resolution, envelope=envelope,
                      ui_dir=ui_dir)


def build_parser():
    parser = _Parser(prog="dcpa",
                     description="data-center thermal digital twin toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scene", help="validate or export a scene")
    p.add_argument("action", choices=["validate", "export"])
    _add_scene_arg(p)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_scene)

    p = sub.add_parser("simulate", help="solve one scenario")
    _add_scene_arg(p)
    p.add_argument("--scenario", help="scenario JSON (default: sampled by --seed)")
    p.add_argument("--default-scenario", action="store_true",
                   help="use the scene's built-in boundary values")
    p.add_argument("--resolution", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sample", help="sample scenarios with Latin Hypercube")
    _add_scene_arg(p)
    p.add_argument("--n", type=int, default=96)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--supply-range", nargs=2, type=float, default=[18.0, 24.0])
    p.add_argument("--power-range", nargs=2, type=float, default=[1000.0, 2000.0])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("dataset", help="dataset operations")
    p.add_argument("action", choices=["build"])
    _add_scene_arg(p)
    p.add_argument("--preset", choices=sorted(_PRESETS))
    p.add_argument("--n", type=int, default=96)
    p.add_argument("--split", nargs=3, type=int, default=[64, 16, 16])
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--resolution", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_dataset)

    p = sub.add_parser("train", help="train one stage of the surrogate")
    p.add_argument("--stage", choices=["fluid", "thermal"], required=True)
    _add_scene_arg(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--fluid-checkpoint")
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--points", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-mass", type=float, default=0.1)
    p.add_argument("--lambda-energy", type=float, default=0.1)
    p.add_argument("--time-cap", type=float, default=7200.0,
                   help="wall-clock budget in seconds")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a dataset")
    _add_scene_arg(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="benchmarks")
    p.add_argument("--what", choices=["kernels", "attention", "latency", "all"],
                   default="all")
    _add_scene_arg(p)
    p.add_argument("--checkpoint")
    p.add_argument("--points", nargs="+", type=int, default=[19200])
    p.add_argument("--repeats", type=int, default=100)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("serve", help="run the what-if HTTP service")
    _add_scene_arg(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--resolution", type=float, default=0.5)
    p.add_argument("--ui-dir", default="frontend/dist",
                   help="static UI assets served under /ui")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except DcpaError as exc:
        print(f"error {exc.code}: {exc.message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
