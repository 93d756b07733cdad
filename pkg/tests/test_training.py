import numpy as np
import pytest

from dcpa import autodiff as ad
from dcpa.autodiff import Tensor
from dcpa.dataset import build_dataset, simulate_batch
from dcpa.errors import (FormatError, HashMismatchError, StageOrderError,
                         VersionError)
from dcpa.grid import build_grid
from dcpa.neuralop import OperatorConfig
from dcpa.sampling import SamplingConfig, make_scenarios
from dcpa.training import (Adam, TrainConfig, composite_loss, load_checkpoint,
                           prepare_domain, save_checkpoint, train_stage)

from .conftest import make_single_server_scene


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    scene = make_single_server_scene()
    grid = build_grid(scene, 0.25)
    cfg = SamplingConfig(n_scenarios=6, seed=21)
    scenarios = make_scenarios(scene, cfg)
    solutions = simulate_batch(scene, grid, scenarios)
    ds = build_dataset(scene, grid, scenarios, solutions, (4, 1, 1), 21,
                       tmp_path_factory.mktemp("tinyds"),
                       sampling_config=cfg.to_obj())
    return scene, grid, ds


TINY_OP = dict(d_model=24, n_blocks=1, n_heads=2, fourier_m=6)


def fast_cfg(**kw):
    base = dict(epochs=2, batch_scenarios=2, points_per_scenario=256,
                val_points_per_scenario=256, seed=5, early_stop_patience=99)
    base.update(kw)
    return TrainConfig(**base)


# -- optimizer ---------------------------------------------------------------

def test_adam_zero_gradient_no_change():
    p = Tensor(np.ones(4), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    p.grad = np.zeros(4)
    opt.step()
    np.testing.assert_array_equal(p.data, np.ones(4, dtype=np.float32))
    p.grad = None
    opt.step()
    np.testing.assert_array_equal(p.data, np.ones(4, dtype=np.float32))


def test_adam_descends_quadratic():
    p = Tensor(np.array([4.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        loss = ad.mul(p, p)
        ad.backward(ad.tsum(loss))
        opt.step()
    assert abs(float(p.data[0])) < 0.05


# -- composite loss ------------------------------------------------------------

def test_loss_zero_for_exact_prediction():
    truth = np.random.default_rng(0).normal(size=(32, 3)).astype(np.float32)
    pred = Tensor(truth.copy())
    total, comps = composite_loss(pred, truth, "fluid", None, None, None, None,
                                  0.0, 0.0)
    assert float(total.data) == pytest.approx(0.0, abs=1e-6)
    assert comps["mass"] == 0.0 and comps["energy"] == 0.0


def test_loss_reduces_to_data_term_without_penalties(tiny_dataset):
    scene, grid, ds = tiny_dataset
    rng = np.random.default_rng(1)
    truth = rng.normal(size=(20, 1)).astype(np.float32)
    pred = Tensor(rng.normal(size=(20, 1)).astype(np.float32))
    total0, comps0 = composite_loss(pred, truth, "thermal", ds.norm_stats,
                                    None, None, None, 0.0, 0.0)
    assert comps0["total"] == pytest.approx(comps0["data"])


def test_energy_penalty_zero_at_closed_form(tiny_dataset):
    """Predicted outlet temps exactly at truth-inlet + P/(rho cp Q) zero the
    energy penalty."""
    scene, grid, ds = tiny_dataset
    from dcpa.constants import server_delta_t
    from dcpa.dataset import load_dataset
    from dcpa.neuralop import OperatorModel, make_domain_specs

    op_cfg = OperatorConfig(**TINY_OP)
    model = OperatorModel(config=op_cfg, scene_hash=ds.scene_hash,
                          hall_dims=tuple(scene.hall_dims),
                          rack_boxes=[(r.box.lo, r.box.hi) for r in scene.racks],
                          domain_specs=make_domain_specs(scene, op_cfg),
                          norm_stats=ds.norm_stats)
    sols = [ds.load_case(i) for i in range(ds.n_cases)]
    spec = model.spec("hota")
    dom = prepare_domain(model, spec, grid, sols)
    assert dom.faces is not None and dom.faces.kind == "server_outlet"

    case = 0
    q_known, power, t_ref = dom.case_face_data[case]
    dt = server_delta_t(power, q_known)
    ns = ds.norm_stats
    n_rows = len(dom.faces.cell_pos)
    t_out_c = (t_ref + dt)[np.zeros(n_rows, dtype=int)]  # single server
    pred_norm = ((t_out_c - ns.out_mean[3]) / ns.out_std[3]).reshape(-1, 1)
    truth = pred_norm.copy()
    face_rows = np.arange(n_rows)
    total, comps = composite_loss(Tensor(pred_norm.astype(np.float32)), truth,
                                  "thermal", ns, dom.faces, face_rows,
                                  dom.case_face_data[case], 0.1, 0.1)
    assert comps["energy"] == pytest.approx(0.0, abs=1e-4)
    assert comps["total"] == pytest.approx(comps["data"] +
                                           0.1 * comps["energy"], abs=1e-6)


def test_loss_components_nonnegative_and_sum(tiny_dataset):
    scene, grid, ds = tiny_dataset
    from dcpa.dataset import load_dataset
    from dcpa.neuralop import OperatorModel, make_domain_specs

    op_cfg = OperatorConfig(**TINY_OP)
    model = OperatorModel(config=op_cfg, scene_hash=ds.scene_hash,
                          hall_dims=tuple(scene.hall_dims),
                          rack_boxes=[(r.box.lo, r.box.hi) for r in scene.racks],
                          domain_specs=make_domain_specs(scene, op_cfg),
                          norm_stats=ds.norm_stats)
    sols = [ds.load_case(i) for i in range(ds.n_cases)]
    dom = prepare_domain(model, model.spec("cold"), grid, sols)
    rng = np.random.default_rng(3)
    rows = np.concatenate([rng.choice(len(dom.cells), 64, replace=False),
                           dom.faces.cell_pos])
    face_rows = np.arange(64, len(rows))
    pred = Tensor(rng.normal(size=(len(rows), 3)).astype(np.float32))
    total, comps = composite_loss(pred, dom.truth[0][rows, 0:3], "fluid",
                                  ds.norm_stats, dom.faces, face_rows,
                                  dom.case_face_data[0], 0.5, 0.5)
    assert comps["data"] >= 0 and comps["mass"] >= 0
    assert comps["total"] == pytest.approx(comps["data"] + 0.5 * comps["mass"],
                                           rel=1e-5)


# -- stage training --------------------------------------------------------------

def test_thermal_requires_fluid_checkpoint(tiny_dataset):
    scene, grid, ds = tiny_dataset
    with pytest.raises(StageOrderError):
        train_stage("thermal", scene, ds, fast_cfg(), OperatorConfig(**TINY_OP))


def test_training_loss_decreases(tiny_dataset):
    scene, grid, ds = tiny_dataset
    cfg = fast_cfg(epochs=6)
    model, meta = train_stage("fluid", scene, ds, cfg,
                              OperatorConfig(**TINY_OP), domains=["hota"])
    hist = meta["domains"]["hota"]
    assert hist["train"][-1] < hist["train"][0]


def test_training_deterministic_first_steps(tiny_dataset):
    scene, grid, ds = tiny_dataset
    losses = []
    for _ in range(2):
        cfg = fast_cfg(epochs=2, seed=33)
        _, meta = train_stage("fluid", scene, ds, cfg, OperatorConfig(**TINY_OP),
                              domains=["hota"])
        losses.append(tuple(meta["domains"]["hota"]["step_losses"][:10]))
    assert losses[0] == losses[1]


def test_thermal_freezes_fluid_parameters(tiny_dataset):
    scene, grid, ds = tiny_dataset
    model, _ = train_stage("fluid", scene, ds, fast_cfg(),
                           OperatorConfig(**TINY_OP))
    before = {k: {n: t.data.copy() for n, t in part.items()}
              for k, part in model.params.items() if k.endswith(".fluid")}
    model, _ = train_stage("thermal", scene, ds, fast_cfg(), fluid_model=model)
    for key, part in model.params.items():
        if key.endswith(".fluid"):
            for n, t in part.items():
                np.testing.assert_array_equal(t.data, before[key][n])
                assert t.grad is None


def test_early_stop_returns_best_checkpoint(tiny_dataset):
    scene, grid, ds = tiny_dataset
    cfg = fast_cfg(epochs=8, early_stop_patience=3)
    model, meta = train_stage("fluid", scene, ds, cfg, OperatorConfig(**TINY_OP),
                              domains=["hota"])
    hist = meta["domains"]["hota"]
    assert hist["best_val"] == pytest.approx(min(hist["val"]))


# -- checkpoints -------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained_model(tiny_dataset):
    scene, grid, ds = tiny_dataset
    model, meta = train_stage("fluid", scene, ds, fast_cfg(),
                              OperatorConfig(**TINY_OP))
    model, meta = train_stage("thermal", scene, ds, fast_cfg(), fluid_model=model)
    return scene, grid, ds, model, meta


def test_checkpoint_roundtrip_bit_identical(tmp_path, trained_model):
    scene, grid, ds, model, meta = trained_model
    path = tmp_path / "m.dcpw"
    save_checkpoint(path, model, meta)
    again, meta2 = load_checkpoint(path, scene=scene)
    pts = grid.cell_centers()[:100]
    from dcpa.scenario import default_scenario

    sc = default_scenario(scene)
    v1, t1 = model.predict_full_field(scene, sc, pts)
    v2, t2 = again.predict_full_field(scene, sc, pts)
    np.testing.assert_array_equal(v1, v2)
    np.testing.assert_array_equal(t1, t2)
    assert meta2["stage"] == meta["stage"]


def test_checkpoint_bad_version(tmp_path, trained_model):
    scene, grid, ds, model, meta = trained_model
    path = tmp_path / "m.dcpw"
    save_checkpoint(path, model)
    raw = bytearray(path.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(raw)
    with pytest.raises(VersionError):
        load_checkpoint(path)


def test_checkpoint_bad_magic(tmp_path, trained_model):
    scene, grid, ds, model, meta = trained_model
    path = tmp_path / "m.dcpw"
    save_checkpoint(path, model)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(raw)
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_scene_mismatch(tmp_path, trained_model):
    scene, grid, ds, model, meta = trained_model
    path = tmp_path / "m.dcpw"
    save_checkpoint(path, model)
    with pytest.raises(HashMismatchError):
        load_checkpoint(path, scene=make_single_server_scene(power_w=1234.0))
