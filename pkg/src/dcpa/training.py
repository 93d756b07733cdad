"""Two-stage training (fluid, then frozen-fluid thermal) with server-level
conservation soft penalties, plus the binary checkpoint format.

Each of the three spatial domains trains its own network per stage. Query
points are cell centers sampled uniformly from the domain's fluid cells;
every step also carries the cells adjacent to the domain's server faces so
the mass/energy penalties always have support. All sampling flows from one
counter-based generator per run, so single-threaded training is
bit-reproducible.
"""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .constants import (CHECKPOINT_MAGIC, CHECKPOINT_VERSION, DT_DESIGN,
                        server_delta_t)
from .dataset import Dataset, NormStats
from .errors import (FormatError, HashMismatchError, ShapeError,
                     StageOrderError, VersionError)
from .grid import build_grid
from .neuralop import OperatorConfig, OperatorModel, make_domain_specs
from .scene import scene_hash

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    batch_scenarios: int = 4
    points_per_scenario: int = 2048
    face_points_per_server: int = 32          # cap per face
    lr: float = 1e-3
    lr_decay: float = 0.5
    plateau_patience: int = 6                 # epochs without val improvement
    early_stop_patience: int = 16
    lambda_mass: float = 0.1
    lambda_energy: float = 0.1
    seed: int = 0
    wall_clock_cap_s: float = 7200.0
    val_points_per_scenario: int = 2048

    def __post_init__(self):
        if min(self.epochs, self.batch_scenarios, self.points_per_scenario) < 1:
            raise ValueError("epochs, batch and points must be positive")
        if self.lambda_mass < 0 or self.lambda_energy < 0:
            raise ValueError("penalty weights must be >= 0")

    def to_obj(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_obj(cls, obj):
        return cls(**obj)


class Adam:
    """Adaptive-moment optimizer (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params.values()) if isinstance(params, dict) else list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
        self.v = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * (g * g)
            update = self.lr * (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + self.eps)
            p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass
class FaceBlock:
    """Server face cells of one domain, vectorized for the penalties.

    rows index into the face segment appended after each step's sampled
    points; weight_mat (S, F) averages face cells per server, area_mat (S, F)
    carries signed overlap areas so area_mat @ v_normal is the predicted
    volumetric flow per server.
    """

    servers: np.ndarray        # server ids (S,)
    kind: str                  # server_inlet (cold) or server_outlet (hot)
    cell_pos: np.ndarray       # (F,) positions into the domain cell list
    axes: np.ndarray           # (F,) velocity channel of each face cell
    weight_mat: np.ndarray     # (S, F)
    area_mat: np.ndarray       # (S, F) signed by flow direction

    @property
    def n_faces(self):
        return len(self.cell_pos)


def composite_loss(pred: Tensor, truth, stage, norm_stats: NormStats,
                   faces: FaceBlock | None, face_rows, case_data,
                   lambda_mass, lambda_energy):
    """Relative-L2 data term plus server conservation penalties (mean over
    servers). Returns (total Tensor, components dict of floats).

    pred/truth are normalized (n, C); face_rows locates the face segment in
    pred; case_data is (flow, power, t_ref) arrays for this scenario.
    """
    truth = np.asarray(truth)
    if pred.shape != tuple(truth.shape):
        raise ShapeError(f"pred shape {pred.shape} vs truth shape {truth.shape}")

    diff = ad.sub(pred, Tensor(truth))
    num = ad.sqrt(ad.tsum(ad.mul(diff, diff), axis=0))
    den = np.sqrt((truth * truth).sum(axis=0)) + 1e-8
    data_term = ad.tmean(ad.div(num, Tensor(den)))

    total = data_term
    comps = {"data": float(data_term.data), "mass": 0.0, "energy": 0.0}

    if faces is not None and faces.n_faces:
        q_known, power, t_ref = case_data
        if stage == "fluid" and lambda_mass > 0:
            ns = norm_stats
            v_n = pred[(face_rows, faces.axes)]
            v = ad.add(ad.mul(v_n, Tensor(ns.out_std[faces.axes])),
                       Tensor(ns.out_mean[faces.axes]))
            q_hat = ad.matmul(Tensor(faces.area_mat), v)
            rel = ad.mul(ad.sub(q_hat, Tensor(q_known)), Tensor(1.0 / q_known))
            penalty = ad.tmean(ad.mul(rel, rel))
            comps["mass"] = float(penalty.data)
            total = ad.add(total, ad.mul(penalty, lambda_mass))
        if stage == "thermal" and lambda_energy > 0:
            ns = norm_stats
            t_n = pred[(face_rows, np.zeros_like(faces.axes))]
            t_c = ad.add(ad.mul(t_n, float(ns.out_std[3])), float(ns.out_mean[3]))
            t_face = ad.matmul(Tensor(faces.weight_mat), t_c)
            dt_closed = server_delta_t(power, q_known)
            if faces.kind == "server_outlet":
                dt_hat = ad.sub(t_face, Tensor(t_ref))
            else:
                dt_hat = ad.sub(Tensor(t_ref), t_face)
            rel = ad.mul(ad.sub(dt_hat, Tensor(dt_closed)), 1.0 / DT_DESIGN)
            penalty = ad.tmean(ad.mul(rel, rel))
            comps["energy"] = float(penalty.data)
            total = ad.add(total, ad.mul(penalty, lambda_energy))

    comps["total"] = float(total.data)
    return total, comps


# ---------------------------------------------------------------------------
# per-domain training data

@dataclass
class DomainData:
    name: str
    cells: np.ndarray          # flat grid indices of the domain's fluid cells
    centers: np.ndarray        # (n, 3)
    truth: list                # per case: (n, 4) normalized float32
    faces: FaceBlock | None
    case_face_data: list       # per case: (q_known, power, t_ref) arrays


class _BoxView:
    def __init__(self, box):
        self.lo, self.hi = box


def _domain_cells(model, spec, grid):
    if spec.box is not None:
        return grid.cells_in_box(_BoxView(spec.box))
    cells = grid.fluid_indices()
    hot = np.zeros(grid.n_cells, dtype=bool)
    for other in model.domain_specs:
        if other.box is not None:
            hot[grid.cells_in_box(_BoxView(other.box))] = True
    return cells[~hot[cells]]


def prepare_domain(model: OperatorModel, spec, grid, solutions,
                   face_cap=32) -> DomainData:
    cells = _domain_cells(model, spec, grid)
    centers = grid.cell_centers(cells)

    ns = model.norm_stats
    truth = []
    for sol in solutions:
        arr = np.stack([sol.channel(c).ravel()[cells] for c in range(4)], axis=1)
        truth.append(((arr - ns.out_mean) / ns.out_std).astype(np.float32))

    face_kind = "server_inlet" if spec.box is None else "server_outlet"
    other_kind = "server_outlet" if spec.box is None else "server_inlet"
    n_servers = len(solutions[0].scenario.server_power_w)
    servers = (spec.server_idx if len(spec.server_idx)
               else np.arange(n_servers, dtype=np.int64))

    pos_of = np.full(grid.n_cells, -1, dtype=np.int64)
    pos_of[cells] = np.arange(len(cells))

    rows_srv, rows_pos, rows_axis = [], [], []
    entries = []  # (srv_row, weight, signed_area) per face cell
    kept_servers = []
    for s in servers:
        g = grid.groups_for(face_kind, int(s))[0]
        keep = np.flatnonzero(pos_of[g.cells] >= 0)[:face_cap]
        if not len(keep):
            continue
        srow = len(kept_servers)
        kept_servers.append(int(s))
        w = g.weights[keep]
        w = w / w.sum()
        for j, fi in enumerate(keep):
            entries.append((srow, w[j],
                            g.areas[fi] * g.normal_sign * g.flow_sign))
            rows_pos.append(int(pos_of[g.cells[fi]]))
            rows_axis.append(g.axis)

    faces = None
    case_face_data = []
    if kept_servers:
        n_s, n_f = len(kept_servers), len(rows_pos)
        weight_mat = np.zeros((n_s, n_f))
        area_mat = np.zeros((n_s, n_f))
        for col, (srow, w, a) in enumerate(entries):
            weight_mat[srow, col] = w
            area_mat[srow, col] = a
        faces = FaceBlock(
            servers=np.asarray(kept_servers, dtype=np.int64), kind=face_kind,
            cell_pos=np.asarray(rows_pos, dtype=np.int64),
            axes=np.asarray(rows_axis, dtype=np.int64),
            weight_mat=weight_mat, area_mat=area_mat)
        for sol in solutions:
            flat_t = sol.temperature.ravel()
            t_ref = np.empty(n_s)
            for i, s in enumerate(kept_servers):
                g_other = grid.groups_for(other_kind, s)[0]
                t_ref[i] = float(np.dot(flat_t[g_other.cells], g_other.weights))
            case_face_data.append((
                np.asarray([sol.scenario.server_flow_m3s[s] for s in kept_servers]),
                np.asarray([sol.scenario.server_power_w[s] for s in kept_servers]),
                t_ref))

    return DomainData(name=spec.name, cells=cells, centers=centers,
                      truth=truth, faces=faces, case_face_data=case_face_data)


# ---------------------------------------------------------------------------
# training loop

def _stable_seed(base, name, stage):
    tag = f"{name}/{stage}".encode()
    h = 2166136261
    for byte in tag:
        h = ((h ^ byte) * 16777619) % (1 << 32)
    return (base * 1000003 + h) % (1 << 63)


def _forward_for_stage(model, stage, spec, tokens, points, fluid_model):
    if stage == "fluid":
        return model.forward_fluid(spec.name, tokens, points)
    with ad.no_grad():
        vel = fluid_model.forward_fluid(spec.name, tokens, points).data
    return model.forward_thermal(spec.name, tokens, points, vel)


def train_domain_stage(model: OperatorModel, stage, spec, dom: DomainData,
                       scenarios_feats, split, cfg: TrainConfig,
                       fluid_model=None):
    """Train one (domain, stage) network in place; returns its history."""
    train_idx, val_idx, _ = split
    rng = np.random.Generator(np.random.Philox(
        np.uint64(_stable_seed(cfg.seed, spec.name, stage))))

    model.init_part(spec.name, stage)
    params = model.part(spec.name, stage)
    opt = Adam(params, lr=cfg.lr)

    ch = slice(0, 3) if stage == "fluid" else slice(3, 4)
    n_dom = len(dom.cells)
    n_val_pts = min(cfg.val_points_per_scenario, n_dom)
    val_rows = rng.choice(n_dom, size=n_val_pts, replace=False)
    face_pos = dom.faces.cell_pos if dom.faces is not None else np.zeros(0, np.int64)

    def val_loss():
        with ad.no_grad():
            losses = []
            for i in val_idx:
                tokens = model.domain_tokens(spec.name, scenarios_feats[i])
                pred = _forward_for_stage(model, stage, spec, tokens,
                                          dom.centers[val_rows], fluid_model)
                truth = dom.truth[i][val_rows, ch]
                diff = pred.data - truth
                num = np.sqrt((diff * diff).sum(axis=0))
                den = np.sqrt((truth * truth).sum(axis=0)) + 1e-8
                losses.append(float((num / den).mean()))
        return float(np.mean(losses))

    history = {"train": [], "val": [], "step_losses": [], "lr": []}
    best_val = np.inf
    best_params = None
    best_epoch = 0
    lr = cfg.lr
    plateau = 0
    t_start = time.monotonic()
    order = np.arange(len(train_idx))

    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_scenarios):
            batch = [train_idx[j] for j in order[start:start + cfg.batch_scenarios]]
            opt.zero_grad()
            batch_total = None
            for i in batch:
                if n_dom <= cfg.points_per_scenario:
                    sampled = np.arange(n_dom)
                else:
                    sampled = rng.choice(n_dom, size=cfg.points_per_scenario,
                                         replace=False)
                rows = np.concatenate([sampled, face_pos])
                face_rows = np.arange(len(sampled), len(rows))
                tokens = model.domain_tokens(spec.name, scenarios_feats[i])
                pred = _forward_for_stage(model, stage, spec, tokens,
                                          dom.centers[rows], fluid_model)
                total, _ = composite_loss(
                    pred, dom.truth[i][rows, ch], stage, model.norm_stats,
                    dom.faces, face_rows,
                    dom.case_face_data[i] if dom.faces else None,
                    cfg.lambda_mass, cfg.lambda_energy)
                batch_total = total if batch_total is None else ad.add(batch_total, total)
            loss = ad.mul(batch_total, 1.0 / len(batch))
            ad.backward(loss)
            opt.lr = lr
            opt.step()
            step_loss = float(loss.data)
            epoch_losses.append(step_loss)
            if len(history["step_losses"]) < 32:
                history["step_losses"].append(step_loss)

        v = val_loss()
        history["train"].append(float(np.mean(epoch_losses)))
        history["val"].append(v)
        history["lr"].append(lr)
        if v < best_val - 1e-6:
            best_val, best_epoch, plateau = v, epoch, 0
            best_params = {k: t.data.copy() for k, t in params.items()}
        else:
            plateau += 1
            if plateau >= cfg.plateau_patience:
                lr *= cfg.lr_decay
                plateau = 0
        if epoch - best_epoch >= cfg.early_stop_patience:
            log.info("%s/%s: early stop at epoch %d (best val %.4f)",
                     spec.name, stage, epoch, best_val)
            break
        if time.monotonic() - t_start > cfg.wall_clock_cap_s:
            log.warning("%s/%s: wall-clock cap reached at epoch %d",
                        spec.name, stage, epoch)
            break

    opt.zero_grad()
    if best_params is not None:
        for k, t in params.items():
            t.data = best_params[k]
    history["best_val"] = best_val if best_params is not None else None
    history["epochs_run"] = len(history["train"])
    return history


def train_stage(stage, scene, dataset: Dataset, cfg: TrainConfig,
                op_cfg: OperatorConfig | None = None, fluid_model=None,
                domains=None):
    """Train all domain networks for one stage; returns (model, metadata).

    The thermal stage requires the fluid-stage model and freezes its
    parameters: gradients never reach them because fluid predictions are
    produced under no_grad."""
    if stage not in ("fluid", "thermal"):
        raise ValueError(f"unknown stage {stage!r}")
    if scene_hash(scene) != dataset.scene_hash:
        raise HashMismatchError("dataset was built for a different scene")

    if stage == "thermal":
        if fluid_model is None:
            raise StageOrderError(
                "thermal stage requires a trained fluid checkpoint")
        model = fluid_model
        op_cfg = model.config
        for key, part in model.params.items():
            for t in part.values():
                t.requires_grad = False
                t.grad = None
    else:
        if op_cfg is None:
            op_cfg = OperatorConfig()
        model = OperatorModel(
            config=op_cfg, scene_hash=dataset.scene_hash,
            hall_dims=tuple(scene.hall_dims),
            rack_boxes=[(r.box.lo, r.box.hi) for r in scene.racks],
            domain_specs=make_domain_specs(scene, op_cfg),
            norm_stats=dataset.norm_stats)

    specs = [s for s in model.domain_specs
             if domains is None or s.name in domains]
    if stage == "thermal":
        missing = [s.name for s in specs if not model.has_part(s.name, "fluid")]
        if missing:
            raise StageOrderError(
                f"fluid checkpoint is missing domain(s): {missing}")

    grid = build_grid(scene, dataset.resolution)
    solutions = [dataset.load_case(i) for i in range(dataset.n_cases)]
    from .features import acu_features, server_features
    scenarios_feats = [(server_features(scene, s.scenario),
                        acu_features(scene, s.scenario)) for s in solutions]

    metadata = {"stage": stage, "seed": cfg.seed, "train_config": cfg.to_obj(),
                "sampling_config": dataset.manifest.get("sampling_config"),
                "domains": {}}
    for spec in specs:
        dom = prepare_domain(model, spec, grid, solutions,
                             face_cap=cfg.face_points_per_server)
        t0 = time.monotonic()
        hist = train_domain_stage(model, stage, spec, dom, scenarios_feats,
                                  dataset.split, cfg,
                                  fluid_model=model if stage == "thermal" else None)
        hist["wall_s"] = time.monotonic() - t0
        log.info("trained %s/%s: best val %.4f in %.0fs",
                 spec.name, stage, hist["best_val"], hist["wall_s"])
        metadata["domains"][spec.name] = hist
    return model, metadata


# ---------------------------------------------------------------------------
# checkpoint format: magic, u32 version, u64 header length, JSON header,
# then raw little-endian f32 parameter blobs in header order

_CKPT_HEADER = struct.Struct("<4sIQ")


def save_checkpoint(path, model: OperatorModel, metadata=None):
    names = []
    blobs = []
    for key in sorted(model.params):
        part = model.params[key]
        for pname, tensor in part.items():
            arr = np.ascontiguousarray(tensor.data, dtype="<f4")
            names.append({"name": f"{key}.{pname}", "shape": list(arr.shape)})
            blobs.append(arr.tobytes())

    header = {
        "format": "dcpa-checkpoint",
        "operator_config": model.config.to_obj(),
        "scene_hash": model.scene_hash,
        "hall_dims": list(model.hall_dims),
        "rack_boxes": [[list(lo), list(hi)] for lo, hi in model.rack_boxes],
        "domain_specs": [s.to_obj() for s in model.domain_specs],
        "norm_stats": model.norm_stats.to_obj(),
        "parameters": names,
        "metadata": metadata or {},
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                                   len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, scene=None):
    """Returns (OperatorModel, metadata); verifies magic, version, and the
    scene hash when a scene is provided."""
    from .neuralop import DomainSpec

    with open(path, "rb") as fh:
        head = fh.read(_CKPT_HEADER.size)
        if len(head) < _CKPT_HEADER.size:
            raise FormatError(f"{path}: truncated checkpoint")
        magic, version, hlen = _CKPT_HEADER.unpack(head)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise VersionError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if scene is not None and scene_hash(scene) != header["scene_hash"]:
            raise HashMismatchError(
                f"checkpoint was trained on scene {header['scene_hash'][:12]}...")

        model = OperatorModel(
            config=OperatorConfig.from_obj(header["operator_config"]),
            scene_hash=header["scene_hash"],
            hall_dims=tuple(header["hall_dims"]),
            rack_boxes=[(tuple(lo), tuple(hi)) for lo, hi in header["rack_boxes"]],
            domain_specs=[DomainSpec.from_obj(o) for o in header["domain_specs"]],
            norm_stats=NormStats.from_obj(header["norm_stats"]))
        for entry in header["parameters"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(count * 4), dtype="<f4").reshape(shape)
            domain, physics, pname = entry["name"].split(".", 2)
            model.params.setdefault(f"{domain}.{physics}", {})[pname] = Tensor(
                arr.astype(np.float32), requires_grad=True)
    return model, header["metadata"]
