"""Linear-attention neural operator over boundary-condition tokens.

Per spatial domain (cold zone, two contained hot aisles) and per physics
(fluid, thermal) there is an independent network: query points are lifted
through Fourier features and an MLP; ACU/server boundary conditions become
tokens through per-source MLP encoders plus a learned source-type embedding;
cascaded blocks apply token cross-attention, point self-attention and a
feed-forward layer, all attention Galerkin-type (linear in the number of
query points, no n x t matrix is ever formed). The fluid head emits 3
channels, the thermal head 1; the thermal network additionally takes the
(frozen) fluid prediction at each point as query features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DomainError, HashMismatchError, ShapeError
from .features import ACU_FEATURES, SERVER_FEATURES, acu_features, server_features

COLD = "cold"


@dataclass(frozen=True)
class OperatorConfig:
    d_model: int = 96
    n_blocks: int = 2
    n_heads: int = 4
    fourier_m: int = 64
    fourier_sigma: float = 1.0
    ffn_ratio: int = 2
    seed: int = 0
    # token sources per domain kind; hot aisles need their servers, and the
    # supply temperatures turn out to be necessary context there as well
    cold_sources: tuple[str, ...] = ("acu",)
    hot_sources: tuple[str, ...] = ("server", "acu")

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.fourier_m < 1:
            raise ValueError("fourier_m must be >= 1")

    def to_obj(self):
        return {
            "d_model": self.d_model, "n_blocks": self.n_blocks,
            "n_heads": self.n_heads, "fourier_m": self.fourier_m,
            "fourier_sigma": self.fourier_sigma, "ffn_ratio": self.ffn_ratio,
            "seed": self.seed, "cold_sources": list(self.cold_sources),
            "hot_sources": list(self.hot_sources),
        }

    @classmethod
    def from_obj(cls, obj):
        return cls(d_model=obj["d_model"], n_blocks=obj["n_blocks"],
                   n_heads=obj["n_heads"], fourier_m=obj["fourier_m"],
                   fourier_sigma=obj["fourier_sigma"], ffn_ratio=obj["ffn_ratio"],
                   seed=obj["seed"], cold_sources=tuple(obj["cold_sources"]),
                   hot_sources=tuple(obj["hot_sources"]))


@dataclass
class DomainSpec:
    name: str
    box: tuple | None          # ((lo), (hi)) or None for the complement domain
    sources: tuple[str, ...]
    server_idx: np.ndarray     # servers whose outlets exhaust into this domain

    def to_obj(self):
        return {"name": self.name, "box": self.box,
                "sources": list(self.sources),
                "server_idx": self.server_idx.tolist()}

    @classmethod
    def from_obj(cls, obj):
        return cls(name=obj["name"],
                   box=tuple(map(tuple, obj["box"])) if obj["box"] else None,
                   sources=tuple(obj["sources"]),
                   server_idx=np.asarray(obj["server_idx"], dtype=np.int64))


def make_domain_specs(scene, config: OperatorConfig):
    """Cold zone plus one domain per contained hot aisle."""
    specs = [DomainSpec(name=COLD, box=None, sources=config.cold_sources,
                        server_idx=np.zeros(0, dtype=np.int64))]
    for i, aisle in enumerate(scene.hot_aisles):
        inside = []
        for s, srv in enumerate(scene.servers):
            if aisle.contains_point(srv.outlet_face.rect.center(), tol=1e-9):
                inside.append(s)
        specs.append(DomainSpec(
            name=f"hot{chr(ord('a') + i)}", box=(aisle.lo, aisle.hi),
            sources=config.hot_sources,
            server_idx=np.asarray(inside, dtype=np.int64)))
    return specs


def fourier_encode(points, m, sigma, seed):
    """[sin(2 pi B x), cos(2 pi B x)] features; B is m x 3, Gaussian(0, sigma^2),
    drawn once from the seed and frozen. Points should be in [0, 1]^3."""
    b = fourier_matrix(m, sigma, seed)
    phase = 2.0 * np.pi * (np.asarray(points) @ b.T)
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)


def fourier_matrix(m, sigma, seed):
    rng = np.random.Generator(np.random.Philox(np.uint64(seed)))
    return rng.normal(0.0, sigma, size=(m, 3))


def galerkin_attention(q, k, v):
    """out = Q (norm(K)^T norm(V)) / t with per-feature layer normalization
    over the token axis; O((n + t) d^2), no n x t matrix."""
    q, k, v = (x if isinstance(x, Tensor) else Tensor(x) for x in (q, k, v))
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError(
            f"galerkin_attention expects 2-d Q/K/V, got {q.shape}/{k.shape}/{v.shape}")
    if q.shape[1] != k.shape[1] or k.shape != v.shape:
        raise ShapeError(
            f"galerkin_attention: incompatible shapes Q{q.shape} K{k.shape} V{v.shape}")
    t = k.shape[0]
    k_hat = ad.layer_norm(k, axis=0)
    v_hat = ad.layer_norm(v, axis=0)
    ctx = ad.matmul(ad.transpose(k_hat), v_hat)
    return ad.mul(ad.matmul(q, ctx), 1.0 / t)


def _multihead_galerkin(q, k, v, n_heads):
    """Per-head Galerkin attention; q (n, D), k/v (t, D) -> (n, D).

    The column-wise normalization over tokens never mixes features, so it is
    applied once to the full-width K and V; heads then act on column slices."""
    n, d = q.shape
    t = k.shape[0]
    dh = d // n_heads
    k_hat = ad.layer_norm(k, axis=0)
    v_hat = ad.layer_norm(v, axis=0)
    outs = []
    for h in range(n_heads):
        sl = (slice(None), slice(h * dh, (h + 1) * dh))
        ctx = ad.matmul(ad.transpose(k_hat[sl]), v_hat[sl])   # (dh, dh)
        outs.append(ad.matmul(q[sl], ctx))
    out = outs[0] if n_heads == 1 else ad.concat(outs, axis=1)
    return ad.mul(out, 1.0 / t)


# ---------------------------------------------------------------------------
# parameters

def _xavier(rng, fan_in, fan_out):
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))


def init_part_params(config: OperatorConfig, physics: str, sources,
                     seed) -> dict[str, Tensor]:
    """Parameter dict for one (domain, physics) network, in creation order."""
    rng = np.random.Generator(np.random.Philox(np.uint64(seed)))
    d = config.d_model
    q_in = 2 * config.fourier_m + (3 if physics == "thermal" else 0)
    out_dim = 1 if physics == "thermal" else 3

    p: dict[str, Tensor] = {}

    def add(name, arr):
        p[name] = Tensor(arr, requires_grad=True)

    def add_mlp(prefix, fan_in, hidden, fan_out):
        add(f"{prefix}.w1", _xavier(rng, fan_in, hidden))
        add(f"{prefix}.b1", np.zeros(hidden))
        add(f"{prefix}.w2", _xavier(rng, hidden, fan_out))
        add(f"{prefix}.b2", np.zeros(fan_out))

    def add_ln(prefix, dim):
        add(f"{prefix}.g", np.ones(dim))
        add(f"{prefix}.b", np.zeros(dim))

    add_mlp("q_enc", q_in, d, d)
    if "server" in sources:
        add_mlp("srv_enc", SERVER_FEATURES, d, d)
    if "acu" in sources:
        add_mlp("acu_enc", ACU_FEATURES, d, d)
    add("type_emb", rng.normal(0.0, 0.02, size=(2, d)))

    for i in range(config.n_blocks):
        blk = f"blocks.{i}"
        add_ln(f"{blk}.cross.ln_q", d)
        # K/V pre-norm carries no bias: a per-feature shift of the tokens is
        # exactly cancelled by the Galerkin column normalization
        add(f"{blk}.cross.ln_kv.g", np.ones(d))
        add(f"{blk}.cross.wq", _xavier(rng, d, d))
        add(f"{blk}.cross.wk", _xavier(rng, d, d))
        add(f"{blk}.cross.wv", _xavier(rng, d, d))
        add(f"{blk}.cross.wo", _xavier(rng, d, d))
        add(f"{blk}.cross.bo", np.zeros(d))
        add_ln(f"{blk}.self.ln", d)
        add(f"{blk}.self.wqkv", _xavier(rng, d, 3 * d))
        add(f"{blk}.self.wo", _xavier(rng, d, d))
        add(f"{blk}.self.bo", np.zeros(d))
        add_ln(f"{blk}.ffn.ln", d)
        add_mlp(f"{blk}.ffn", d, config.ffn_ratio * d, d)

    add_ln("head.ln", d)
    add_mlp("head", d, d, out_dim)
    return p


def _affine_ln(x, p, prefix):
    return ad.layer_norm_affine(x, p[f"{prefix}.g"], p[f"{prefix}.b"])


def _mlp(x, p, prefix):
    h = ad.gelu(ad.linear(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
    return ad.linear(h, p[f"{prefix}.w2"], p[f"{prefix}.b2"])


def encode_tokens(p, sources, srv_feats, acu_feats, n_heads):
    """Per-source MLP encoders to d_model plus source-type embeddings."""
    parts = []
    if "server" in sources and srv_feats is not None and len(srv_feats):
        enc = _mlp(Tensor(srv_feats), p, "srv_enc")
        parts.append(ad.add(enc, p["type_emb"][0:1, :]))
    if "acu" in sources and acu_feats is not None and len(acu_feats):
        enc = _mlp(Tensor(acu_feats), p, "acu_enc")
        parts.append(ad.add(enc, p["type_emb"][1:2, :]))
    if not parts:
        raise ShapeError("no tokens for this domain")
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)


def forward_part(p, config: OperatorConfig, query_feats, tokens):
    """Shared block stack; query_feats (n, q_in) numpy, tokens Tensor (t, D)."""
    x = _mlp(Tensor(query_feats), p, "q_enc")
    for i in range(config.n_blocks):
        blk = f"blocks.{i}"
        qn = _affine_ln(x, p, f"{blk}.cross.ln_q")
        kvn = ad.mul(ad.layer_norm(tokens), p[f"{blk}.cross.ln_kv.g"])
        q = ad.matmul(qn, p[f"{blk}.cross.wq"])
        k = ad.matmul(kvn, p[f"{blk}.cross.wk"])
        v = ad.matmul(kvn, p[f"{blk}.cross.wv"])
        att = _multihead_galerkin(q, k, v, config.n_heads)
        x = ad.add(x, ad.linear(att, p[f"{blk}.cross.wo"], p[f"{blk}.cross.bo"]))

        sn = _affine_ln(x, p, f"{blk}.self.ln")
        qkv = ad.matmul(sn, p[f"{blk}.self.wqkv"])
        d = config.d_model
        q2, k2, v2 = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
        att2 = _multihead_galerkin(q2, k2, v2, config.n_heads)
        x = ad.add(x, ad.linear(att2, p[f"{blk}.self.wo"], p[f"{blk}.self.bo"]))

        x = ad.add(x, _mlp(_affine_ln(x, p, f"{blk}.ffn.ln"), p, f"{blk}.ffn"))

    return _mlp(_affine_ln(x, p, "head.ln"), p, "head")


# ---------------------------------------------------------------------------
# assembled model

@dataclass
class OperatorModel:
    config: OperatorConfig
    scene_hash: str
    hall_dims: tuple
    rack_boxes: list                    # ((lo), (hi)) per rack, for E_DOMAIN
    domain_specs: list[DomainSpec]
    norm_stats: "NormStats"             # dcpa.dataset.NormStats
    params: dict[str, dict[str, Tensor]] = field(default_factory=dict)
    # params keyed by f"{domain}.{physics}"

    @property
    def fourier_b(self):
        return fourier_matrix(self.config.fourier_m, self.config.fourier_sigma,
                              self.config.seed)

    def part(self, domain, physics):
        key = f"{domain}.{physics}"
        if key not in self.params:
            raise KeyError(f"model has no parameters for {key}")
        return self.params[key]

    def has_part(self, domain, physics):
        return f"{domain}.{physics}" in self.params

    def init_part(self, domain, physics):
        spec = self.spec(domain)
        seed = (self.config.seed * 1000003
                + 31 * [d.name for d in self.domain_specs].index(domain)
                + (7 if physics == "thermal" else 0))
        self.params[f"{domain}.{physics}"] = init_part_params(
            self.config, physics, spec.sources, seed)

    def spec(self, domain) -> DomainSpec:
        for s in self.domain_specs:
            if s.name == domain:
                return s
        raise KeyError(f"unknown domain {domain!r}")

    # -- feature plumbing ---------------------------------------------------
    def normalized_points(self, points):
        return np.asarray(points, dtype=np.float64) / np.asarray(self.hall_dims)

    def query_features(self, points, velocities=None):
        feats = fourier_encode(self.normalized_points(points),
                               self.config.fourier_m, self.config.fourier_sigma,
                               self.config.seed)
        if velocities is not None:
            feats = np.concatenate([feats, np.asarray(velocities)], axis=1)
        return feats

    def domain_tokens(self, domain, scene_or_feats, scenario=None):
        """Normalized token features for one domain.

        Accepts either (scene, scenario) or a precomputed (srv_feats,
        acu_feats) pair in raw units."""
        spec = self.spec(domain)
        if scenario is not None:
            srv = server_features(scene_or_feats, scenario)
            acu = acu_features(scene_or_feats, scenario)
        else:
            srv, acu = scene_or_feats
        ns = self.norm_stats
        srv_n = (srv - ns.server_mean) / ns.server_std
        acu_n = (acu - ns.acu_mean) / ns.acu_std
        srv_sel = srv_n[spec.server_idx] if "server" in spec.sources else None
        acu_sel = acu_n if "acu" in spec.sources else None
        return srv_sel, acu_sel

    def _check_in_domain(self, domain, points):
        spec = self.spec(domain)
        pts = np.asarray(points)
        if spec.box is not None:
            lo, hi = np.asarray(spec.box[0]), np.asarray(spec.box[1])
            bad = ((pts < lo - 1e-9) | (pts > hi + 1e-9)).any(axis=1)
            if bad.any():
                raise DomainError(
                    f"{int(bad.sum())} query point(s) outside domain {domain!r}")

    # -- forward passes -----------------------------------------------------
    def forward_fluid(self, domain, tokens, points, fourier_feats=None):
        """Normalized (n, 3) velocity prediction for points in one domain."""
        self._check_in_domain(domain, points)
        p = self.part(domain, "fluid")
        srv_sel, acu_sel = tokens
        tok = encode_tokens(p, self.spec(domain).sources, srv_sel, acu_sel,
                            self.config.n_heads)
        feats = (self.query_features(points) if fourier_feats is None
                 else fourier_feats)
        return forward_part(p, self.config, feats, tok)

    def forward_thermal(self, domain, tokens, points, velocities,
                        fourier_feats=None):
        """Normalized (n, 1) temperature prediction; velocities are the
        (frozen) normalized fluid outputs at the same points."""
        vel = np.asarray(velocities.data if isinstance(velocities, Tensor)
                         else velocities)
        if vel.shape != (len(points), 3):
            raise ShapeError(
                f"velocities must be (n, 3) = ({len(points)}, 3), got {vel.shape}")
        p = self.part(domain, "thermal")
        srv_sel, acu_sel = tokens
        tok = encode_tokens(p, self.spec(domain).sources, srv_sel, acu_sel,
                            self.config.n_heads)
        base = (self.query_features(points) if fourier_feats is None
                else fourier_feats)
        feats = np.concatenate([base, vel], axis=1)
        return forward_part(p, self.config, feats, tok)

    # -- whole-hall prediction ---------------------------------------------
    def assign_domains(self, points):
        """Domain index per point (order of domain_specs); E_DOMAIN for
        points inside racks or outside every domain."""
        pts = np.asarray(points, dtype=np.float64)
        n = len(pts)
        assigned = np.zeros(n, dtype=np.int64)  # default: cold (index 0)
        hall = np.asarray(self.hall_dims)
        outside = ((pts < -1e-9) | (pts > hall + 1e-9)).any(axis=1)
        if outside.any():
            raise DomainError(f"{int(outside.sum())} query point(s) outside the hall")
        for lo, hi in self.rack_boxes:
            lo, hi = np.asarray(lo), np.asarray(hi)
            inside = ((pts > lo) & (pts < hi)).all(axis=1)
            if inside.any():
                raise DomainError(
                    f"{int(inside.sum())} query point(s) inside a rack volume")
        for di, spec in enumerate(self.domain_specs):
            if spec.box is None:
                continue
            lo, hi = np.asarray(spec.box[0]), np.asarray(spec.box[1])
            inside = ((pts >= lo) & (pts <= hi)).all(axis=1)
            assigned[inside] = di
        return assigned

    def predict_full_field(self, scene, scenario, points):
        """Velocities (n, 3) m/s and temperatures (n,) degC at query points."""
        if (len(scenario.server_power_w) != len(scene.servers)
                or len(scenario.acu_supply_temp_c) != len(scene.acus)):
            raise HashMismatchError(
                "scenario entity counts do not match the model's scene")
        pts = np.asarray(points, dtype=np.float64)
        assigned = self.assign_domains(pts)
        srv = server_features(scene, scenario)
        acu = acu_features(scene, scenario)

        ns = self.norm_stats
        vel_out = np.empty((len(pts), 3), dtype=np.float64)
        temp_out = np.empty(len(pts), dtype=np.float64)
        with ad.no_grad():
            for di, spec in enumerate(self.domain_specs):
                mask = assigned == di
                if not mask.any():
                    continue
                dom_pts = pts[mask]
                tokens = self.domain_tokens(spec.name, (srv, acu))
                feats = self.query_features(dom_pts).astype(np.float32)
                vel_n = self.forward_fluid(spec.name, tokens, dom_pts,
                                           fourier_feats=feats).data
                temp_n = self.forward_thermal(spec.name, tokens, dom_pts, vel_n,
                                              fourier_feats=feats).data[:, 0]
                vel_out[mask] = vel_n * ns.out_std[:3] + ns.out_mean[:3]
                temp_out[mask] = temp_n * ns.out_std[3] + ns.out_mean[3]
        return vel_out, temp_out
