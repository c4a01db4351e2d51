"""Message-passing network over the floorplan factor graph.

Input features are projected to embeddings, L rounds of variable-to-factor
and factor-to-variable message passing run with a learnable softmax
aggregator, and a readout MLP emits one coordinate per variable. Graphs are
compiled to flat index arrays so a whole minibatch runs as a handful of
dense matmuls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import neural
from .factorgraph import FactorGraph, GraphConfig, build_factor_graph, target_coords
from .geometry import BBox
from .neural import MlpParams, Tape, Tensor, mlp_apply, mlp_init

AGGREGATORS = ("softmax", "MAX", "SUM", "MEAN")


@dataclass(frozen=True)
class ModelConfig:
    iterations: int = 4
    hidden: int = 128
    tied: bool = False
    aggregator: str = "softmax"
    refresh_factors: bool = False  # use the freshly aggregated factor row
                                   # in the factor-to-variable step
    precision: str = "single"
    graph: GraphConfig = field(default_factory=GraphConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.hidden < 1:
            raise ValueError("hidden must be positive")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if self.precision not in neural.DTYPES:
            raise ValueError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return neural.DTYPES[self.precision]

    def to_obj(self):
        return {
            "iterations": self.iterations, "hidden": self.hidden,
            "tied": self.tied, "aggregator": self.aggregator,
            "refresh_factors": self.refresh_factors, "precision": self.precision,
            "graph": self.graph.__dict__ | {"relation_groups_off": list(self.graph.relation_groups_off)},
        }

    @classmethod
    def from_obj(cls, obj):
        gobj = dict(obj.get("graph", {}))
        gobj["relation_groups_off"] = tuple(gobj.get("relation_groups_off", ()))
        rest = {k: v for k, v in obj.items() if k != "graph"}
        return cls(graph=GraphConfig(**gobj), **rest)


@dataclass
class LayerParams:
    vf: MlpParams
    fv: MlpParams
    theta_vf: Tensor
    theta_fv: Tensor


@dataclass
class ModelParams:
    proj_v: MlpParams
    proj_f: MlpParams
    layers: list[LayerParams]
    readout: MlpParams

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.proj_v.tensors("proj_v"))
        out.update(self.proj_f.tensors("proj_f"))
        for i, lp in enumerate(self.layers):
            out.update(lp.vf.tensors(f"layers.{i}.vf"))
            out.update(lp.fv.tensors(f"layers.{i}.fv"))
            out[f"layers.{i}.theta_vf"] = lp.theta_vf
            out[f"layers.{i}.theta_fv"] = lp.theta_fv
        out.update(self.readout.tensors("readout"))
        return out

    def zero_grads(self):
        for t in self.tensors().values():
            t.zero_grad()

    def astype(self, dtype):
        for t in self.tensors().values():
            t.data = t.data.astype(dtype)
        return self


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Kaiming-uniform weights, zero biases, zero aggregation vectors (so
    the first rounds aggregate as a plain mean). Deterministic per seed."""
    rng = np.random.default_rng(seed)
    dtype = cfg.dtype
    h = cfg.hidden
    dv = cfg.graph.var_feature_dim
    df = cfg.graph.factor_feature_dim
    msg_in = h + h + df
    proj_v = mlp_init(rng, [dv, h], dtype)
    proj_f = mlp_init(rng, [df, h], dtype)
    n_layers = 1 if cfg.tied else cfg.iterations
    layers = []
    for _ in range(n_layers):
        layers.append(LayerParams(
            vf=mlp_init(rng, [msg_in, h, h], dtype),
            fv=mlp_init(rng, [msg_in, h, h], dtype),
            theta_vf=Tensor(np.zeros(h), requires_grad=True, dtype=dtype),
            theta_fv=Tensor(np.zeros(h), requires_grad=True, dtype=dtype),
        ))
    readout = mlp_init(rng, [h, h, 1], dtype)
    return ModelParams(proj_v, proj_f, layers, readout)


@dataclass
class CompiledGraph:
    """Flat array view of one factor graph, ready for the forward pass."""

    var_feats: np.ndarray    # [4N, Dv]
    factor_feats: np.ndarray  # [F, Df]
    edge_fac: np.ndarray     # [E] sorted by (factor, variable)
    edge_var: np.ndarray     # [E]
    var_sort: np.ndarray     # [E] permutation making edge_var sorted (fac-minor)
    n_vars: int
    n_factors: int
    targets: np.ndarray | None   # [4N], NaN where unsupervised
    n_rooms: int
    canvas_w: int = 256
    canvas_h: int = 256


def compile_graph(g: FactorGraph, targets=None, dtype=np.float32) -> CompiledGraph:
    edges = np.array(sorted(g.edges), dtype=np.int64).reshape(-1, 2)
    edge_fac = edges[:, 0]
    edge_var = edges[:, 1]
    var_sort = np.lexsort((edge_fac, edge_var))
    return CompiledGraph(
        var_feats=g.var_features.astype(dtype),
        factor_feats=g.factor_features.astype(dtype),
        edge_fac=edge_fac, edge_var=edge_var, var_sort=var_sort,
        n_vars=len(g.variables), n_factors=len(g.factors),
        targets=targets, n_rooms=g.n_rooms,
        canvas_w=g.canvas_w, canvas_h=g.canvas_h,
    )


def compile_spec(spec, cfg: ModelConfig) -> CompiledGraph:
    g = build_factor_graph(spec, cfg.graph)
    return compile_graph(g, targets=target_coords(spec), dtype=cfg.dtype)


def pack_graphs(graphs: list[CompiledGraph], dtype=np.float32) -> CompiledGraph:
    """Concatenate graphs into one block-diagonal graph for batched passes."""
    var_feats = np.concatenate([g.var_feats for g in graphs]).astype(dtype)
    factor_feats = np.concatenate([g.factor_feats for g in graphs]).astype(dtype)
    edge_fac, edge_var, targets = [], [], []
    vo, fo = 0, 0
    for g in graphs:
        edge_fac.append(g.edge_fac + fo)
        edge_var.append(g.edge_var + vo)
        targets.append(g.targets if g.targets is not None
                       else np.full(g.n_vars, np.nan))
        vo += g.n_vars
        fo += g.n_factors
    edge_fac = np.concatenate(edge_fac)
    edge_var = np.concatenate(edge_var)
    var_sort = np.lexsort((edge_fac, edge_var))
    return CompiledGraph(
        var_feats=var_feats, factor_feats=factor_feats,
        edge_fac=edge_fac, edge_var=edge_var, var_sort=var_sort,
        n_vars=vo, n_factors=fo,
        targets=np.concatenate(targets), n_rooms=sum(g.n_rooms for g in graphs),
    )


def _aggregate(tape, m, theta, seg_ids, n_seg, mode):
    if mode == "softmax":
        return neural.segment_softmax_aggregate(tape, m, theta, seg_ids, n_seg)
    return neural.segment_aggregate(tape, m, mode, seg_ids, n_seg)


def embed_inputs(g: CompiledGraph, params: ModelParams, tape: Tape):
    v0 = mlp_apply(params.proj_v, Tensor(g.var_feats), tape)
    f0 = mlp_apply(params.proj_f, Tensor(g.factor_feats), tape)
    return v0, f0


def message_round(v_emb, f_emb, g: CompiledGraph, lp: LayerParams,
                  cfg: ModelConfig, tape: Tape, edge_feat: Tensor):
    """One round of lines 2-7: factors aggregate from variables, then
    variables aggregate from factors (stale factor rows by default)."""
    fe = neural.gather_rows(tape, f_emb, g.edge_fac)
    ve = neural.gather_rows(tape, v_emb, g.edge_var)
    x = neural.concat_cols(tape, [fe, ve, edge_feat])
    m_vf = mlp_apply(lp.vf, x, tape)
    f_new = _aggregate(tape, m_vf, lp.theta_vf, g.edge_fac, g.n_factors, cfg.aggregator)

    f_src = f_new if cfg.refresh_factors else f_emb
    fe2 = neural.gather_rows(tape, f_src, g.edge_fac)
    x2 = neural.concat_cols(tape, [fe2, ve, edge_feat])
    m_fv = mlp_apply(lp.fv, x2, tape)
    # Re-sort message rows by variable so the reduction order is canonical.
    m_fv_sorted = neural.gather_rows(tape, m_fv, g.var_sort)
    seg = g.edge_var[g.var_sort]
    v_new = _aggregate(tape, m_fv_sorted, lp.theta_fv, seg, g.n_vars, cfg.aggregator)
    return v_new, f_new


def forward(g: CompiledGraph, params: ModelParams, cfg: ModelConfig,
            tape: Tape | None = None, rounds: int | None = None) -> Tensor:
    """Raw per-variable coordinates, shape [n_vars, 1]. Training uses the
    raw outputs; clamping to [0,1] happens in predict_boxes."""
    tape = tape or Tape()
    rounds = cfg.iterations if rounds is None else rounds
    v_emb, f_emb = embed_inputs(g, params, tape)
    if rounds > 0 and len(g.edge_fac):
        edge_feat = Tensor(g.factor_feats[g.edge_fac])
        for l in range(rounds):
            lp = params.layers[0 if cfg.tied else l]
            v_emb, f_emb = message_round(v_emb, f_emb, g, lp, cfg, tape, edge_feat)
    return mlp_apply(params.readout, v_emb, tape)


def predict_boxes(coords: np.ndarray, n_rooms: int, canvas: int = 256) -> list[BBox]:
    """Clamp, repair inverted pairs, widen degenerate boxes to one pixel."""
    c = np.clip(np.asarray(coords, dtype=np.float64).reshape(-1), 0.0, 1.0)
    if c.size != 4 * n_rooms:
        raise ValueError(f"expected {4 * n_rooms} coordinates, got {c.size}")
    px = 1.0 / canvas
    boxes = []
    for i in range(n_rooms):
        x0, x1, y0, y1 = c[4 * i:4 * i + 4]
        if x0 > x1:
            x0, x1 = x1, x0
        if y0 > y1:
            y0, y1 = y1, y0
        if x1 - x0 < px:
            mid = 0.5 * (x0 + x1)
            x0 = max(0.0, min(mid - px / 2, 1.0 - px))
            x1 = x0 + px
        if y1 - y0 < px:
            mid = 0.5 * (y0 + y1)
            y0 = max(0.0, min(mid - px / 2, 1.0 - px))
            y1 = y0 + px
        boxes.append(BBox(x0, y0, x1, y1))
    return boxes


def loss_weights(packed: CompiledGraph, samples: list[CompiledGraph], dtype=np.float32):
    """Per-coordinate weights: each plan contributes its mean supervised L1
    equally to the batch loss."""
    ws = []
    n_samples = len(samples)
    for g in samples:
        t = g.targets if g.targets is not None else np.full(g.n_vars, np.nan)
        known = np.isfinite(t)
        w = np.zeros(g.n_vars)
        if known.any():
            w[known] = 1.0 / (known.sum() * n_samples)
        ws.append(w)
    return np.concatenate(ws).astype(dtype)[:, None]
