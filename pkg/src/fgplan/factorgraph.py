"""Factor graph construction from a floorplan record.

Four coordinate variables per room; box, relation, boundary and complete
factor families; fixed-layout input feature vectors for every node. Graphs
are immutable after construction and build deterministically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import FloorplanSpec, RoomSpec, ROOM_TYPE_INDEX, ROOM_TYPES
from .geometry import EPS_DEFAULT, RelationType, corner_feature, extract_corners, rasterize_polygon

# Coordinate-variable kinds, in feature one-hot order.
KINDS = ("x_min", "x_max", "y_min", "y_max")
KIND_INDEX = {k: i for i, k in enumerate(KINDS)}

N_ROOM_TYPES = len(ROOM_TYPES)  # 15
N_RELATIONS = len(RelationType)  # 10
N_FACTOR_KINDS = 1 + N_RELATIONS + 1 + 1  # box, relations, boundary, complete
CORNER_FEATURE_DIM = 10

RELATION_ORDER = list(RelationType)
RELATION_KIND_OFFSET = {rel: 1 + i for i, rel in enumerate(RELATION_ORDER)}
BOUNDARY_KIND = 1 + N_RELATIONS
COMPLETE_KIND = BOUNDARY_KIND + 1

# Table of relation factor templates: relation -> ordered (subject-kind,
# object-kind) pairs. The inside and surrounding rows are reproduced
# literally, including their shared fourth pair (x kinds by name).
_CONTAINMENT_PAIRS = [
    ("x_min", "x_min"),
    ("y_min", "y_min"),
    ("x_max", "x_max"),
    ("y_min", "y_max"),
]
RELATION_TEMPLATES = {
    RelationType.LEFT_OF: [("x_max", "x_min")],
    RelationType.RIGHT_OF: [("x_min", "x_max")],
    RelationType.ABOVE: [("y_max", "y_min")],
    RelationType.BELOW: [("y_min", "y_max")],
    RelationType.LEFT_ABOVE: [("x_max", "x_min"), ("y_max", "y_min")],
    RelationType.RIGHT_ABOVE: [("x_min", "x_max"), ("y_max", "y_min")],
    RelationType.LEFT_BELOW: [("x_max", "x_min"), ("y_min", "y_max")],
    RelationType.RIGHT_BELOW: [("x_min", "x_max"), ("y_min", "y_max")],
    RelationType.INSIDE: list(_CONTAINMENT_PAIRS),
    RelationType.SURROUNDING: list(_CONTAINMENT_PAIRS),
}
# Alternative fourth containment pair for the suspected transcription slip
# in the source table ({y_min, y_max} repeated from the pure rows).
_AMENDED_CONTAINMENT = _CONTAINMENT_PAIRS[:3] + [("y_max", "y_max")]


@dataclass(frozen=True)
class GraphConfig:
    k: int = 5                      # location grid order (K x K cells)
    eps: float = EPS_DEFAULT
    use_box: bool = True
    use_relation: bool = True
    use_boundary: bool = True
    use_complete: bool = True
    amend_inside_factor: bool = False
    # Ablations on boundary-factor feature content.
    boundary_distance_feature: bool = True
    boundary_probe_feature: bool = True
    # Relation groups that stay enabled (None = all).
    relation_groups_off: tuple = ()

    @property
    def var_feature_dim(self):
        return N_ROOM_TYPES + self.k * self.k + 1 + 4 + 1

    @property
    def factor_feature_dim(self):
        return N_FACTOR_KINDS + (N_ROOM_TYPES + self.k * self.k + 1) + CORNER_FEATURE_DIM


RELATION_GROUPS = {
    "containment": (RelationType.INSIDE, RelationType.SURROUNDING),
    "horizontal": (RelationType.LEFT_OF, RelationType.RIGHT_OF),
    "vertical": (RelationType.ABOVE, RelationType.BELOW),
    "corner": (RelationType.LEFT_ABOVE, RelationType.RIGHT_ABOVE,
               RelationType.LEFT_BELOW, RelationType.RIGHT_BELOW),
}


@dataclass(frozen=True)
class VariableRef:
    room: int  # room index (position in spec.rooms, not the room id)
    kind: str

    @property
    def kind_index(self):
        return KIND_INDEX[self.kind]


@dataclass(frozen=True)
class Factor:
    kind: str  # "box" | "relation" | "boundary" | "complete"
    room: int | None = None            # box: room index
    rel: RelationType | None = None    # relation: type
    edge_index: int | None = None      # relation: source edge
    template: tuple | None = None      # relation: (subject kind, object kind)
    corner: int | None = None          # boundary: corner index


@dataclass
class FactorGraph:
    variables: list[VariableRef]
    factors: list[Factor]
    var_features: np.ndarray      # [4N, Dv]
    factor_features: np.ndarray   # [F, Df]
    edges: list[tuple[int, int]]  # (factor index, variable index)
    canvas_w: int
    canvas_h: int
    config: GraphConfig
    room_ids: list[int] = field(default_factory=list)

    @property
    def n_rooms(self):
        return len(self.variables) // 4

    def neighbors_of_factor(self, f):
        return [v for (ff, v) in self.edges if ff == f]

    def to_obj(self):
        return {
            "variables": [{"room": v.room, "kind": v.kind} for v in self.variables],
            "factors": [
                {k: (v.value if isinstance(v, RelationType) else
                     (list(v) if isinstance(v, tuple) else v))
                 for k, v in f.__dict__.items() if v is not None}
                for f in self.factors
            ],
            "edges": [list(e) for e in self.edges],
            "var_features": self.var_features.tolist(),
            "factor_features": self.factor_features.tolist(),
            "canvas": {"w": self.canvas_w, "h": self.canvas_h},
        }

    def to_json(self):
        return json.dumps(self.to_obj(), separators=(",", ":"))


def relation_factor_templates(rel: RelationType, amend_inside: bool = False):
    """Ordered (subject kind, object kind) pairs for one relation type."""
    if amend_inside and rel in (RelationType.INSIDE, RelationType.SURROUNDING):
        return list(_AMENDED_CONTAINMENT)
    return list(RELATION_TEMPLATES[rel])


def variable_feature(room: RoomSpec, kind: str, cfg: GraphConfig) -> np.ndarray:
    """Room-type one-hot ++ location one-hot ++ size ++ kind one-hot ++ known flag."""
    k2 = cfg.k * cfg.k
    vec = np.zeros(cfg.var_feature_dim, dtype=np.float64)
    vec[ROOM_TYPE_INDEX[room.type]] = 1.0
    off = N_ROOM_TYPES
    if room.known:
        vec[off + room.location] = 1.0
        vec[off + k2] = room.size
    off += k2 + 1
    vec[off + KIND_INDEX[kind]] = 1.0
    vec[off + 4] = 1.0 if room.known else 0.0
    return vec


def factor_feature(f: Factor, spec: FloorplanSpec, cfg: GraphConfig,
                   corner_feats=None) -> np.ndarray:
    """Kind one-hot; box factors add room attributes, boundary factors the
    corner feature; relation and complete factors carry the kind only."""
    k2 = cfg.k * cfg.k
    vec = np.zeros(cfg.factor_feature_dim, dtype=np.float64)
    attr_off = N_FACTOR_KINDS
    corner_off = attr_off + N_ROOM_TYPES + k2 + 1
    if f.kind == "box":
        vec[0] = 1.0
        room = spec.rooms[f.room]
        vec[attr_off + ROOM_TYPE_INDEX[room.type]] = 1.0
        if room.known:
            vec[attr_off + N_ROOM_TYPES + room.location] = 1.0
            vec[attr_off + N_ROOM_TYPES + k2] = room.size
    elif f.kind == "relation":
        vec[RELATION_KIND_OFFSET[f.rel]] = 1.0
    elif f.kind == "boundary":
        vec[BOUNDARY_KIND] = 1.0
        feat_k = corner_feats[f.corner]
        vec[corner_off:corner_off + CORNER_FEATURE_DIM] = feat_k
    elif f.kind == "complete":
        vec[COMPLETE_KIND] = 1.0
    else:
        raise ValueError(f"unknown factor kind {f.kind!r}")
    return vec


def build_factor_graph(spec: FloorplanSpec, cfg: GraphConfig | None = None) -> FactorGraph:
    """Deterministic factor graph for one floorplan record."""
    cfg = cfg or GraphConfig()
    spec.validate()
    n = spec.n_rooms
    id_to_index = {r.id: i for i, r in enumerate(spec.rooms)}

    variables = [VariableRef(i, kind) for i in range(n) for kind in KINDS]
    var_index = {(v.room, v.kind): iv for iv, v in enumerate(variables)}
    var_features = np.stack([
        variable_feature(spec.rooms[v.room], v.kind, cfg) for v in variables
    ])

    disabled_rels = set()
    for group in cfg.relation_groups_off:
        disabled_rels.update(RELATION_GROUPS[group])

    factors, edges = [], []

    def add_factor(f, var_ids):
        fid = len(factors)
        factors.append(f)
        for v in sorted(var_ids):
            edges.append((fid, v))

    if cfg.use_box:
        for i in range(n):
            add_factor(Factor("box", room=i), [var_index[(i, k)] for k in KINDS])
    if cfg.use_relation:
        for ei, e in enumerate(spec.edges):
            if e.rel in disabled_rels:
                continue
            si, oi = id_to_index[e.s], id_to_index[e.o]
            for skind, okind in relation_factor_templates(e.rel, cfg.amend_inside_factor):
                add_factor(
                    Factor("relation", rel=e.rel, edge_index=ei, template=(skind, okind)),
                    [var_index[(si, skind)], var_index[(oi, okind)]],
                )
    corner_feats = None
    if cfg.use_boundary:
        mask = rasterize_polygon(spec.boundary, spec.canvas_w, spec.canvas_h)
        corners = extract_corners(spec.boundary)
        corner_feats = []
        for c in corners:
            feat = corner_feature(spec.boundary, mask, c, cfg.eps)
            if not cfg.boundary_distance_feature:
                feat[2:6] = [0.0] * 4
            if not cfg.boundary_probe_feature:
                feat[6:10] = [0.0] * 4
            corner_feats.append(feat)
        all_vars = list(range(len(variables)))
        for k in range(len(corners)):
            add_factor(Factor("boundary", corner=k), all_vars)
    if cfg.use_complete:
        add_factor(Factor("complete"), list(range(len(variables))))

    factor_features = (
        np.stack([factor_feature(f, spec, cfg, corner_feats) for f in factors])
        if factors else np.zeros((0, cfg.factor_feature_dim))
    )
    return FactorGraph(
        variables=variables, factors=factors,
        var_features=var_features, factor_features=factor_features,
        edges=edges, canvas_w=spec.canvas_w, canvas_h=spec.canvas_h,
        config=cfg, room_ids=[r.id for r in spec.rooms],
    )


def target_coords(spec: FloorplanSpec) -> np.ndarray:
    """Ground-truth coordinate per variable (NaN where a room has no box)."""
    out = np.full(4 * spec.n_rooms, np.nan)
    for i, r in enumerate(spec.rooms):
        if r.bbox is not None:
            out[4 * i:4 * i + 4] = [r.bbox.x_min, r.bbox.x_max, r.bbox.y_min, r.bbox.y_max]
    return out


_ARITY = {"box": 4, "relation": 2}


def validate(g: FactorGraph) -> list[str]:
    """Well-formedness diagnostics; an empty list means the graph is sound."""
    issues = []
    n_vars = len(g.variables)
    if len(g.variables) != 4 * g.n_rooms:
        issues.append(f"variable count {n_vars} is not 4N")
    if g.var_features.shape != (n_vars, g.config.var_feature_dim):
        issues.append(f"variable feature shape {g.var_features.shape} mismatches layout")
    if g.factor_features.shape != (len(g.factors), g.config.factor_feature_dim):
        issues.append(f"factor feature shape {g.factor_features.shape} mismatches layout")
    seen = set()
    neigh = {i: [] for i in range(len(g.factors))}
    touched = set()
    for (f, v) in g.edges:
        if not (0 <= f < len(g.factors)) or not (0 <= v < n_vars):
            issues.append(f"edge ({f},{v}) has a dangling endpoint")
            continue
        if (f, v) in seen:
            issues.append(f"duplicate edge ({f},{v})")
        seen.add((f, v))
        neigh[f].append(v)
        touched.add(v)
    for fi, f in enumerate(g.factors):
        want = _ARITY.get(f.kind, n_vars)
        got = len(neigh.get(fi, []))
        if got != want:
            issues.append(f"factor {fi} ({f.kind}) has arity {got}, expected {want}")
    for v in range(n_vars):
        if v not in touched:
            issues.append(f"variable {v} participates in no factor")
    return issues
