"""Floorplan records, synthetic generation, serialization and retrieval.

The synthetic generator replaces a large vectorized dataset at desk scale:
rectilinear boundaries on a coarse grid, guillotine-partitioned into rooms
that tile the boundary exactly, so ground truth is self-consistent by
construction. Real data in the same JSON schema can be imported instead.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .geometry import (
    BBox,
    GeometryError,
    RectPolygon,
    RelationType,
    classify_relation,
    location_cell,
    normalized_size,
    rasterize_polygon,
)

ROOM_TYPES = [
    "LivingRoom", "MasterRoom", "Kitchen", "Bathroom", "DiningRoom",
    "ChildRoom", "StudyRoom", "SecondRoom", "GuestRoom", "Balcony",
    "Entrance", "Storage", "Wall-in", "External", "ExteriorWall",
]
ROOM_TYPE_INDEX = {name: i for i, name in enumerate(ROOM_TYPES)}

# External / ExteriorWall are raster-only labels, never adjacency-graph rooms.
GENERATABLE_TYPES = ROOM_TYPES[:13]
REQUIRED_TYPES = ["LivingRoom", "Kitchen", "MasterRoom", "Bathroom"]
FILLER_TYPES = [t for t in GENERATABLE_TYPES if t not in REQUIRED_TYPES]
PROTECTED_TYPES = ("LivingRoom", "MasterRoom", "Kitchen")

RELATION_NAMES = {r.value: r for r in RelationType}

# Adjacency predicate constants (normalized; canvas 256).
GAP_TOL = 2.0 / 256.0
MIN_SPAN = 8.0 / 256.0

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """Parse/validation failure with a JSON-path locator."""

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


@dataclass
class RoomSpec:
    id: int
    type: str
    known: bool = True
    location: int | None = None  # grid cell index, K x K row-major
    size: float | None = None
    bbox: BBox | None = None


@dataclass
class EdgeSpec:
    s: int
    o: int
    rel: RelationType


@dataclass
class FloorplanSpec:
    canvas_w: int
    canvas_h: int
    boundary: RectPolygon
    rooms: list[RoomSpec]
    edges: list[EdgeSpec]
    provenance: str = "imported"

    @property
    def n_rooms(self):
        return len(self.rooms)

    def room_by_id(self, rid):
        for r in self.rooms:
            if r.id == rid:
                return r
        raise KeyError(rid)

    def validate(self):
        ids = [r.id for r in self.rooms]
        if len(set(ids)) != len(ids):
            raise SchemaError("$.rooms", "duplicate room ids")
        if not self.rooms:
            raise SchemaError("$.rooms", "at least one room is required")
        idset = set(ids)
        for i, e in enumerate(self.edges):
            if e.s not in idset or e.o not in idset:
                raise SchemaError(f"$.edges[{i}]", f"edge references missing room ({e.s},{e.o})")
            if e.s == e.o:
                raise SchemaError(f"$.edges[{i}]", "self edge")
        enclosing = self.boundary.enclosing_box
        for i, r in enumerate(self.rooms):
            if r.type not in ROOM_TYPE_INDEX:
                raise SchemaError(f"$.rooms[{i}].type", f"unknown room type {r.type!r}")
            if r.known and (r.location is None or r.size is None):
                raise SchemaError(f"$.rooms[{i}]", "known room lacks location/size")
            if not r.known and (r.location is not None or r.size is not None or r.bbox is not None):
                raise SchemaError(f"$.rooms[{i}]", "unknown room carries attributes")
            if r.bbox is not None:
                b = r.bbox
                if (b.x_min < enclosing.x_min - 1e-9 or b.y_min < enclosing.y_min - 1e-9
                        or b.x_max > enclosing.x_max + 1e-9 or b.y_max > enclosing.y_max + 1e-9):
                    raise SchemaError(f"$.rooms[{i}].bbox", "box outside boundary enclosure")

    def has_gt(self):
        return all(r.bbox is not None for r in self.rooms if r.known)


@dataclass
class Dataset:
    specs: list[FloorplanSpec]
    split: list[str] = field(default_factory=list)  # "train" | "val" per spec

    def subset(self, label):
        return [s for s, l in zip(self.specs, self.split) if l == label]


# ---------------------------------------------------------------------------
# Serialization (versioned JSON, exact round trip, unknown fields rejected)

def spec_to_obj(spec: FloorplanSpec) -> dict:
    rooms = []
    for r in spec.rooms:
        obj = {"id": r.id, "type": r.type, "known": r.known}
        if r.location is not None:
            obj["location"] = r.location
        if r.size is not None:
            obj["size"] = r.size
        if r.bbox is not None:
            obj["bbox"] = list(r.bbox.coords())
        rooms.append(obj)
    return {
        "version": SCHEMA_VERSION,
        "canvas": {"w": spec.canvas_w, "h": spec.canvas_h},
        "boundary": [list(p) for p in spec.boundary.points],
        "rooms": rooms,
        "edges": [{"s": e.s, "o": e.o, "rel": e.rel.value} for e in spec.edges],
        "provenance": spec.provenance,
    }


_TOP_FIELDS = {"version", "canvas", "boundary", "rooms", "edges", "provenance"}
_ROOM_FIELDS = {"id", "type", "known", "location", "size", "bbox"}
_EDGE_FIELDS = {"s", "o", "rel"}


def _req(obj, key, path):
    if not isinstance(obj, dict):
        raise SchemaError(path, f"expected object, got {type(obj).__name__}")
    if key not in obj:
        raise SchemaError(f"{path}.{key}", "missing required field")
    return obj[key]


def spec_from_obj(obj, path="$") -> FloorplanSpec:
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected object")
    unknown = set(obj) - _TOP_FIELDS
    if unknown:
        raise SchemaError(f"{path}.{sorted(unknown)[0]}", "unknown field")
    if _req(obj, "version", path) != SCHEMA_VERSION:
        raise SchemaError(f"{path}.version", f"unsupported version {obj['version']}")
    canvas = _req(obj, "canvas", path)
    w = _req(canvas, "w", f"{path}.canvas")
    h = _req(canvas, "h", f"{path}.canvas")
    try:
        boundary = RectPolygon(_req(obj, "boundary", path))
    except (GeometryError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}.boundary", str(exc)) from exc
    rooms = []
    for i, r in enumerate(_req(obj, "rooms", path)):
        rp = f"{path}.rooms[{i}]"
        if not isinstance(r, dict):
            raise SchemaError(rp, "expected object")
        bad = set(r) - _ROOM_FIELDS
        if bad:
            raise SchemaError(f"{rp}.{sorted(bad)[0]}", "unknown field")
        rtype = _req(r, "type", rp)
        if rtype not in ROOM_TYPE_INDEX:
            raise SchemaError(f"{rp}.type", f"unknown room type {rtype!r}")
        bbox = None
        if r.get("bbox") is not None:
            vals = r["bbox"]
            if not isinstance(vals, list) or len(vals) != 4:
                raise SchemaError(f"{rp}.bbox", "expected [xmin,ymin,xmax,ymax]")
            try:
                bbox = BBox(*[float(v) for v in vals])
            except GeometryError as exc:
                raise SchemaError(f"{rp}.bbox", str(exc)) from exc
        rooms.append(RoomSpec(
            id=int(_req(r, "id", rp)),
            type=rtype,
            known=bool(r.get("known", True)),
            location=r.get("location"),
            size=r.get("size"),
            bbox=bbox,
        ))
    edges = []
    for i, e in enumerate(_req(obj, "edges", path)):
        ep = f"{path}.edges[{i}]"
        bad = set(e) - _EDGE_FIELDS
        if bad:
            raise SchemaError(f"{ep}.{sorted(bad)[0]}", "unknown field")
        rel = _req(e, "rel", ep)
        if rel not in RELATION_NAMES:
            raise SchemaError(f"{ep}.rel", f"unknown relation {rel!r}")
        edges.append(EdgeSpec(int(_req(e, "s", ep)), int(_req(e, "o", ep)), RELATION_NAMES[rel]))
    spec = FloorplanSpec(
        canvas_w=int(w), canvas_h=int(h), boundary=boundary,
        rooms=rooms, edges=edges, provenance=obj.get("provenance", "imported"),
    )
    spec.validate()
    return spec


def save_spec(spec: FloorplanSpec) -> bytes:
    return json.dumps(spec_to_obj(spec), separators=(",", ":")).encode()


def load_spec(data: bytes | str) -> FloorplanSpec:
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from exc
    return spec_from_obj(obj)


def save_dataset(ds: Dataset) -> bytes:
    obj = {
        "version": SCHEMA_VERSION,
        "plans": [spec_to_obj(s) for s in ds.specs],
        "split": list(ds.split),
    }
    return json.dumps(obj, separators=(",", ":")).encode()


def load_dataset(data: bytes | str) -> Dataset:
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from exc
    plans = _req(obj, "plans", "$")
    specs = [spec_from_obj(p, f"$.plans[{i}]") for i, p in enumerate(plans)]
    split = obj.get("split") or []
    if split and len(split) != len(specs):
        raise SchemaError("$.split", "split length mismatch")
    return Dataset(specs, split)


# ---------------------------------------------------------------------------
# Synthetic generation

@dataclass
class GenConfig:
    canvas: int = 256
    grid_step: int = 16          # coarse lattice, pixels
    rooms_min: int = 4
    rooms_max: int = 10
    corners_min: int = 4
    corners_max: int = 8
    min_side_units: int = 2      # minimum room side on the lattice
    retries: int = 50

    def validate(self):
        if self.rooms_min < 1 or self.rooms_max < self.rooms_min:
            raise ValueError("invalid room-count range")
        if self.corners_min < 4 or self.corners_max < self.corners_min or self.corners_min % 2:
            raise ValueError("invalid corner-count range")


class GenerationError(RuntimeError):
    pass


def _split_rect(rng, rect, n, min_side):
    """Guillotine-split rect=(x0,y0,x1,y1) in lattice units into n rooms."""
    x0, y0, x1, y1 = rect
    w, h = x1 - x0, y1 - y0
    if n == 1:
        return [rect]
    n_left = int(rng.integers(1, n))
    n_right = n - n_left
    # Cut across the longer side; fall back to the other axis if needed.
    for axis in (["x", "y"] if w >= h else ["y", "x"]):
        span = w if axis == "x" else h
        # Feasible cut positions leave both halves enough span for their quota.
        lo = n_left * min_side
        hi = span - n_right * min_side
        if lo > hi:
            continue
        cut = int(rng.integers(lo, hi + 1))
        if axis == "x":
            a, b = (x0, y0, x0 + cut, y1), (x0 + cut, y0, x1, y1)
        else:
            a, b = (x0, y0, x1, y0 + cut), (x0, y0 + cut, x1, y1)
        return _split_rect(rng, a, n_left, min_side) + _split_rect(rng, b, n_right, min_side)
    raise GenerationError("rectangle too small for quota")


def _sample_boundary(rng, cfg: GenConfig):
    """Rectilinear boundary as (polygon, slab rectangles) in lattice units."""
    units = cfg.canvas // cfg.grid_step
    w = int(rng.integers(max(8, units - 4), units + 1))
    h = int(rng.integers(max(8, units - 4), units + 1))
    ox = int(rng.integers(0, units - w + 1))
    oy = int(rng.integers(0, units - h + 1))
    n_corners = int(rng.choice(np.arange(cfg.corners_min, cfg.corners_max + 1, 2)))
    n_notches = (n_corners - 4) // 2
    rect = (ox, oy, ox + w, oy + h)
    corners = ["tl", "tr", "bl", "br"]
    picks = list(rng.choice(len(corners), size=n_notches, replace=False)) if n_notches else []
    notches = []
    for p in picks:
        nw = int(rng.integers(2, max(3, w // 2 - 1)))
        nh = int(rng.integers(2, max(3, h // 2 - 1)))
        notches.append((corners[p], nw, nh))
    poly_pts, slabs = _build_notched(rect, notches)
    return poly_pts, slabs


def _build_notched(rect, notches):
    x0, y0, x1, y1 = rect
    cut = {name: None for name in ("tl", "tr", "bl", "br")}
    for name, nw, nh in notches:
        cut[name] = (nw, nh)
    # Vertical slab decomposition: x breakpoints at notch edges.
    xs = {x0, x1}
    for name, dims in cut.items():
        if dims is None:
            continue
        nw, _ = dims
        xs.add(x0 + nw if name in ("tl", "bl") else x1 - nw)
    xs = sorted(xs)
    slabs = []
    for a, b in zip(xs, xs[1:]):
        top = y0
        bot = y1
        mid = 0.5 * (a + b)
        for name, dims in cut.items():
            if dims is None:
                continue
            nw, nh = dims
            if name == "tl" and mid < x0 + nw:
                top = max(top, y0 + nh)
            if name == "tr" and mid > x1 - nw:
                top = max(top, y0 + nh)
            if name == "bl" and mid < x0 + nw:
                bot = min(bot, y1 - nh)
            if name == "br" and mid > x1 - nw:
                bot = min(bot, y1 - nh)
        if bot - top < 2:
            raise GenerationError("notches collapse a slab")
        slabs.append((a, top, b, bot))
    poly = _union_outline(slabs)
    return poly, slabs


def _union_outline(slabs):
    """Outline of a left-to-right run of touching slab rectangles."""
    pts = []
    # Top edge, left to right.
    for i, (a, top, b, _) in enumerate(slabs):
        if i == 0 or slabs[i - 1][1] != top:
            if i > 0:
                pts.append((a, slabs[i - 1][1]))
            pts.append((a, top))
    pts.append((slabs[-1][2], slabs[-1][1]))
    # Bottom edge, right to left.
    for i in range(len(slabs) - 1, -1, -1):
        a, _, b, bot = slabs[i]
        if i == len(slabs) - 1 or slabs[i + 1][3] != bot:
            if i < len(slabs) - 1:
                pts.append((b, slabs[i + 1][3]))
            pts.append((b, bot))
    pts.append((slabs[0][0], slabs[0][3]))
    # Deduplicate collinear/repeat points.
    out = []
    for p in pts:
        if not out or out[-1] != p:
            out.append(p)
    if out[0] == out[-1]:
        out.pop()
    return out


def derive_edges(boxes: dict[int, BBox], gap_tol: float = GAP_TOL,
                 min_span: float = MIN_SPAN) -> list[EdgeSpec]:
    """Adjacency edges between near-touching boxes, labeled by the relation
    classifier. Subjects take the lower room id."""
    ids = sorted(boxes)
    edges = []
    for ii, i in enumerate(ids):
        for j in ids[ii + 1:]:
            a, b = boxes[i], boxes[j]
            if geometry._strictly_contains(a, b) or geometry._strictly_contains(b, a):
                edges.append(EdgeSpec(i, j, classify_relation(a, b)))
                continue
            ox = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
            oy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
            adjacent = (-gap_tol <= ox <= gap_tol and oy >= min_span) or \
                       (-gap_tol <= oy <= gap_tol and ox >= min_span)
            if adjacent:
                edges.append(EdgeSpec(i, j, classify_relation(a, b)))
    return edges


def generate_floorplan(seed: int, cfg: GenConfig | None = None, k: int = 5) -> FloorplanSpec:
    """Deterministic synthetic floorplan for one seed."""
    cfg = cfg or GenConfig()
    cfg.validate()
    last_err = None
    for attempt in range(cfg.retries):
        rng = np.random.default_rng([seed, attempt])
        try:
            return _generate_once(rng, cfg, k, seed)
        except GenerationError as exc:
            last_err = exc
    raise GenerationError(f"generation failed for seed {seed} after {cfg.retries} retries: {last_err}")


def _generate_once(rng, cfg, k, seed):
    units = cfg.canvas // cfg.grid_step
    poly_pts, slabs = _sample_boundary(rng, cfg)
    n_rooms = int(rng.integers(cfg.rooms_min, cfg.rooms_max + 1))
    areas = [(x1 - x0) * (y1 - y0) for x0, y0, x1, y1 in slabs]
    total = sum(areas)
    # Proportional quotas with a floor of one room per slab.
    quotas = [max(1, round(n_rooms * a / total)) for a in areas]
    while sum(quotas) > n_rooms:
        i = max(range(len(quotas)), key=lambda i: (quotas[i], areas[i]))
        if quotas[i] == 1:
            raise GenerationError("too few rooms for slab count")
        quotas[i] -= 1
    while sum(quotas) < n_rooms:
        i = max(range(len(quotas)), key=lambda i: areas[i] / quotas[i])
        quotas[i] += 1
    room_rects = []
    for slab, q in zip(slabs, quotas):
        room_rects.extend(_split_rect(rng, slab, q, cfg.min_side_units))
    if len(room_rects) != n_rooms:
        raise GenerationError("partition quota mismatch")
    scale = 1.0 / units
    boxes = [BBox(x0 * scale, y0 * scale, x1 * scale, y1 * scale)
             for x0, y0, x1, y1 in room_rects]
    # Types: required four first (living room gets the largest box), fillers after.
    order = sorted(range(n_rooms), key=lambda i: -boxes[i].area)
    types = [None] * n_rooms
    types[order[0]] = "LivingRoom"
    others = list(order[1:])
    rng.shuffle(others)
    for slot, t in zip(others, REQUIRED_TYPES[1:]):
        types[slot] = t
    fillers = rng.choice(len(FILLER_TYPES), size=n_rooms)
    for i in range(n_rooms):
        if types[i] is None:
            types[i] = FILLER_TYPES[int(fillers[i])]
    rooms = [
        RoomSpec(id=i, type=types[i], known=True,
                 location=location_cell(boxes[i], k),
                 size=normalized_size(boxes[i]), bbox=boxes[i])
        for i in range(n_rooms)
    ]
    edges = derive_edges({i: boxes[i] for i in range(n_rooms)})
    boundary = RectPolygon([(x * scale, y * scale) for x, y in poly_pts])
    return FloorplanSpec(
        canvas_w=cfg.canvas, canvas_h=cfg.canvas, boundary=boundary,
        rooms=rooms, edges=edges, provenance=f"synthetic:{seed}",
    )


def generate_dataset(seed: int, count: int, cfg: GenConfig | None = None,
                     val_fraction: float = 0.2, k: int = 5) -> Dataset:
    specs = [generate_floorplan(seed + i, cfg, k) for i in range(count)]
    rng = np.random.default_rng([seed, 0xD5])
    order = rng.permutation(count)
    n_val = int(round(count * val_fraction))
    val_idx = set(int(i) for i in order[:n_val])
    split = ["val" if i in val_idx else "train" for i in range(count)]
    return Dataset(specs, split)


# ---------------------------------------------------------------------------
# Partial-constraint degradation

def drop_constraints(spec: FloorplanSpec, k_drop: int, seed: int,
                     protected=PROTECTED_TYPES) -> FloorplanSpec:
    """Strip location/size/box from k_drop sampled rooms and isolate them.

    Rooms with a protected type are never dropped. The caller keeps the
    original spec for evaluating the complete constraint set.
    """
    candidates = [r.id for r in spec.rooms if r.type not in protected]
    if k_drop > len(candidates):
        raise ValueError(f"cannot drop {k_drop} of {len(candidates)} unprotected rooms")
    if k_drop == 0:
        return spec
    rng = np.random.default_rng([seed, 0xDF])
    chosen = set(int(candidates[i]) for i in rng.choice(len(candidates), size=k_drop, replace=False))
    rooms = [
        replace(r, known=False, location=None, size=None, bbox=None)
        if r.id in chosen else r
        for r in spec.rooms
    ]
    edges = [e for e in spec.edges if e.s not in chosen and e.o not in chosen]
    return FloorplanSpec(
        canvas_w=spec.canvas_w, canvas_h=spec.canvas_h, boundary=spec.boundary,
        rooms=rooms, edges=edges, provenance=spec.provenance,
    )


# ---------------------------------------------------------------------------
# Boundary retrieval for the generative workflow

def boundary_descriptor(p: RectPolygon, bins: int = 16) -> np.ndarray:
    """Fixed-length shape signature: corner count, area, aspect, and a
    radial occupancy histogram of the rasterized mask."""
    mask = rasterize_polygon(p, 64, 64)
    grid = mask.grid
    rows, cols = np.nonzero(grid)
    area = rows.size / grid.size
    box = p.enclosing_box
    aspect = box.width / box.height if box.height > 0 else 0.0
    cy, cx = rows.mean(), cols.mean()
    ang = np.arctan2(rows - cy, cols - cx)  # occupied pixels only
    idx = np.clip(((ang + np.pi) / (2 * np.pi) * bins).astype(int), 0, bins - 1)
    occupied = np.bincount(idx, minlength=bins).astype(float)
    ally, allx = np.mgrid[0:grid.shape[0], 0:grid.shape[1]]
    all_ang = np.arctan2(ally.ravel() - cy, allx.ravel() - cx)
    all_idx = np.clip(((all_ang + np.pi) / (2 * np.pi) * bins).astype(int), 0, bins - 1)
    totals = np.bincount(all_idx, minlength=bins).astype(float)
    radial = occupied / np.maximum(totals, 1.0)
    return np.concatenate([[len(p.points) / 16.0, area, aspect], radial])


def knn_boundaries(query: RectPolygon, dataset: Dataset, k: int) -> list[FloorplanSpec]:
    """k stored specs with the closest boundary, re-targeted to the query.

    Re-targeting keeps each retrieved plan's rooms and edges but swaps in
    the query boundary and drops ground-truth boxes, producing inference
    inputs for diverse generation.
    """
    if not dataset.specs:
        raise ValueError("empty dataset")
    qd = boundary_descriptor(query)
    scored = []
    for i, spec in enumerate(dataset.specs):
        d = float(np.linalg.norm(boundary_descriptor(spec.boundary) - qd))
        scored.append((d, i))
    scored.sort()
    out = []
    for d, i in scored[:k]:
        src = dataset.specs[i]
        rooms = [replace(r, bbox=None) for r in src.rooms]
        out.append(FloorplanSpec(
            canvas_w=src.canvas_w, canvas_h=src.canvas_h, boundary=query,
            rooms=rooms, edges=list(src.edges),
            provenance=f"retrieved:{i}",
        ))
    return out
