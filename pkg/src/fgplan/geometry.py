"""Axis-aligned box arithmetic, rectilinear boundaries and spatial relations.

Everything here is a pure function on immutable inputs. Coordinates are
normalized to [0, 1]; pixel values are obtained by scaling with the canvas
width/height. The y axis points down (row 0 is the top of the canvas).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

# Default canvas and probe offset: 3 pixels on a 256x256 canvas.
CANVAS = 256
EPS_DEFAULT = 3.0 / 256.0

# Half-angle of the pure-axis sectors (sector centers sit on the axes and
# the diagonals; boundaries at 22.5 degrees resolve toward the axis).
_TAN_22_5 = math.tan(math.pi / 8.0)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise GeometryError(f"inverted box: {self}")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    @property
    def centroid(self):
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def coords(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)


class RelationType(Enum):
    LEFT_OF = "left-of"
    RIGHT_OF = "right-of"
    ABOVE = "above"
    BELOW = "below"
    LEFT_ABOVE = "left-above"
    RIGHT_ABOVE = "right-above"
    LEFT_BELOW = "left-below"
    RIGHT_BELOW = "right-below"
    INSIDE = "inside"
    SURROUNDING = "surrounding"


INVERSE_RELATION = {
    RelationType.LEFT_OF: RelationType.RIGHT_OF,
    RelationType.RIGHT_OF: RelationType.LEFT_OF,
    RelationType.ABOVE: RelationType.BELOW,
    RelationType.BELOW: RelationType.ABOVE,
    RelationType.LEFT_ABOVE: RelationType.RIGHT_BELOW,
    RelationType.RIGHT_BELOW: RelationType.LEFT_ABOVE,
    RelationType.RIGHT_ABOVE: RelationType.LEFT_BELOW,
    RelationType.LEFT_BELOW: RelationType.RIGHT_ABOVE,
    RelationType.INSIDE: RelationType.SURROUNDING,
    RelationType.SURROUNDING: RelationType.INSIDE,
}


class RectPolygon:
    """Simple rectilinear polygon given as an ordered corner list.

    Corners are canonicalized on construction: positive signed area in the
    y-down coordinate system (counter-clockwise on screen) and rotation so
    the top-most (then left-most) corner comes first.
    """

    def __init__(self, points):
        pts = [(float(x), float(y)) for x, y in points]
        _validate_rectilinear(pts)
        if _signed_area(pts) < 0:
            pts = list(reversed(pts))
        start = min(range(len(pts)), key=lambda i: (pts[i][1], pts[i][0]))
        self.points = tuple(pts[start:] + pts[:start])

    def __eq__(self, other):
        return isinstance(other, RectPolygon) and self.points == other.points

    def __hash__(self):
        return hash(self.points)

    def __len__(self):
        return len(self.points)

    def __repr__(self):
        return f"RectPolygon({list(self.points)})"

    @property
    def enclosing_box(self) -> BBox:
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        return BBox(min(xs), min(ys), max(xs), max(ys))

    def area(self):
        return _signed_area(self.points)


def _signed_area(pts):
    s = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def _validate_rectilinear(pts):
    n = len(pts)
    if n < 4 or n % 2 != 0:
        raise GeometryError(f"rectilinear polygon needs an even corner count >= 4, got {n}")
    dirs = []
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        dx, dy = x1 - x0, y1 - y0
        if dx != 0 and dy != 0:
            raise GeometryError(f"edge {i} is not axis-parallel")
        if dx == 0 and dy == 0:
            raise GeometryError(f"edge {i} is degenerate")
        dirs.append("h" if dy == 0 else "v")
    for i in range(n):
        if dirs[i] == dirs[(i + 1) % n]:
            raise GeometryError("consecutive edges must alternate horizontal/vertical")
    if abs(_signed_area(pts)) <= 0.0:
        raise GeometryError("polygon has empty interior")
    _validate_simple(pts)


def _validate_simple(pts):
    # Axis-parallel edges: pairwise overlap/crossing check is cheap at the
    # corner counts we handle (<= a few dozen).
    n = len(pts)
    edges = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j == i + 1) or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(edges[i], edges[j]):
                raise GeometryError(f"polygon self-intersects (edges {i} and {j})")


def _segments_intersect(e1, e2):
    (ax0, ay0), (ax1, ay1) = e1
    (bx0, by0), (bx1, by1) = e2
    ax0, ax1 = min(ax0, ax1), max(ax0, ax1)
    ay0, ay1 = min(ay0, ay1), max(ay0, ay1)
    bx0, bx1 = min(bx0, bx1), max(bx0, bx1)
    by0, by1 = min(by0, by1), max(by0, by1)
    return ax0 <= bx1 and bx0 <= ax1 and ay0 <= by1 and by0 <= ay1


@dataclass
class BoundaryMask:
    width: int
    height: int
    grid: np.ndarray  # bool, shape (height, width), True = inside

    def sample(self, x, y):
        """Mask value at normalized point (x, y); points off-canvas are outside."""
        if x < 0.0 or y < 0.0 or x > 1.0 or y > 1.0:
            return 0
        c = min(int(x * self.width), self.width - 1)
        r = min(int(y * self.height), self.height - 1)
        return int(self.grid[r, c])


def iou(a: BBox, b: BBox) -> float:
    inter = intersect_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def intersect_area(a: BBox, b: BBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def rasterize_polygon(p: RectPolygon, width: int = CANVAS, height: int = CANVAS) -> BoundaryMask:
    """Even-odd rasterization: a pixel is inside iff its center is inside p."""
    box = p.enclosing_box
    if box.x_min < 0 or box.y_min < 0 or box.x_max > 1 or box.y_max > 1:
        raise GeometryError("polygon coordinates must lie in [0,1]")
    grid = np.zeros((height, width), dtype=bool)
    cx = (np.arange(width) + 0.5) / width
    cy = (np.arange(height) + 0.5) / height
    pts = p.points
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        if x0 != x1:
            continue  # horizontal edges never cross a horizontal ray
        ylo, yhi = (y0, y1) if y0 < y1 else (y1, y0)
        rows = (cy >= ylo) & (cy < yhi)
        cols = cx < x0
        grid[np.ix_(rows, cols)] ^= True
    if not grid.any():
        raise GeometryError("polygon rasterizes to an empty mask")
    return BoundaryMask(width, height, grid)


def extract_corners(p: RectPolygon):
    """The polygon's corners in canonical order (top-most/left-most first, CCW)."""
    return list(p.points)


def corner_feature(p: RectPolygon, mask: BoundaryMask, corner, eps: float = EPS_DEFAULT):
    """10-vector for one boundary corner.

    Layout: [x, y, d_left, d_right, d_top, d_bottom,
             mask(x+e,y+e), mask(x+e,y-e), mask(x-e,y+e), mask(x-e,y-e)]
    Distances are measured to the sides of the boundary's enclosing box.
    """
    x, y = corner
    box = p.enclosing_box
    feats = [
        x,
        y,
        x - box.x_min,
        box.x_max - x,
        y - box.y_min,
        box.y_max - y,
        mask.sample(x + eps, y + eps),
        mask.sample(x + eps, y - eps),
        mask.sample(x - eps, y + eps),
        mask.sample(x - eps, y - eps),
    ]
    return [float(v) for v in feats]


def location_cell(box: BBox, k: int = 5) -> int:
    cx, cy = box.centroid
    col = min(int(math.floor(cx * k)), k - 1)
    row = min(int(math.floor(cy * k)), k - 1)
    return row * k + col


def normalized_size(box: BBox) -> float:
    return box.area


def classify_relation(s: BBox, o: BBox) -> RelationType:
    """Spatial relation of subject s relative to object o.

    Strict containment wins; otherwise the centroid offset s - o (y down)
    is classified into 8 sectors of 45 degrees with centers on the axes and
    diagonals. Sector-boundary ties resolve toward the pure axis relation.
    """
    if s.coords() == o.coords():
        raise GeometryError("relation between identical boxes is undefined")
    if _strictly_contains(s, o):
        return RelationType.SURROUNDING
    if _strictly_contains(o, s):
        return RelationType.INSIDE
    sx, sy = s.centroid
    ox, oy = o.centroid
    dx, dy = sx - ox, sy - oy
    adx, ady = abs(dx), abs(dy)
    if adx == 0.0 and ady == 0.0:
        # Same centroid, no containment: break the tie by comparing extents.
        dx = s.x_min - o.x_min
        dy = s.y_min - o.y_min
        adx, ady = abs(dx), abs(dy)
    if ady <= adx * _TAN_22_5:
        return RelationType.LEFT_OF if dx < 0 else RelationType.RIGHT_OF
    if adx <= ady * _TAN_22_5:
        return RelationType.ABOVE if dy < 0 else RelationType.BELOW
    if dx < 0:
        return RelationType.LEFT_ABOVE if dy < 0 else RelationType.LEFT_BELOW
    return RelationType.RIGHT_ABOVE if dy < 0 else RelationType.RIGHT_BELOW


def _strictly_contains(outer: BBox, inner: BBox) -> bool:
    return (
        outer.x_min < inner.x_min
        and outer.y_min < inner.y_min
        and outer.x_max > inner.x_max
        and outer.y_max > inner.y_max
    )


def relation_satisfied(s: BBox, o: BBox, rel: RelationType) -> bool:
    if s.coords() == o.coords():
        return False
    return classify_relation(s, o) is rel


def polygon_from_mask(mask: BoundaryMask) -> RectPolygon:
    """Trace the rectilinear outline of a mask (for mask-only imports).

    Walks the boundary of the filled region, emitting a corner wherever the
    walk direction changes. The mask must contain a single 4-connected
    rectilinear region.
    """
    grid = mask.grid
    h, w = grid.shape
    if not grid.any():
        raise GeometryError("empty mask")

    def filled(r, c):
        return 0 <= r < h and 0 <= c < w and bool(grid[r, c])

    def is_corner(r, c):
        n = filled(r - 1, c - 1) + filled(r - 1, c) + filled(r, c - 1) + filled(r, c)
        return n % 2 == 1

    def has_edge(p, d):
        # Boundary edge exists between lattice point p and p+d iff the two
        # pixels flanking that unit segment differ.
        r, c = p
        dr, dc = d
        if dr == 0:
            cc = c if dc > 0 else c - 1
            return filled(r - 1, cc) != filled(r, cc)
        rr = r if dr > 0 else r - 1
        return filled(rr, c - 1) != filled(rr, c)

    rows, cols = np.nonzero(grid)
    r0 = int(rows.min())
    c0 = int(cols[rows == r0].min())
    start = (r0, c0)
    corners = [start]
    pos = start
    direction = (0, 1)  # top-left corner always continues rightwards
    for _ in range(4 * (h + w) * (h + w)):
        r, c = pos
        dr, dc = direction
        if not has_edge(pos, direction):
            raise GeometryError("mask outline trace failed (no edge ahead)")
        pos = (r + dr, c + dc)
        if pos == start:
            break
        if is_corner(*pos):
            corners.append(pos)
            # Turn to the perpendicular direction that has a boundary edge.
            options = [(dc, dr), (-dc, -dr)]
            nxt = [d for d in options if has_edge(pos, d)]
            if len(nxt) != 1:
                raise GeometryError("ambiguous mask outline (region is not simple)")
            direction = nxt[0]
    else:
        raise GeometryError("mask outline trace failed to close")
    return RectPolygon([(c / mask.width, r / mask.height) for r, c in corners])
