"""Exact planar geometry shared by conversion and evaluation.

Coordinate frame: origin top-left, x rightward, y downward (image pixels).
Winding is normalized on construction so the shoelace signed area is
positive; the first vertex is kept in place so token round-trips preserve
vertex order. Self-intersecting polygons are rejected at construction.

All values are immutable and all operations are pure functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DegeneratePolygon, GeometryError

Point = tuple[float, float]

_AREA_EPS = 1e-12


def _check_finite(coords: Iterable[float], what: str) -> None:
    for c in coords:
        if not math.isfinite(c):
            raise GeometryError(f"{what} has non-finite coordinate {c!r}")


def shoelace(points: Sequence[Point]) -> float:
    """Signed shoelace area (positive for our normalized winding)."""
    n = len(points)
    acc = 0.0
    for i in range(n):
        x1, y1 = points[i]
        x2, y2 = points[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return 0.5 * acc


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    """True if closed segments p1p2 and q1q2 share any point."""
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True

    def on_segment(a: Point, b: Point, c: Point) -> bool:
        return (
            min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
        )

    if d1 == 0 and on_segment(q1, q2, p1):
        return True
    if d2 == 0 and on_segment(q1, q2, p2):
        return True
    if d3 == 0 and on_segment(p1, p2, q1):
        return True
    if d4 == 0 and on_segment(p1, p2, q2):
        return True
    return False


def _validate_ring(points: Sequence[Point], what: str) -> tuple[Point, ...]:
    """Validate a simple ring with positive area; normalize winding.

    The first vertex stays first; only the traversal direction may flip.
    """
    pts = [(float(x), float(y)) for x, y in points]
    _check_finite((c for p in pts for c in p), what)
    if len(pts) < 3:
        raise DegeneratePolygon(f"{what} needs at least 3 vertices, got {len(pts)}")
    for i in range(len(pts)):
        if pts[i] == pts[(i + 1) % len(pts)]:
            raise DegeneratePolygon(f"{what} has duplicate consecutive vertex {pts[i]}")
    area = shoelace(pts)
    if abs(area) <= _AREA_EPS:
        raise DegeneratePolygon(f"{what} has zero area")
    n = len(pts)
    for i in range(n):
        a, b, c = pts[i], pts[(i + 1) % n], pts[(i + 2) % n]
        if _cross(a, b, c) == 0:
            # collinear corner: forward continuation is fine, backtrack is a spike
            if (c[0] - b[0]) * (b[0] - a[0]) + (c[1] - b[1]) * (b[1] - a[1]) < 0:
                raise DegeneratePolygon(f"{what} backtracks at vertex {b}")
    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            b1, b2 = pts[j], pts[(j + 1) % n]
            if _segments_intersect(a1, a2, b1, b2):
                raise DegeneratePolygon(
                    f"{what} self-intersects between edges {i} and {j}"
                )
    if area < 0:
        pts = [pts[0]] + pts[:0:-1]
    return tuple(pts)


@dataclass(frozen=True)
class HBB:
    """Horizontal (axis-aligned) bounding box, two corner points."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        _check_finite((self.x_min, self.y_min, self.x_max, self.y_max), "HBB")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise GeometryError(
                f"inverted HBB ({self.x_min},{self.y_min},{self.x_max},{self.y_max})"
            )
        if self.x_min < 0 or self.y_min < 0:
            raise GeometryError(
                f"HBB with negative coordinate ({self.x_min},{self.y_min})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def corners(self) -> tuple[Point, Point, Point, Point]:
        return (
            (self.x_min, self.y_min),
            (self.x_max, self.y_min),
            (self.x_max, self.y_max),
            (self.x_min, self.y_max),
        )

    def to_polygon(self) -> "Polygon":
        return Polygon(self.corners())


@dataclass(frozen=True)
class Quad:
    """Oriented box as four vertices, simple, winding-normalized."""

    points: tuple[Point, Point, Point, Point]

    def __post_init__(self) -> None:
        if len(self.points) != 4:
            raise GeometryError(f"Quad needs 4 vertices, got {len(self.points)}")
        object.__setattr__(self, "points", _validate_ring(self.points, "Quad"))

    @property
    def area(self) -> float:
        return shoelace(self.points)

    def to_polygon(self) -> "Polygon":
        return Polygon(self.points)


@dataclass(frozen=True)
class Polygon:
    """Simple polygon with at least 3 vertices and positive area."""

    points: tuple[Point, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", _validate_ring(self.points, "Polygon"))

    @property
    def area(self) -> float:
        return shoelace(self.points)


Geometry = HBB | Quad | Polygon


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Bit-per-pixel occupancy grid, row-major (height, width)."""

    width: int
    height: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"mask size {self.width}x{self.height} invalid")
        if self.data.shape != (self.height, self.width):
            raise GeometryError(
                f"mask data shape {self.data.shape} != ({self.height},{self.width})"
            )
        if self.data.dtype != np.bool_:
            object.__setattr__(self, "data", self.data.astype(bool))

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(width, height, np.zeros((height, width), dtype=bool))

    def popcount(self) -> int:
        return int(self.data.sum())


def polygon_area(p: Polygon) -> float:
    """Area in square pixels; invariant under vertex rotation and reversal."""
    return abs(shoelace(p.points))


def aabb_of(p: Polygon | Quad) -> HBB:
    """Smallest axis-aligned box containing every vertex."""
    xs = [v[0] for v in p.points]
    ys = [v[1] for v in p.points]
    return HBB(min(xs), min(ys), max(xs), max(ys))


def convex_hull(points: Sequence[Point]) -> list[Point]:
    """Convex hull (monotone chain); collinear boundary points dropped.

    Returned hull has positive shoelace orientation in the image frame.
    """
    pts = sorted(set((float(x), float(y)) for x, y in points))
    if len(pts) < 3:
        raise DegeneratePolygon(f"hull of {len(pts)} distinct points")

    def build(seq: list[Point]) -> list[Point]:
        out: list[Point] = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = build(pts)
    upper = build(pts[::-1])
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegeneratePolygon("all points collinear")
    # monotone chain with y-up convention yields CCW; our y grows downward,
    # so flip to keep shoelace positive
    if shoelace(hull) < 0:
        hull = [hull[0]] + hull[:0:-1]
    return hull


def min_area_rect(p: Polygon | Quad) -> Quad:
    """Minimum-area enclosing rectangle of the convex hull.

    One side of the result is collinear with a hull edge; its area is never
    larger than the axis-aligned box's.
    """
    hull = convex_hull(p.points)
    n = len(hull)
    best: tuple[float, Point, Point, Point, Point] | None = None
    for i in range(n):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        norm = math.hypot(ex, ey)
        ux, uy = ex / norm, ey / norm
        vx, vy = -uy, ux
        smin = smax = tmin = tmax = 0.0
        first = True
        for qx, qy in hull:
            dx, dy = qx - ax, qy - ay
            s = dx * ux + dy * uy
            t = dx * vx + dy * vy
            if first:
                smin = smax = s
                tmin = tmax = t
                first = False
            else:
                smin = min(smin, s)
                smax = max(smax, s)
                tmin = min(tmin, t)
                tmax = max(tmax, t)
        area = (smax - smin) * (tmax - tmin)
        if best is None or area < best[0]:
            c0 = (ax + ux * smin + vx * tmin, ay + uy * smin + vy * tmin)
            c1 = (ax + ux * smax + vx * tmin, ay + uy * smax + vy * tmin)
            c2 = (ax + ux * smax + vx * tmax, ay + uy * smax + vy * tmax)
            c3 = (ax + ux * smin + vx * tmax, ay + uy * smin + vy * tmax)
            best = (area, c0, c1, c2, c3)
    assert best is not None
    return Quad(best[1:])


def iou_hbb(a: HBB, b: HBB) -> float:
    """Intersection over union of two axis-aligned boxes, in [0, 1]."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def is_convex(points: Sequence[Point]) -> bool:
    """True if the ring never makes a right turn (given positive winding)."""
    n = len(points)
    scale = max(abs(c) for p in points for c in p) or 1.0
    tol = -1e-9 * scale * scale
    for i in range(n):
        if _cross(points[i], points[(i + 1) % n], points[(i + 2) % n]) < tol:
            return False
    return True


def clip_convex(subject: Sequence[Point], clip: Sequence[Point]) -> list[Point]:
    """Sutherland-Hodgman clip of a convex subject by a convex clip region.

    Both rings must have positive winding. May return fewer than 3 points
    when the intersection is empty or degenerate.
    """
    output = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            return []
        a = clip[i]
        b = clip[(i + 1) % n]
        inputs = output
        output = []
        s = inputs[-1]
        s_in = _cross(a, b, s) >= 0
        for e in inputs:
            e_in = _cross(a, b, e) >= 0
            if e_in != s_in:
                # edge crossing: intersect segment se with line ab
                x1, y1 = s
                x2, y2 = e
                x3, y3 = a
                x4, y4 = b
                denom = (x1 - x2) * (y3 - y4) - (y1 - y2) * (x3 - x4)
                if denom != 0:
                    t = ((x1 - x3) * (y3 - y4) - (y1 - y3) * (x3 - x4)) / denom
                    output.append((x1 + t * (x2 - x1), y1 + t * (y2 - y1)))
            if e_in:
                output.append(e)
            s, s_in = e, e_in
    return output


def _as_convex_ring(g: Quad | Polygon, convexify: bool) -> list[Point]:
    pts = list(g.points)
    if is_convex(pts):
        return pts
    if convexify:
        return convex_hull(pts)
    raise GeometryError("non-convex input; pass convexify=True to take the hull")


def iou_convex(a: Quad | Polygon, b: Quad | Polygon, convexify: bool = False) -> float:
    """IoU of two convex shapes via polygon clipping, in [0, 1]."""
    ra = _as_convex_ring(a, convexify)
    rb = _as_convex_ring(b, convexify)
    inter_ring = clip_convex(ra, rb)
    inter = abs(shoelace(inter_ring)) if len(inter_ring) >= 3 else 0.0
    area_a = abs(shoelace(ra))
    area_b = abs(shoelace(rb))
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def _fill_parity(poly: Polygon, width: int, height: int) -> tuple[np.ndarray, int, int, int, int]:
    """Even-odd parity of pixel centers inside one polygon, over its bbox."""
    xs = [v[0] for v in poly.points]
    ys = [v[1] for v in poly.points]
    col0 = max(0, int(math.floor(min(xs) - 0.5)))
    col1 = min(width, int(math.ceil(max(xs) + 0.5)))
    row0 = max(0, int(math.floor(min(ys) - 0.5)))
    row1 = min(height, int(math.ceil(max(ys) + 0.5)))
    if col0 >= col1 or row0 >= row1:
        return np.zeros((0, 0), dtype=bool), row0, row0, col0, col0
    cx = np.arange(col0, col1, dtype=np.float64) + 0.5
    cy = (np.arange(row0, row1, dtype=np.float64) + 0.5)[:, None]
    parity = np.zeros((row1 - row0, col1 - col0), dtype=bool)
    pts = poly.points
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > cy) != (y2 > cy)  # (rows, 1)
        with np.errstate(invalid="ignore"):
            xi = x1 + (cy - y1) * (x2 - x1) / (y2 - y1)
        hit = crosses & (cx[None, :] < xi)
        parity ^= hit
    return parity, row0, row1, col0, col1


def rasterize(shapes: Sequence[Polygon], width: int, height: int) -> BinaryMask:
    """Mask with a pixel set iff its center (i+0.5, j+0.5) lies inside any
    polygon under the even-odd rule."""
    if width < 1 or height < 1:
        raise GeometryError(f"raster size {width}x{height} invalid")
    mask = np.zeros((height, width), dtype=bool)
    for poly in shapes:
        parity, r0, r1, c0, c1 = _fill_parity(poly, width, height)
        if parity.size:
            mask[r0:r1, c0:c1] |= parity
    return BinaryMask(width, height, mask)
