"""Planar polygon kernel: rings, polygons with holes, region sets.

Boolean operations are delegated to GEOS (via shapely) in floating mode; on a
topology failure they are retried on a snap-rounded grid before giving up.
"""

from __future__ import annotations

import functools
import math
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np
import shapely
from shapely.errors import GEOSException
from shapely.geometry import MultiPolygon, Polygon
from shapely.geometry.base import BaseGeometry

DEFAULT_WORLD_WIDTH = 10000.0
# snap quantum for the robustness fallback, as a fraction of world width
QUANTUM_FRACTION = 2.0**-20
DEFAULT_QUANTUM = DEFAULT_WORLD_WIDTH * QUANTUM_FRACTION
DEFAULT_CIRCLE_VERTICES = 64


class GeometryError(ValueError):
    """Base class for invalid or failed geometry."""


class DegenerateGeometryError(GeometryError):
    """A ring or region with zero area, or too few vertices."""


class RobustnessError(GeometryError):
    """Overlay failed even after snap-rounding retries."""


class Point(NamedTuple):
    x: float
    y: float


class Mbr(NamedTuple):
    """Axis-aligned rectangle; `min`/`max` are the lower-left and upper-right corners."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @classmethod
    def square(cls, center: Sequence[float], half: float) -> Mbr:
        x, y = center
        return cls(x - half, y - half, x + half, y + half)

    @property
    def min(self) -> Point:
        return Point(self.xmin, self.ymin)

    @property
    def max(self) -> Point:
        return Point(self.xmax, self.ymax)

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    def intersects(self, other: Mbr) -> bool:
        return (
            self.xmin <= other.xmax
            and other.xmin <= self.xmax
            and self.ymin <= other.ymax
            and other.ymin <= self.ymax
        )

    def contains(self, other: Mbr) -> bool:
        return (
            self.xmin <= other.xmin
            and self.ymin <= other.ymin
            and self.xmax >= other.xmax
            and self.ymax >= other.ymax
        )

    def union(self, other: Mbr) -> Mbr:
        return Mbr(
            min(self.xmin, other.xmin),
            min(self.ymin, other.ymin),
            max(self.xmax, other.xmax),
            max(self.ymax, other.ymax),
        )

    def enlargement(self, other: Mbr) -> float:
        return self.union(other).area - self.area


def _signed_area(coords: np.ndarray) -> float:
    x = coords[:, 0]
    y = coords[:, 1]
    return 0.5 * float(x[:-1] @ y[1:] - x[1:] @ y[:-1] + x[-1] * y[0] - x[0] * y[-1])


class Ring:
    """Closed simple ring. Outer rings run counter-clockwise, holes clockwise."""

    __slots__ = ("coords", "hole", "_shape")

    def __init__(self, vertices: Iterable[Sequence[float]], hole: bool = False, *, check: bool = True):
        coords = np.asarray(vertices, dtype=float).reshape(-1, 2)
        if len(coords) > 1 and np.array_equal(coords[0], coords[-1]):
            coords = coords[:-1]
        if len(coords) < 3:
            raise DegenerateGeometryError(f"ring needs at least 3 vertices, got {len(coords)}")
        if not np.all(np.isfinite(coords)):
            raise GeometryError("ring has non-finite coordinates")
        signed = _signed_area(coords)
        if signed == 0.0:
            raise DegenerateGeometryError("ring has zero area")
        if (signed < 0) != hole:
            coords = coords[::-1].copy()
        if check and not shapely.LinearRing(coords).is_simple:
            raise GeometryError("ring is self-intersecting")
        self.coords = coords
        self.hole = hole
        self._shape: Polygon | None = None

    @property
    def vertices(self) -> list[Point]:
        return [Point(float(x), float(y)) for x, y in self.coords]

    def __len__(self) -> int:
        return len(self.coords)

    def __repr__(self) -> str:
        kind = "hole" if self.hole else "outer"
        return f"Ring({len(self.coords)} vertices, {kind})"

    def as_hole(self) -> Ring:
        return Ring(self.coords, hole=True, check=False)

    @classmethod
    def _trusted(cls, coords: np.ndarray) -> Ring:
        """Outer ring from coordinates already known to be simple and counter-clockwise."""
        self = cls.__new__(cls)
        self.coords = coords
        self.hole = False
        self._shape = None
        return self

    def to_shapely(self) -> Polygon:
        if self._shape is None:
            self._shape = shapely.polygons(self.coords)
        return self._shape


class PolygonWithHoles:
    """A connected region: one outer ring minus zero or more holes."""

    __slots__ = ("outer", "holes", "_shape")

    def __init__(self, outer: Ring, holes: Sequence[Ring] = (), *, shape: Polygon | None = None):
        self.outer = outer if not outer.hole else Ring(outer.coords, check=False)
        self.holes = tuple(h if h.hole else h.as_hole() for h in holes)
        self._shape = shape

    @classmethod
    def from_shapely(cls, poly: Polygon) -> PolygonWithHoles:
        outer = Ring(np.asarray(poly.exterior.coords), check=False)
        holes = [Ring(np.asarray(r.coords), hole=True, check=False) for r in poly.interiors]
        return cls(outer, holes, shape=poly)

    def to_shapely(self) -> Polygon:
        if self._shape is None:
            if not self.holes:
                self._shape = self.outer.to_shapely()
            else:
                self._shape = Polygon(self.outer.coords, [h.coords for h in self.holes])
        return self._shape

    def __repr__(self) -> str:
        return f"PolygonWithHoles(outer={len(self.outer)} vertices, holes={len(self.holes)})"


class RegionSet:
    """Pairwise-disjoint polygons with holes, backed by one shapely geometry."""

    __slots__ = ("_geom", "_parts", "_shapes")

    def __init__(self, parts: Iterable[PolygonWithHoles] = ()):
        parts = tuple(parts)
        self._parts: tuple[PolygonWithHoles, ...] | None = parts
        self._shapes: list[Polygon] | None = None
        if not parts:
            self._geom = Polygon()
        elif len(parts) == 1:
            self._geom = parts[0].to_shapely()
        else:
            self._geom = MultiPolygon([p.to_shapely() for p in parts])

    @classmethod
    def from_shapely(cls, geom: BaseGeometry) -> RegionSet:
        self = cls.__new__(cls)
        self._parts = None
        self._shapes = None
        if isinstance(geom, (Polygon, MultiPolygon)):
            self._geom = geom
        elif geom.geom_type in ("Polygon", "MultiPolygon"):
            self._geom = geom
        elif geom.is_empty:
            self._geom = Polygon()
        else:
            polys = [g for g in shapely.get_parts(geom) if g.geom_type == "Polygon" and not g.is_empty]
            polys.extend(
                p for g in shapely.get_parts(geom) if g.geom_type == "MultiPolygon" for p in g.geoms
            )
            self._geom = Polygon() if not polys else polys[0] if len(polys) == 1 else MultiPolygon(polys)
        return self

    @property
    def shape(self) -> BaseGeometry:
        return self._geom

    @property
    def parts(self) -> tuple[PolygonWithHoles, ...]:
        if self._parts is None:
            self._parts = tuple(PolygonWithHoles.from_shapely(p) for p in self.part_shapes())
        return self._parts

    def part_shapes(self) -> list[Polygon]:
        if self._shapes is None:
            g = self._geom
            if isinstance(g, Polygon):
                self._shapes = [] if g.is_empty else [g]
            else:
                self._shapes = [p for p in g.geoms if not p.is_empty]
        return self._shapes

    def __len__(self) -> int:
        return len(self.part_shapes())

    def has_holes(self) -> bool:
        return bool(shapely.get_num_interior_rings(self.part_shapes()).any())

    @property
    def is_empty(self) -> bool:
        return not self.part_shapes()

    @property
    def area(self) -> float:
        return float(self._geom.area)

    def __repr__(self) -> str:
        return f"RegionSet(parts={len(self)}, area={self.area:.6g})"


Geometry = Union[Ring, PolygonWithHoles, RegionSet]


def as_region(g: Geometry | BaseGeometry) -> RegionSet:
    if isinstance(g, RegionSet):
        return g
    if isinstance(g, BaseGeometry):
        return RegionSet.from_shapely(g)
    return RegionSet([g if isinstance(g, PolygonWithHoles) else PolygonWithHoles(g)])


def _shape(g: Geometry | BaseGeometry) -> BaseGeometry:
    if isinstance(g, BaseGeometry):
        return g
    if isinstance(g, RegionSet):
        return g.shape
    return g.to_shapely()


def area(g: Geometry) -> float:
    """Area of a ring, a polygon with holes (outer minus holes) or a region set (sum of parts)."""
    if isinstance(g, Ring):
        return abs(_signed_area(g.coords))
    if isinstance(g, PolygonWithHoles):
        return area(g.outer) - sum(area(h) for h in g.holes)
    return float(g.shape.area)


def outer_area(g: PolygonWithHoles | RegionSet) -> float:
    """Area enclosed by the outer ring(s) only, holes ignored."""
    if isinstance(g, PolygonWithHoles):
        return area(g.outer)
    return g.area + sum(hole_areas(g))


def hole_areas(g: PolygonWithHoles | RegionSet) -> list[float]:
    if isinstance(g, PolygonWithHoles):
        return [area(h) for h in g.holes]
    parts = g.part_shapes()
    counts = shapely.get_num_interior_rings(parts)
    if not counts.any():
        return []
    rings = [r for p, n in zip(parts, counts) if n for r in p.interiors]
    return [float(a) for a in shapely.area(shapely.polygons(rings))]


def mbr(g: Geometry | BaseGeometry) -> Mbr:
    if isinstance(g, Ring):
        lo = g.coords.min(axis=0)
        hi = g.coords.max(axis=0)
        return Mbr(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))
    if isinstance(g, PolygonWithHoles):
        return mbr(g.outer)
    bounds = _shape(g).bounds
    if not bounds or math.isnan(bounds[0]):
        raise DegenerateGeometryError("empty region has no bounding rectangle")
    return Mbr(*bounds)


def span(g: Geometry | BaseGeometry) -> float:
    """Larger side of the bounding rectangle."""
    box = mbr(g)
    return max(box.width, box.height)


def _overlay(op, a: BaseGeometry, b: BaseGeometry, quantum: float) -> BaseGeometry:
    try:
        return op(a, b)
    except GEOSException:
        pass
    for scale in (1.0, 4.0, 16.0):
        try:
            return op(a, b, grid_size=quantum * scale)
        except GEOSException:
            continue
    raise RobustnessError(f"{op.__name__} failed after snap-rounding retries")


def intersect(a: Geometry, b: Geometry, quantum: float = DEFAULT_QUANTUM) -> RegionSet:
    return RegionSet.from_shapely(_overlay(shapely.intersection, _shape(a), _shape(b), quantum))


def difference(a: Geometry, b: Geometry | Sequence[Geometry], quantum: float = DEFAULT_QUANTUM) -> RegionSet:
    """`a` minus `b`; `b` may be a sequence, in which case its union is subtracted."""
    if isinstance(b, (list, tuple)):
        if not b:
            return as_region(a)
        other = _shape(b[0]) if len(b) == 1 else shapely.union_all([_shape(x) for x in b])
    else:
        other = _shape(b)
    return RegionSet.from_shapely(_overlay(shapely.difference, _shape(a), other, quantum))


def union(gs: Sequence[Geometry], quantum: float = DEFAULT_QUANTUM) -> RegionSet:
    if not gs:
        return RegionSet()
    try:
        merged = shapely.union_all([_shape(g) for g in gs])
    except GEOSException:
        merged = shapely.union_all([_shape(g) for g in gs], grid_size=quantum)
    return RegionSet.from_shapely(merged)


def interiors_intersect(a: Geometry | BaseGeometry, b: Geometry | BaseGeometry) -> bool:
    """True when the two regions share positive area (touching boundaries do not count)."""
    sa, sb = _shape(a), _shape(b)
    if sa.is_empty or sb.is_empty:
        return False
    return bool(shapely.relate_pattern(sa, sb, "T********"))


def contains_point(g: Geometry, p: Sequence[float]) -> bool:
    """Boundary-inclusive point membership."""
    return bool(shapely.intersects_xy(_shape(g), p[0], p[1]))


def contains_points(g: Geometry | BaseGeometry, xy: np.ndarray) -> np.ndarray:
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    return np.asarray(shapely.intersects_xy(_shape(g), xy[:, 0], xy[:, 1]), dtype=bool)


def circle_polygon(center: Sequence[float], radius: float, n: int = DEFAULT_CIRCLE_VERTICES) -> Ring:
    """Regular n-gon inscribed in the circle, first vertex on the +x axis."""
    if radius <= 0:
        raise GeometryError("radius must be positive")
    if n < 3:
        raise GeometryError("need at least 3 vertices")
    return Ring._trusted(_unit_circle(n) * radius + np.asarray(center, dtype=float))


@functools.lru_cache(maxsize=16)
def _unit_circle(n: int) -> np.ndarray:
    t = np.arange(n) * (2.0 * math.pi / n)
    out = np.column_stack((np.cos(t), np.sin(t)))
    out.flags.writeable = False
    return out


def rectangle(xmin: float, ymin: float, xmax: float, ymax: float) -> Ring:
    return Ring([(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)], check=False)


def _ring_text(coords: np.ndarray) -> str:
    # repr gives the shortest text that parses back to the same double
    pts = [f"{float(x)!r} {float(y)!r}" for x, y in coords]
    pts.append(pts[0])
    return "(" + ", ".join(pts) + ")"


def _polygon_text(p: Polygon) -> str:
    rings = [p.exterior, *p.interiors]
    return "(" + ", ".join(_ring_text(np.asarray(r.coords)[:-1]) for r in rings) + ")"


def to_wkt(g: Geometry) -> str:
    """WKT with coordinates that round-trip exactly."""
    if isinstance(g, Ring):
        return "LINEARRING " + _ring_text(g.coords)
    if isinstance(g, PolygonWithHoles):
        return "POLYGON " + _polygon_text(g.to_shapely())
    parts = g.part_shapes()
    if not parts:
        return "MULTIPOLYGON EMPTY"
    return "MULTIPOLYGON (" + ", ".join(_polygon_text(p) for p in parts) + ")"


def from_wkt(text: str) -> Geometry:
    """Parse LINEARRING, POLYGON or MULTIPOLYGON text into Ring, PolygonWithHoles, RegionSet."""
    try:
        geom = shapely.from_wkt(text)
    except GEOSException as exc:
        raise GeometryError(f"bad WKT: {exc}") from exc
    kind = geom.geom_type
    if kind == "LinearRing":
        return Ring(np.asarray(geom.coords))
    if kind == "Polygon":
        outer = Ring(np.asarray(geom.exterior.coords))
        return PolygonWithHoles(outer, [Ring(np.asarray(r.coords), hole=True) for r in geom.interiors])
    if kind == "MultiPolygon":
        return RegionSet.from_shapely(geom)
    raise GeometryError(f"unsupported WKT geometry {kind}")
