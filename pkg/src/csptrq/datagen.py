"""Synthetic workloads, CSV loaders and dataset files."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import shapely

from .geometry import DEFAULT_WORLD_WIDTH, Mbr, Point, Ring, circle_polygon, contains_point, from_wkt, rectangle, to_wkt
from .model import DistortedGaussian, MovingObject, PdfKind, QueryRange, RestrictedArea, Uniform

log = logging.getLogger(__name__)

SHAPES = ("Sq", "Ta", "Dm", "Tz", "Cc")
REGULAR = "Rg"  # regular psi-gon, used when sweeping the number of query edges

# vertex templates in units of L, origin at the lower-left corner of the bounding box
_TEMPLATES = {
    "Sq": [(0, 0), (1, 0), (1, 1), (0, 1)],
    "Ta": [(0, 0), (1, 0), (1 / 2, 1)],
    "Tz": [(0, 0), (1, 0), (2 / 3, 1), (1 / 3, 1)],
    "Dm": [
        (1 / 2, 0), (2 / 3, 1 / 3), (1, 1 / 2), (2 / 3, 2 / 3),
        (1 / 2, 1), (1 / 3, 2 / 3), (0, 1 / 2), (1 / 3, 1 / 3),
    ],
    "Cc": [
        (1 / 3, 0), (2 / 3, 0), (2 / 3, 1 / 3), (1, 1 / 3), (1, 2 / 3), (2 / 3, 2 / 3),
        (2 / 3, 1), (1 / 3, 1), (1 / 3, 2 / 3), (0, 2 / 3), (0, 1 / 3), (1 / 3, 1 / 3),
    ],
}


class PlacementError(RuntimeError):
    """Could not place the requested number of disjoint items."""


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadSpec:
    N: int = 5000
    M: int = 5000
    zeta: int = 4
    tau_range: tuple[float, float] = (20.0, 50.0)
    psi: int = 4
    epsilon: float = 500.0
    eta: str = "Sq"
    seed: int = 0
    width: float = DEFAULT_WORLD_WIDTH
    area_shape: str = "rect"  # "rect" (40 x 10) or "regular" (zeta-gon, circumradius 20)
    rect_size: tuple[float, float] = (40.0, 10.0)
    regular_radius: float = 20.0
    pdf: str = "UD"
    max_tries: int = 200

    def __post_init__(self):
        if self.N < 0 or self.M < 0:
            raise ValueError("counts must be non-negative")
        if self.eta not in SHAPES and self.eta != REGULAR:
            raise ValueError(f"unknown query shape {self.eta!r}")
        if self.area_shape not in ("rect", "regular"):
            raise ValueError(f"unknown area shape {self.area_shape!r}")
        if self.pdf not in ("UD", "DG"):
            raise ValueError(f"unknown pdf {self.pdf!r}")
        lo, hi = self.tau_range
        if not 0 < lo <= hi:
            raise ValueError("bad tau range")

    def pdf_kind(self) -> PdfKind:
        return Uniform() if self.pdf == "UD" else DistortedGaussian()


class _Grid:
    """Uniform bucket grid over rectangles, for overlap candidate lookup."""

    def __init__(self, width: float, cell: float):
        self.cell = cell
        self.buckets: dict[tuple[int, int], list[int]] = {}

    def _cells(self, box: Sequence[float]):
        c = self.cell
        for i in range(int(box[0] // c), int(box[2] // c) + 1):
            for j in range(int(box[1] // c), int(box[3] // c) + 1):
                yield i, j

    def add(self, key: int, box: Sequence[float]) -> None:
        for cell in self._cells(box):
            self.buckets.setdefault(cell, []).append(key)

    def near(self, box: Sequence[float]) -> set[int]:
        out: set[int] = set()
        for cell in self._cells(box):
            out.update(self.buckets.get(cell, ()))
        return out


def _area_template(spec: WorkloadSpec) -> np.ndarray:
    if spec.area_shape == "rect":
        w, h = spec.rect_size
        return np.array([(-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)])
    return circle_polygon((0.0, 0.0), spec.regular_radius, spec.zeta).coords


def gen_restricted_areas(spec: WorkloadSpec) -> list[RestrictedArea]:
    """M pairwise-disjoint copies of the area template placed uniformly in the world."""
    rng = np.random.default_rng([spec.seed, 1])
    template = _area_template(spec)
    lo = template.min(axis=0)
    hi = template.max(axis=0)
    exact = spec.area_shape != "rect"
    grid = _Grid(spec.width, max(float((hi - lo).max()) * 2, 1.0))
    boxes: list[Mbr] = []
    shapes: list = []
    areas: list[RestrictedArea] = []
    for k in range(spec.M):
        for _ in range(spec.max_tries):
            cx = rng.uniform(-lo[0], spec.width - hi[0])
            cy = rng.uniform(-lo[1], spec.width - hi[1])
            box = Mbr(cx + lo[0], cy + lo[1], cx + hi[0], cy + hi[1])
            clash = False
            for j in grid.near(box):
                if boxes[j].intersects(box):
                    if not exact:
                        clash = True
                        break
                    cand = shapely.Polygon(template + (cx, cy))
                    if cand.intersects(shapes[j]):
                        clash = True
                        break
            if not clash:
                break
        else:
            raise PlacementError(f"placed {k} of {spec.M} disjoint restricted areas")
        ring = Ring(template + (cx, cy), check=False)
        boxes.append(box)
        shapes.append(ring.to_shapely())
        grid.add(k, box)
        areas.append(RestrictedArea(k, ring))
    return areas


def _area_lookup(areas: Sequence[RestrictedArea], width: float):
    if not areas:
        return lambda x, y: False
    cell = max(max(r.mbr.width, r.mbr.height) for r in areas) * 2
    grid = _Grid(width, cell)
    for k, r in enumerate(areas):
        grid.add(k, r.mbr)

    def blocked(x: float, y: float) -> bool:
        for k in grid.near((x, y, x, y)):
            b = areas[k].mbr
            if b.xmin <= x <= b.xmax and b.ymin <= y <= b.ymax and contains_point(areas[k].shape, (x, y)):
                return True
        return False

    return blocked


def gen_objects(spec: WorkloadSpec, areas: Sequence[RestrictedArea]) -> list[MovingObject]:
    """N objects uniform over the world outside every area; tau uniform in the range."""
    rng = np.random.default_rng([spec.seed, 2])
    blocked = _area_lookup(areas, spec.width)
    pdf = spec.pdf_kind()
    out = []
    for k in range(spec.N):
        for _ in range(spec.max_tries):
            x, y = rng.uniform(0.0, spec.width, 2)
            if not blocked(x, y):
                break
        else:
            raise PlacementError(f"no free location found for object {k}")
        tau = rng.uniform(*spec.tau_range)
        out.append(MovingObject(k, Point(float(x), float(y)), float(tau), pdf))
    return out


def free_location_sampler(areas: Sequence[RestrictedArea], width: float, tries: int = 1000):
    """Returns ``draw(rng) -> Point``, uniform over the world outside every area."""
    blocked = _area_lookup(areas, width)

    def draw(rng: np.random.Generator) -> Point:
        for _ in range(tries):
            x, y = rng.uniform(0.0, width, 2)
            if not blocked(x, y):
                return Point(float(x), float(y))
        raise PlacementError("no free location found")

    return draw


def query_shape(eta: str, x: float, y: float, size: float, psi: int = 4) -> Ring:
    """Query polygon whose bounding box has lower-left corner (x, y) and side ``size``."""
    if eta == REGULAR:
        r = size / 2.0
        return circle_polygon((x + r, y + r), r, psi)
    try:
        template = _TEMPLATES[eta]
    except KeyError:
        raise ValueError(f"unknown query shape {eta!r}") from None
    return Ring([(x + a * size, y + b * size) for a, b in template])


def gen_query_range(spec: WorkloadSpec, rng: np.random.Generator) -> QueryRange:
    size = spec.epsilon
    x, y = rng.uniform(0.0, spec.width - size, 2)
    return QueryRange(query_shape(spec.eta, float(x), float(y), size, spec.psi))


# -- external data ----------------------------------------------------------------


def _read_rows(path: str | Path, ncols: int) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) != ncols:
                raise DatasetError(f"{path}:{lineno}: expected {ncols} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                if not rows and lineno == 1:
                    continue  # header
                raise DatasetError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DatasetError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, ncols)


def _normalize(values: np.ndarray, lo: float, hi: float, width: float) -> np.ndarray:
    if hi == lo:
        return np.full_like(values, width / 2.0)
    return (values - lo) / (hi - lo) * width


def load_points(path: str | Path, width: float = DEFAULT_WORLD_WIDTH) -> np.ndarray:
    """x,y rows min-max normalised per axis onto [0, width]."""
    pts = _read_rows(path, 2)
    if len(pts) == 0:
        return pts
    out = np.empty_like(pts)
    for a in range(2):
        out[:, a] = _normalize(pts[:, a], pts[:, a].min(), pts[:, a].max(), width)
    return out


def load_rects(path: str | Path, width: float = DEFAULT_WORLD_WIDTH, drop_overlapping: bool = True) -> list[RestrictedArea]:
    """xmin,ymin,xmax,ymax rows normalised onto the world; degenerate rectangles are skipped.

    Rectangles overlapping an earlier kept one are dropped unless
    ``drop_overlapping`` is False.
    """
    rows = _read_rows(path, 4)
    if len(rows) == 0:
        return []
    xs = rows[:, [0, 2]]
    ys = rows[:, [1, 3]]
    xs = _normalize(xs, xs.min(), xs.max(), width)
    ys = _normalize(ys, ys.min(), ys.max(), width)
    areas: list[RestrictedArea] = []
    grid = _Grid(width, width / 256)
    degenerate = overlapping = 0
    for k in range(len(rows)):
        x0, x1 = sorted(xs[k])
        y0, y1 = sorted(ys[k])
        if x1 <= x0 or y1 <= y0:
            degenerate += 1
            continue
        box = Mbr(x0, y0, x1, y1)
        if drop_overlapping and any(areas[j].mbr.intersects(box) for j in grid.near(box)):
            overlapping += 1
            continue
        grid.add(len(areas), box)
        areas.append(RestrictedArea(len(areas), rectangle(x0, y0, x1, y1)))
    if degenerate or overlapping:
        log.info("%s: skipped %d degenerate and %d overlapping rectangles", path, degenerate, overlapping)
    return areas


def objects_from_points(
    points: np.ndarray, areas: Sequence[RestrictedArea], spec: WorkloadSpec
) -> list[MovingObject]:
    """Objects at the given locations (those inside an area are dropped), tau drawn from the spec."""
    rng = np.random.default_rng([spec.seed, 3])
    blocked = _area_lookup(areas, spec.width)
    pdf = spec.pdf_kind()
    out = []
    for x, y in points:
        tau = rng.uniform(*spec.tau_range)
        if blocked(x, y):
            continue
        out.append(MovingObject(len(out), Point(float(x), float(y)), float(tau), pdf))
    return out


# -- dataset files -----------------------------------------------------------------

OBJECTS_FILE = "objects.csv"
AREAS_FILE = "areas.csv"
MANIFEST_FILE = "manifest.json"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_dataset(
    directory: str | Path,
    objects: Sequence[MovingObject],
    areas: Sequence[RestrictedArea],
    spec: WorkloadSpec | None = None,
) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / OBJECTS_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "tau", "pdf", "sigma"])
        for o in objects:
            sigma = o.pdf.sigma if isinstance(o.pdf, DistortedGaussian) else None
            w.writerow([o.id, repr(o.location.x), repr(o.location.y), repr(o.tau),
                        "UD" if isinstance(o.pdf, Uniform) else "DG", "" if sigma is None else repr(sigma)])
    with open(d / AREAS_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "wkt"])
        for r in areas:
            w.writerow([r.id, to_wkt(r.shape)])
    manifest = {
        "spec": asdict(spec) if spec is not None else None,
        "objects": len(objects),
        "areas": len(areas),
        "sha256": {name: _sha256(d / name) for name in (OBJECTS_FILE, AREAS_FILE)},
    }
    (d / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def read_dataset(directory: str | Path, verify: bool = True) -> tuple[list[MovingObject], list[RestrictedArea], dict]:
    d = Path(directory)
    manifest = json.loads((d / MANIFEST_FILE).read_text()) if (d / MANIFEST_FILE).exists() else {}
    if verify and manifest.get("sha256"):
        for name, digest in manifest["sha256"].items():
            if _sha256(d / name) != digest:
                raise DatasetError(f"{d / name}: checksum mismatch")
    objects = []
    with open(d / OBJECTS_FILE, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                pdf = Uniform() if row["pdf"] == "UD" else DistortedGaussian(float(row["sigma"]) if row["sigma"] else None)
                objects.append(MovingObject(int(row["id"]), Point(float(row["x"]), float(row["y"])), float(row["tau"]), pdf))
            except (KeyError, ValueError) as exc:
                raise DatasetError(f"{d / OBJECTS_FILE}:{lineno}: {exc}") from exc
    areas = []
    with open(d / AREAS_FILE, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                ring = from_wkt(row["wkt"])
                if not isinstance(ring, Ring):
                    raise DatasetError("restricted area must be a LINEARRING")
                areas.append(RestrictedArea(int(row["id"]), ring))
            except (KeyError, ValueError) as exc:
                raise DatasetError(f"{d / AREAS_FILE}:{lineno}: {exc}") from exc
    return objects, areas, manifest


def validate_dataset(objects: Sequence[MovingObject], areas: Sequence[RestrictedArea], width: float) -> list[str]:
    """Problems found: overlapping areas, objects inside areas or outside the world."""
    problems = []
    tree = shapely.STRtree([r.shape.to_shapely() for r in areas]) if areas else None
    if tree is not None:
        left, right = tree.query([r.shape.to_shapely() for r in areas], predicate="intersects")
        for i, j in zip(left, right):
            if i < j:
                problems.append(f"restricted areas {areas[i].id} and {areas[j].id} intersect")
    for o in objects:
        x, y = o.location
        if not (0 <= x <= width and 0 <= y <= width):
            problems.append(f"object {o.id} lies outside the world")
        if tree is not None:
            hits = tree.query(shapely.Point(x, y), predicate="intersects")
            if len(hits):
                problems.append(f"object {o.id} lies inside restricted area {areas[hits[0]].id}")
    return problems
