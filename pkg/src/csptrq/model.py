"""Domain entities: moving objects, restricted areas, queries and world settings."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .geometry import (
    DEFAULT_CIRCLE_VERTICES,
    DEFAULT_WORLD_WIDTH,
    QUANTUM_FRACTION,
    Mbr,
    Point,
    RegionSet,
    Ring,
    circle_polygon,
    intersect,
    mbr,
    rectangle,
)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Uniform:
    """Location uniformly distributed over the uncertainty region."""


@dataclass(frozen=True)
class DistortedGaussian:
    """Isotropic Gaussian kernel centred on the recorded location, cut to the uncertainty region.

    ``sigma=None`` means one fifth of the object's distance threshold.
    """

    sigma: float | None = None

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise ModelError("sigma must be positive")


PdfKind = Union[Uniform, DistortedGaussian]


@dataclass(frozen=True)
class MovingObject:
    id: int
    location: Point
    tau: float
    pdf: PdfKind = Uniform()

    def __post_init__(self):
        if not self.tau > 0:
            raise ModelError(f"object {self.id}: tau must be positive")
        object.__setattr__(self, "location", Point(float(self.location[0]), float(self.location[1])))

    @property
    def square(self) -> Mbr:
        """The 2tau x 2tau index rectangle centred on the recorded location."""
        return Mbr.square(self.location, self.tau)

    def sigma(self) -> float:
        if isinstance(self.pdf, DistortedGaussian) and self.pdf.sigma is not None:
            return self.pdf.sigma
        return self.tau / 5.0

    def moved(self, location: Sequence[float]) -> MovingObject:
        return MovingObject(self.id, Point(*location), self.tau, self.pdf)


@dataclass(frozen=True)
class RestrictedArea:
    id: int
    shape: Ring

    @property
    def mbr(self) -> Mbr:
        return mbr(self.shape)


@dataclass(frozen=True)
class QueryRange:
    shape: Ring

    @property
    def mbr(self) -> Mbr:
        return mbr(self.shape)

    @property
    def edges(self) -> int:
        return len(self.shape)


class Mode(enum.Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"


@dataclass(frozen=True)
class Query:
    range: QueryRange
    p_t: float
    mode: Mode = Mode.EXPLICIT

    def __post_init__(self):
        if not 0.0 <= self.p_t <= 1.0:
            raise ModelError("p_t must lie in [0, 1]")


# default error bounds: 7 versions over N1 = 700 points
DEFAULT_DELTAS = (0.3607, 0.2499, 0.2131, 0.1921, 0.1504, 0.1067, 0.0095)


@dataclass(frozen=True)
class DeltaTable:
    """Workload error per coarse version; ``deltas[k]`` belongs to version k+1."""

    deltas: tuple[float, ...]
    n1: int = 700

    def __post_init__(self):
        deltas = tuple(float(d) for d in self.deltas)
        object.__setattr__(self, "deltas", deltas)
        if not deltas:
            raise ModelError("delta table is empty")
        if any(d < 0 for d in deltas):
            raise ModelError("workload errors must be non-negative")
        if any(b > a for a, b in zip(deltas, deltas[1:])):
            raise ModelError(f"workload errors must be nonincreasing in version: {deltas}")
        if self.n1 < len(deltas):
            raise ModelError("N1 must be at least the number of versions")

    @classmethod
    def standard(cls) -> DeltaTable:
        return cls(DEFAULT_DELTAS, 700)

    @property
    def theta(self) -> int:
        return len(self.deltas)

    def samples(self, k: int) -> int:
        """Cumulative sample count of version k (1-based)."""
        return (k * self.n1) // self.theta

    def __getitem__(self, k: int) -> float:
        return self.deltas[k]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["version", "samples", "delta"])
            for k, d in enumerate(self.deltas, start=1):
                writer.writerow([k, self.samples(k), repr(d)])

    @classmethod
    def from_csv(cls, path: str | Path) -> DeltaTable:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ModelError(f"{path}: no versions")
        rows.sort(key=lambda r: int(r["version"]))
        theta = len(rows)
        n1 = int(rows[-1]["samples"])
        table = cls(tuple(float(r["delta"]) for r in rows), n1)
        for k, r in enumerate(rows, start=1):
            if int(r["version"]) != k or int(r["samples"]) != (k * n1) // theta:
                raise ModelError(f"{path}: version {r['version']} has inconsistent sample count")
        return table


@dataclass(frozen=True)
class WorldConfig:
    width: float = DEFAULT_WORLD_WIDTH
    circle_vertices: int = DEFAULT_CIRCLE_VERTICES
    delta_table: DeltaTable = field(default_factory=DeltaTable.standard)
    clip_to_world: bool = True

    def __post_init__(self):
        if not self.width > 0:
            raise ModelError("world width must be positive")
        if self.circle_vertices < 3:
            raise ModelError("circle needs at least 3 vertices")

    @property
    def n1(self) -> int:
        return self.delta_table.n1

    @property
    def theta(self) -> int:
        return self.delta_table.theta

    @property
    def quantum(self) -> float:
        return self.width * QUANTUM_FRACTION

    @property
    def world(self) -> Ring:
        return rectangle(0.0, 0.0, self.width, self.width)


def object_disc(o: MovingObject, cfg: WorldConfig) -> RegionSet:
    """Polygonised circle of radius tau around the recorded location, cut to the territory."""
    ring = circle_polygon(o.location, o.tau, cfg.circle_vertices)
    disc = RegionSet.from_shapely(ring.to_shapely())
    if cfg.clip_to_world:
        x, y = o.location
        w = cfg.width
        if x - o.tau < 0 or y - o.tau < 0 or x + o.tau > w or y + o.tau > w:
            disc = intersect(disc, cfg.world, cfg.quantum)
    return disc


def pdf_density(pdf: PdfKind, o: MovingObject, p: Sequence[float]) -> float:
    """Unnormalised density at p. Callers only evaluate it inside the uncertainty region."""
    if isinstance(pdf, Uniform):
        return 1.0
    s = pdf.sigma if pdf.sigma is not None else o.tau / 5.0
    d2 = (p[0] - o.location[0]) ** 2 + (p[1] - o.location[1]) ** 2
    return math.exp(-d2 / (2.0 * s * s))


def pdf_weights(pdf: PdfKind, o: MovingObject, xy: np.ndarray) -> np.ndarray:
    """Vectorised `pdf_density` over an (n, 2) array."""
    if isinstance(pdf, Uniform):
        return np.ones(len(xy))
    s = pdf.sigma if pdf.sigma is not None else o.tau / 5.0
    d2 = (xy[:, 0] - o.location[0]) ** 2 + (xy[:, 1] - o.location[1]) ** 2
    return np.exp(-d2 / (2.0 * s * s))


AnswerExplicit = Mapping[int, float]
AnswerImplicit = frozenset
