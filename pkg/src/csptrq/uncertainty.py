"""Uncertainty regions of objects whose movement is blocked by restricted areas.

The region is the disc around the recorded location minus the obstacles,
restricted to the connected piece the object can actually reach.  Obstacles
are subtracted widest-first, since wide ones are the ones that cut the disc
apart; whenever a cut happens only the piece holding the recorded location
is kept.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import shapely

from .geometry import (
    GeometryError,
    RegionSet,
    difference,
    interiors_intersect,
    span,
)
from .model import MovingObject, RestrictedArea, WorldConfig, object_disc


@dataclass
class UncertaintyBuild:
    """Running state while obstacles are subtracted one at a time."""

    current: RegionSet
    applied: int = 0
    subdivisions: int = 0
    dropped_parts: int = 0
    pruned: bool = False


@dataclass(frozen=True)
class BuildOutcome:
    pruned: bool
    u: RegionSet | None
    s: RegionSet
    applied: int
    subdivisions: int
    dropped_parts: int


def sort_by_span(areas: Iterable[RestrictedArea]) -> list[RestrictedArea]:
    """Widest bounding-box side first; equal spans in id order."""
    return sorted(areas, key=lambda r: (-span(r.shape), r.id))


def effective_part(region: RegionSet, location: Sequence[float]) -> RegionSet:
    """The single part of ``region`` containing ``location`` (first match, boundary inclusive)."""
    parts = region.part_shapes()
    if not parts:
        raise GeometryError("region vanished: recorded location lies inside a restricted area")
    x, y = location
    for p in parts:
        if shapely.intersects_xy(p, x, y):
            return RegionSet.from_shapely(p)
    # snap-rounding may nudge a boundary past the location; take the nearest piece
    pt = shapely.Point(x, y)
    nearest = min(parts, key=lambda p: p.distance(pt))
    return RegionSet.from_shapely(nearest)


def _subtract(build: UncertaintyBuild, o: MovingObject, r: RestrictedArea, quantum: float) -> bool:
    """Subtract one obstacle; returns True when it split the region."""
    build.current = difference(build.current, r.shape, quantum)
    build.applied += 1
    if build.current.is_empty:
        raise GeometryError(f"object {o.id}: recorded location is covered by restricted area {r.id}")
    if len(build.current) > 1:
        build.current = effective_part(build.current, o.location)
        build.subdivisions += 1
        return True
    return False


def compute_uncertainty_region(
    o: MovingObject,
    areas: Iterable[RestrictedArea],
    cfg: WorldConfig | None = None,
    disc: RegionSet | None = None,
    sort: bool = True,
) -> RegionSet:
    cfg = cfg or WorldConfig()
    build = UncertaintyBuild(disc if disc is not None else object_disc(o, cfg))
    ordered = sort_by_span(areas) if sort else list(areas)
    for r in ordered:
        _subtract(build, o, r, cfg.quantum)
    return build.current


def build_with_early_prune(
    o: MovingObject,
    areas: Iterable[RestrictedArea],
    s: RegionSet,
    cfg: WorldConfig | None = None,
    disc: RegionSet | None = None,
) -> BuildOutcome:
    """Build the uncertainty region while discarding parts of ``s`` the object cannot reach.

    After every split, parts of ``s`` sharing no area with the kept piece are
    dropped for good; once none are left the object is pruned without
    finishing the region.
    """
    if s.is_empty:
        raise ValueError("range intersection must be non-empty")
    cfg = cfg or WorldConfig()
    build = UncertaintyBuild(disc if disc is not None else object_disc(o, cfg))
    s_parts = s.part_shapes()
    for r in sort_by_span(areas):
        if not _subtract(build, o, r, cfg.quantum):
            continue
        kept = [p for p in s_parts if interiors_intersect(build.current.shape, p)]
        build.dropped_parts += len(s_parts) - len(kept)
        s_parts = kept
        if not s_parts:
            build.pruned = True
            return BuildOutcome(True, None, RegionSet(), build.applied, build.subdivisions, build.dropped_parts)
    if build.dropped_parts:
        s = RegionSet.from_shapely(s_parts[0] if len(s_parts) == 1 else shapely.MultiPolygon(s_parts))
    return BuildOutcome(False, build.current, s, build.applied, build.subdivisions, build.dropped_parts)
