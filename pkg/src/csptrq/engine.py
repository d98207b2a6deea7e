"""Query pipelines over a twin-indexed store of objects and restricted areas.

Three methods share the store:
  B   baseline: full uncertainty region per candidate, then one-shot probability.
  PE  explicit query: cheap disc/range tests, intersect-then-subtract, early
      unreachability pruning, stepwise probability with prune tests.
  PI  implicit query: as PE but the probability stage may also validate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
import shapely

from .geometry import (
    GeometryError,
    RegionSet,
    contains_point,
    difference,
    intersect,
    mbr,
)
from .index import AccessCounters, RTree, build_area_index, build_object_index, candidates_areas, candidates_objects, update_object
from .model import (
    Mode,
    MovingObject,
    Query,
    RestrictedArea,
    Uniform,
    WorldConfig,
    object_disc,
)
from .probability import (
    Decision,
    McInstance,
    Outcome,
    Rule,
    adaptive_uniform,
    exact_probability_uniform,
    mc_multistep,
    mc_probability,
    object_rng,
    two_way_test,
    uniform_multistep,
)
from .uncertainty import build_with_early_prune, compute_uncertainty_region


class Method(str, enum.Enum):
    B = "B"
    PE = "PE"
    PI = "PI"


class NotFound(KeyError):
    pass


class LocationViolation(ValueError):
    pass


class QueryError(RuntimeError):
    pass


@dataclass
class EngineStats:
    candidates: int = 0
    k1: int = 0  # decided by the disc-versus-range test
    k2: int = 0  # range part empty once nearby obstacles are removed
    k3: int = 0  # range part unreachable from the recorded location
    by_probability: int = 0
    steps: list[int] = field(default_factory=list)
    method_counts: dict[int, int] = field(default_factory=dict)
    counters: AccessCounters = field(default_factory=AccessCounters)
    decisions: dict[int, Decision] = field(default_factory=dict)

    @property
    def avg_step(self) -> float:
        return sum(self.steps) / len(self.steps) if self.steps else 0.0

    @property
    def io(self) -> int:
        return self.counters.total


@dataclass
class QueryResult:
    answer: dict[int, float] | frozenset[int]
    stats: EngineStats

    @property
    def ids(self) -> frozenset[int]:
        return frozenset(self.answer)


class Database:
    """Object and area records plus their two R-trees."""

    def __init__(
        self,
        objects: Iterable[MovingObject],
        areas: Iterable[RestrictedArea],
        cfg: WorldConfig | None = None,
        fanout: int = 50,
        check: bool = True,
    ):
        self.cfg = cfg or WorldConfig()
        self.objects: dict[int, MovingObject] = {}
        self.areas: dict[int, RestrictedArea] = {}
        for r in areas:
            if r.id in self.areas:
                raise ValueError(f"duplicate restricted area id {r.id}")
            self.areas[r.id] = r
        for o in objects:
            if o.id in self.objects:
                raise ValueError(f"duplicate object id {o.id}")
            self.objects[o.id] = o
        self.area_index: RTree = build_area_index(self.areas.values(), fanout)
        if check:
            for o in self.objects.values():
                self._check_location(o.id, o.location)
        self.object_index: RTree = build_object_index(self.objects.values(), fanout)

    def fetch_object(self, oid: int, counters: AccessCounters) -> MovingObject:
        counters.record_fetches += 1
        return self.objects[oid]

    def fetch_areas(self, ids: Sequence[int], counters: AccessCounters, cache: dict) -> list[RestrictedArea]:
        out = []
        for i in ids:
            r = cache.get(i)
            if r is None:
                counters.record_fetches += 1
                r = cache[i] = self.areas[i]
            out.append(r)
        return out

    def blocking_area(self, location: Sequence[float]) -> int | None:
        x, y = location
        for aid in self.area_index.search((x, y, x, y)):
            if contains_point(self.areas[aid].shape, (x, y)):
                return aid
        return None

    def _check_location(self, oid: int, location: Sequence[float]) -> None:
        w = self.cfg.width
        if not (0.0 <= location[0] <= w and 0.0 <= location[1] <= w):
            raise LocationViolation(f"object {oid}: location {tuple(location)} outside the territory")
        hit = self.blocking_area(location)
        if hit is not None:
            raise LocationViolation(f"object {oid}: location {tuple(location)} inside restricted area {hit}")

    def report_location(self, oid: int, location: Sequence[float]) -> None:
        """Store a newly reported location and re-index the object."""
        if oid not in self.objects:
            raise NotFound(oid)
        self._check_location(oid, location)
        self.objects[oid] = self.objects[oid].moved(location)
        update_object(self.object_index, oid, location)


class _Range:
    """Query polygon with the derived shapes reused across candidates."""

    def __init__(self, query: Query):
        self.shape = query.range.shape.to_shapely()
        shapely.prepare(self.shape)
        self.boundary = self.shape.exterior
        shapely.prepare(self.boundary)
        self.mbr = query.range.mbr

    def disc_relation(self, o: MovingObject) -> int:
        """+1 when the circle lies in the range, -1 when they share no area, 0 otherwise."""
        return int(self.disc_relations([o])[0])

    def disc_relations(self, objects: Sequence[MovingObject]) -> np.ndarray:
        if not objects:
            return np.zeros(0, dtype=int)
        xy = np.array([o.location for o in objects], dtype=float)
        tau = np.array([o.tau for o in objects], dtype=float)
        d = shapely.distance(self.boundary, shapely.points(xy))
        inside = shapely.intersects_xy(self.shape, xy[:, 0], xy[:, 1])
        return np.where(d >= tau, np.where(inside, 1, -1), 0)


@dataclass
class _Spatial:
    """Outcome of the spatial stage: a decision, or the regions the probability stage needs."""

    decision: Decision | None = None
    u: RegionSet | None = None
    s: RegionSet | None = None


def _spatial_stage(
    db: Database, o: MovingObject, rng_: _Range, counters: AccessCounters, relation: int | None = None
) -> _Spatial:
    cfg = db.cfg
    if relation is None:
        relation = rng_.disc_relation(o)
    if relation > 0:
        return _Spatial(Decision(Outcome.VALIDATED, Rule.DISC_INSIDE_RANGE, p=1.0))
    if relation < 0:
        return _Spatial(Decision(Outcome.PRUNED, Rule.DISC_OUTSIDE_RANGE))
    disc = object_disc(o, cfg)
    clipped = intersect(disc, rng_.shape, cfg.quantum)
    if clipped.is_empty:
        return _Spatial(Decision(Outcome.PRUNED, Rule.DISC_OUTSIDE_RANGE))
    # the clipped window lies inside the square, so one traversal serves both
    # area lists; records outside the smaller window are fetched only if needed
    cache: dict = {}
    around_ids = candidates_areas(db.area_index, o.square, counters)
    window = mbr(clipped)
    near_ids = [i for i in around_ids if window.intersects(db.area_index.box(i))]
    near = db.fetch_areas(near_ids, counters, cache)
    s = difference(clipped, [r.shape for r in near], cfg.quantum) if near else clipped
    if s.is_empty:
        return _Spatial(Decision(Outcome.PRUNED, Rule.EMPTY_AFTER_OBSTACLES))
    around = db.fetch_areas(around_ids, counters, cache)
    built = build_with_early_prune(o, around, s, cfg, disc=disc)
    if built.pruned:
        return _Spatial(Decision(Outcome.PRUNED, Rule.UNREACHABLE))
    return _Spatial(u=built.u, s=built.s)


def _tally(stats: EngineStats, oid: int, d: Decision) -> None:
    stats.decisions[oid] = d
    if d.rule in (Rule.DISC_INSIDE_RANGE, Rule.DISC_OUTSIDE_RANGE):
        stats.k1 += 1
    elif d.rule is Rule.EMPTY_AFTER_OBSTACLES:
        stats.k2 += 1
    elif d.rule is Rule.UNREACHABLE:
        stats.k3 += 1
    else:
        stats.by_probability += 1
        stats.steps.append(d.step)
        if d.method is not None:
            stats.method_counts[d.method] = stats.method_counts.get(d.method, 0) + 1


def _with_context(oid: int, exc: GeometryError) -> QueryError:
    return QueryError(f"object {oid}: {exc}")


def ecsptrq(db: Database, query: Query, seed: int = 0) -> QueryResult:
    """Objects with appearance probability >= p_t, with their probabilities."""
    rng_ = _Range(query)
    stats = EngineStats()
    counters = stats.counters
    answer: dict[int, float] = {}
    ids = candidates_objects(db.object_index, rng_.mbr, counters)
    stats.candidates = len(ids)
    objs = [db.fetch_object(oid, counters) for oid in ids]
    for oid, o, rel in zip(ids, objs, rng_.disc_relations(objs)):
        try:
            sp = _spatial_stage(db, o, rng_, counters, rel)
            if sp.decision is not None:
                d = sp.decision
            elif isinstance(o.pdf, Uniform):
                d = uniform_multistep(sp.u, sp.s, query.p_t)
            else:
                d = mc_multistep(sp.u, sp.s, o.pdf, o, query.p_t, db.cfg, object_rng(seed, oid))
        except GeometryError as exc:
            raise _with_context(oid, exc) from exc
        _tally(stats, oid, d)
        if d.outcome is not Outcome.PRUNED and d.p is not None and d.p >= query.p_t:
            answer[oid] = d.p
    return QueryResult(answer, stats)


def icsptrq(db: Database, query: Query, seed: int = 0) -> QueryResult:
    """Ids of objects with appearance probability >= p_t."""
    rng_ = _Range(query)
    stats = EngineStats()
    counters = stats.counters
    answer: list[int] = []
    ids = candidates_objects(db.object_index, rng_.mbr, counters)
    stats.candidates = len(ids)
    objs = [db.fetch_object(oid, counters) for oid in ids]
    for oid, o, rel in zip(ids, objs, rng_.disc_relations(objs)):
        try:
            sp = _spatial_stage(db, o, rng_, counters, rel)
            if sp.decision is not None:
                d = sp.decision
            elif isinstance(o.pdf, Uniform):
                d = adaptive_uniform(sp.u, sp.s, query.p_t)
            else:
                d = two_way_test(sp.u, sp.s, o.pdf, o, query.p_t, db.cfg, object_rng(seed, oid))
        except GeometryError as exc:
            raise _with_context(oid, exc) from exc
        _tally(stats, oid, d)
        if d.outcome is Outcome.VALIDATED or (d.outcome is Outcome.EXACT and d.p >= query.p_t):
            answer.append(oid)
    return QueryResult(frozenset(answer), stats)


def baseline_query(db: Database, query: Query, seed: int = 0) -> QueryResult:
    """Uncertainty region first, then its intersection with the range, probability in one shot."""
    rng_ = _Range(query)
    stats = EngineStats()
    counters = stats.counters
    answer: dict[int, float] = {}
    cfg = db.cfg
    ids = candidates_objects(db.object_index, rng_.mbr, counters)
    stats.candidates = len(ids)
    for oid in ids:
        o = db.fetch_object(oid, counters)
        try:
            around = db.fetch_areas(candidates_areas(db.area_index, o.square, counters), counters, {})
            u = compute_uncertainty_region(o, around, cfg)
            s = intersect(u, rng_.shape, cfg.quantum)
            if isinstance(o.pdf, Uniform):
                p = exact_probability_uniform(u, s)
            else:
                p = mc_probability(u, s, o.pdf, o, cfg.n1, object_rng(seed, oid))
        except GeometryError as exc:
            raise _with_context(oid, exc) from exc
        d = Decision(Outcome.EXACT, Rule.ONE_SHOT, 1, p)
        _tally(stats, oid, d)
        if p >= query.p_t:
            answer[oid] = p
    if query.mode is Mode.IMPLICIT:
        return QueryResult(frozenset(answer), stats)
    return QueryResult(answer, stats)


def run_query(db: Database, query: Query, method: Method | str, seed: int = 0) -> QueryResult:
    method = Method(method)
    if method is Method.B:
        return baseline_query(db, query, seed)
    if method is Method.PE:
        return ecsptrq(db, query, seed)
    return icsptrq(db, query, seed)


def report_location(db: Database, oid: int, location: Sequence[float]) -> None:
    db.report_location(oid, location)


def collect_mc_workload(db: Database, queries: Iterable[Query]) -> Iterator[McInstance]:
    """Objects that reach the probability stage, as (u, s, object) instances."""
    for q in queries:
        rng_ = _Range(q)
        counters = AccessCounters()
        for oid in candidates_objects(db.object_index, rng_.mbr, counters):
            o = db.objects[oid]
            sp = _spatial_stage(db, o, rng_, counters)
            if sp.decision is None:
                yield McInstance(sp.u, sp.s, o)
