"""Appearance probabilities computed in coarse-to-fine steps with threshold tests.

Uniform location: each step refines an area ratio by one hole.
  * prune mode starts from the outer rings of the range intersection over the
    full region area; every step can only lower the value, so a value below
    the threshold prunes.
  * validate mode starts from the full intersection area over the region's
    outer ring; every step can only raise the value, so a value above the
    threshold validates.

Non-uniform location: a self-normalised Monte Carlo estimate on a growing
sample, each version carrying a calibrated workload error.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import shapely

from .geometry import (
    DegenerateGeometryError,
    RegionSet,
    area,
    contains_points,
    hole_areas,
    mbr,
    outer_area,
)
from .model import DeltaTable, MovingObject, PdfKind, Uniform, WorldConfig, pdf_weights


class EstimationError(ArithmeticError):
    pass


class Outcome(enum.Enum):
    PRUNED = "pruned"
    VALIDATED = "validated"
    EXACT = "exact"


class Rule(str, enum.Enum):
    DISC_INSIDE_RANGE = "disc-inside-range"
    DISC_OUTSIDE_RANGE = "disc-outside-range"
    EMPTY_AFTER_OBSTACLES = "empty-after-obstacles"
    UNREACHABLE = "unreachable"
    UPPER_BOUND = "upper-bound"
    LOWER_BOUND = "lower-bound"
    MC_UPPER_BOUND = "mc-upper-bound"
    MC_LOWER_BOUND = "mc-lower-bound"
    FINAL = "final"
    FALL_THROUGH = "fall-through"
    ONE_SHOT = "one-shot"


@dataclass(frozen=True)
class Decision:
    outcome: Outcome
    rule: Rule
    step: int = 0
    p: float | None = None
    cvrs: tuple[float, ...] = ()
    method: int | None = None

    @property
    def pruned(self) -> bool:
        return self.outcome is Outcome.PRUNED

    @property
    def validated(self) -> bool:
        return self.outcome is Outcome.VALIDATED


def _region_area(u: RegionSet) -> float:
    au = area(u)
    if not au > 0:
        raise DegenerateGeometryError("uncertainty region has zero area")
    return au


def exact_probability_uniform(u: RegionSet, s: RegionSet) -> float:
    return min(1.0, max(0.0, area(s) / _region_area(u)))


def prune_mode_cvrs(u: RegionSet, s: RegionSet) -> list[float]:
    """All prune-mode coarse values; the last one is the exact probability."""
    au = _region_area(u)
    remaining = outer_area(s)
    out = [remaining / au]
    for h in sorted(hole_areas(s), reverse=True):
        remaining -= h
        out.append(remaining / au)
    return out


def validate_mode_cvrs(u: RegionSet, s: RegionSet) -> list[float]:
    """All validate-mode coarse values; the last one is the exact probability."""
    _region_area(u)
    a_s = area(s)
    denom = outer_area(u)
    out = [a_s / denom]
    for h in sorted(hole_areas(u), reverse=True):
        denom -= h
        out.append(a_s / denom)
    return out


def _prune_mode(au: float, outer_s: float, holes_s: list[float], p_t: float, method: int | None = None) -> Decision:
    holes = sorted(holes_s, reverse=True)
    remaining = outer_s
    cvrs = []
    for k in range(1, len(holes) + 2):
        if k > 1:
            remaining -= holes[k - 2]
        value = remaining / au
        cvrs.append(value)
        if value < p_t:
            return Decision(Outcome.PRUNED, Rule.UPPER_BOUND, k, None, tuple(cvrs), method)
    return Decision(Outcome.EXACT, Rule.FINAL, len(cvrs), min(1.0, max(0.0, value)), tuple(cvrs), method)


def _validate_mode(a_s: float, outer_u: float, holes_u: list[float], p_t: float, method: int | None = None) -> Decision:
    holes = sorted(holes_u, reverse=True)
    denom = outer_u
    n = len(holes) + 1
    cvrs = []
    for k in range(1, n + 1):
        if k > 1:
            denom -= holes[k - 2]
        value = a_s / denom
        cvrs.append(value)
        if k == n:
            p = min(1.0, max(0.0, value))
            outcome = Outcome.VALIDATED if value >= p_t else Outcome.PRUNED
            return Decision(outcome, Rule.FINAL, k, p, tuple(cvrs), method)
        if value > p_t:
            return Decision(Outcome.VALIDATED, Rule.LOWER_BOUND, k, None, tuple(cvrs), method)
    raise AssertionError("unreachable")


def uniform_multistep(u: RegionSet, s: RegionSet, p_t: float) -> Decision:
    """Prune mode: stop at the first coarse value below ``p_t``, else return the exact value."""
    holes = hole_areas(s)
    return _prune_mode(_region_area(u), area(s) + sum(holes), holes, p_t)


def uniform_multistep_validate(u: RegionSet, s: RegionSet, p_t: float) -> Decision:
    """Validate mode: stop at the first coarse value above ``p_t``; the last value is exact."""
    holes = hole_areas(u)
    return _validate_mode(area(s), _region_area(u) + sum(holes), holes, p_t)


def reference_value(u: RegionSet, s: RegionSet) -> float:
    """Outer-ring area of the intersection over outer-ring area of the region."""
    if s.is_empty:
        return 0.0
    return outer_area(s) / outer_area(u)


def adaptive_uniform(u: RegionSet, s: RegionSet, p_t: float) -> Decision:
    """Run prune mode when the reference value is below the threshold, validate mode otherwise."""
    au = _region_area(u)
    a_s = area(s)
    u_parts = u.part_shapes()
    s_parts = s.part_shapes()
    if shapely.get_num_interior_rings(u_parts + s_parts).any():
        holes_u = hole_areas(u)
        holes_s = hole_areas(s)
    else:
        holes_u = holes_s = []
    outer_u = au + sum(holes_u)
    outer_s = a_s + sum(holes_s)
    if outer_s / outer_u < p_t:
        return _prune_mode(au, outer_s, holes_s, p_t, method=1)
    return _validate_mode(a_s, outer_u, holes_u, p_t, method=2)


# -- Monte Carlo ---------------------------------------------------------------

MIN_ACCEPTANCE = 1e-4
_BATCH = 512


class RegionSampler:
    """Uniform points over a region by rejection from its bounding rectangle.

    Candidates are drawn in fixed-size batches, so ``take(n)`` always returns
    the same first n points for a given generator state, however the requests
    are split.
    """

    def __init__(self, region: RegionSet, rng: np.random.Generator, batch: int = _BATCH):
        if region.is_empty or not region.area > 0:
            raise DegenerateGeometryError("cannot sample an empty region")
        self.shape = region.shape
        shapely.prepare(self.shape)
        box = mbr(region)
        self._lo = np.array([box.xmin, box.ymin])
        self._size = np.array([box.width, box.height])
        self.rng = rng
        self.batch = batch
        self._points = np.empty((0, 2))
        self.drawn = 0

    def take(self, n: int) -> np.ndarray:
        while len(self._points) < n:
            cand = self._lo + self.rng.random((self.batch, 2)) * self._size
            self.drawn += self.batch
            inside = shapely.intersects_xy(self.shape, cand[:, 0], cand[:, 1])
            self._points = np.vstack((self._points, cand[inside]))
            if self.drawn >= 100_000 and len(self._points) < MIN_ACCEPTANCE * self.drawn:
                raise DegenerateGeometryError("rejection sampling acceptance below 1e-4")
        return self._points[:n]


def sample_in_region(u: RegionSet, n: int, rng: np.random.Generator) -> np.ndarray:
    return RegionSampler(u, rng).take(n)


def object_rng(seed: int, object_id: int) -> np.random.Generator:
    """Independent stream per (query seed, object id)."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(object_id)])


class _Estimator:
    """Running weighted hit ratio over a growing sample."""

    def __init__(self, u: RegionSet, s: RegionSet, pdf: PdfKind, o: MovingObject, rng: np.random.Generator):
        self.sampler = RegionSampler(u, rng)
        self.s_shape = s.shape
        if not s.is_empty:
            shapely.prepare(self.s_shape)
        self.pdf = pdf
        self.o = o
        self.used = 0
        self.hits = 0.0
        self.total = 0.0

    def extend_to(self, n: int) -> float:
        pts = self.sampler.take(n)[self.used : n]
        self.used = n
        w = pdf_weights(self.pdf, self.o, pts)
        self.total += float(w.sum())
        if not self.s_shape.is_empty and len(pts):
            inside = shapely.intersects_xy(self.s_shape, pts[:, 0], pts[:, 1])
            self.hits += float(w[inside].sum())
        if not self.total > 0:
            raise EstimationError("total sample weight is zero")
        return self.hits / self.total


def mc_probability(
    u: RegionSet, s: RegionSet, pdf: PdfKind, o: MovingObject, n: int, rng: np.random.Generator
) -> float:
    """Self-normalised estimate: density-weighted share of samples in ``s``."""
    return _Estimator(u, s, pdf, o, rng).extend_to(n)


def mc_multistep(
    u: RegionSet,
    s: RegionSet,
    pdf: PdfKind,
    o: MovingObject,
    p_t: float,
    cfg: WorldConfig | DeltaTable,
    rng: np.random.Generator,
) -> Decision:
    """Grow the sample version by version; prune once estimate + error < ``p_t``."""
    table = cfg.delta_table if isinstance(cfg, WorldConfig) else cfg
    est = _Estimator(u, s, pdf, o, rng)
    cvrs = []
    for k in range(1, table.theta + 1):
        value = est.extend_to(table.samples(k))
        cvrs.append(value)
        if value + table[k - 1] < p_t:
            return Decision(Outcome.PRUNED, Rule.MC_UPPER_BOUND, k, None, tuple(cvrs))
    return Decision(Outcome.EXACT, Rule.FINAL, table.theta, value, tuple(cvrs))


def two_way_test(
    u: RegionSet,
    s: RegionSet,
    pdf: PdfKind,
    o: MovingObject,
    p_t: float,
    cfg: WorldConfig | DeltaTable,
    rng: np.random.Generator,
) -> Decision:
    """Prune on estimate + error < ``p_t``, validate on estimate - error >= ``p_t``.

    An object still undecided after the last version is accepted.
    """
    table = cfg.delta_table if isinstance(cfg, WorldConfig) else cfg
    est = _Estimator(u, s, pdf, o, rng)
    cvrs = []
    for k in range(1, table.theta + 1):
        value = est.extend_to(table.samples(k))
        cvrs.append(value)
        delta = table[k - 1]
        if value + delta < p_t:
            return Decision(Outcome.PRUNED, Rule.MC_UPPER_BOUND, k, None, tuple(cvrs))
        if value - delta >= p_t:
            return Decision(Outcome.VALIDATED, Rule.MC_LOWER_BOUND, k, None, tuple(cvrs))
    return Decision(Outcome.VALIDATED, Rule.FALL_THROUGH, table.theta, value, tuple(cvrs))


# -- workload error calibration -------------------------------------------------


@dataclass(frozen=True)
class McInstance:
    """One non-uniform probability computation: region, range part, object."""

    u: RegionSet
    s: RegionSet
    o: MovingObject

    @property
    def pdf(self) -> PdfKind:
        return self.o.pdf


def reference_probability(inst: McInstance, resolution: int = 256) -> float:
    """Midpoint-rule quadrature of the density over s and u on a regular grid."""
    if isinstance(inst.pdf, Uniform):
        return exact_probability_uniform(inst.u, inst.s)
    box = mbr(inst.u)
    xs = box.xmin + (np.arange(resolution) + 0.5) * (box.width / resolution)
    ys = box.ymin + (np.arange(resolution) + 0.5) * (box.height / resolution)
    gx, gy = np.meshgrid(xs, ys)
    xy = np.column_stack((gx.ravel(), gy.ravel()))
    in_u = contains_points(inst.u, xy)
    xy = xy[in_u]
    w = pdf_weights(inst.pdf, inst.o, xy)
    total = w.sum()
    if not total > 0:
        raise EstimationError("region holds no grid points")
    if inst.s.is_empty:
        return 0.0
    in_s = contains_points(inst.s, xy)
    return float(w[in_s].sum() / total)


@dataclass(frozen=True)
class Calibration:
    table: DeltaTable
    max_errors: tuple[float, ...]
    mean_errors: tuple[float, ...]
    errors: np.ndarray = field(repr=False)
    oracle: np.ndarray = field(repr=False)
    estimates: np.ndarray = field(repr=False)

    def max_table(self) -> DeltaTable:
        """Table of maximum errors for every version, last one included, made nonincreasing."""
        deltas = list(self.max_errors)
        for k in range(len(deltas) - 2, -1, -1):
            deltas[k] = max(deltas[k], deltas[k + 1])
        return DeltaTable(tuple(deltas), self.table.n1)


def version_estimates(inst: McInstance, table: DeltaTable, rng: np.random.Generator) -> list[float]:
    est = _Estimator(inst.u, inst.s, inst.pdf, inst.o, rng)
    return [est.extend_to(table.samples(k)) for k in range(1, table.theta + 1)]


def calibrate_delta_table(
    workload: Sequence[McInstance],
    n1: int = 700,
    theta: int = 7,
    seed: int = 0,
    oracle: Callable[[McInstance], float] = reference_probability,
    envelope: bool = True,
) -> Calibration:
    """Off-line workload errors of each coarse version against an accurate oracle.

    Versions 1..theta-1 get the maximum absolute error over the workload, the
    last version the mean absolute error.  With ``envelope`` the maxima are
    replaced by their running maximum from the right, so the table stays
    nonincreasing when sampling noise makes a later maximum exceed an earlier one.
    """
    if not workload:
        raise ValueError("calibration workload is empty")
    probe = DeltaTable((0.0,) * theta, n1)
    truth = np.array([oracle(inst) for inst in workload])
    est = np.array(
        [version_estimates(inst, probe, object_rng(seed, i)) for i, inst in enumerate(workload)]
    )
    errors = np.abs(est - truth[:, None])
    max_err = errors.max(axis=0)
    mean_err = errors.mean(axis=0)
    deltas = list(max_err[:-1]) + [mean_err[-1]]
    if envelope:
        for k in range(theta - 2, -1, -1):
            deltas[k] = max(deltas[k], deltas[k + 1])
    table = DeltaTable(tuple(deltas), n1)
    return Calibration(table, tuple(max_err), tuple(mean_err), errors, truth, est)
