"""Experiment harness: parameter sweeps over B, PE and PI with timing and I/O counts."""

from __future__ import annotations

import csv
import logging
import statistics
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .datagen import REGULAR, WorkloadSpec, gen_objects, gen_query_range, gen_restricted_areas, free_location_sampler
from .engine import Database, EngineStats, Method, QueryResult, run_query
from .model import Mode, Query, WorldConfig
from .probability import Outcome

log = logging.getLogger(__name__)

# sweep values; desk scale divides the object and area counts by ten
SWEEPS: dict[str, list] = {
    "N": [10_000, 20_000, 30_000, 40_000, 50_000],
    "M": [10_000, 20_000, 30_000, 40_000, 50_000],
    "zeta": [4, 8, 16, 32, 64],
    "psi": [4, 8, 16, 32, 64],
    "epsilon": [100, 200, 300, 400, 500],
    "p_t": [0.1, 0.3, 0.5, 0.7, 0.9],
    "eta": ["Sq", "Ta", "Dm", "Tz", "Cc"],
}
FULL_DEFAULTS = {"N": 50_000, "M": 50_000, "zeta": 4, "psi": 4, "epsilon": 500.0, "p_t": 0.7, "eta": "Sq"}
DESK_DEFAULTS = {**FULL_DEFAULTS, "N": 5_000, "M": 5_000}
DESK_SCALE = 10
MAX_RECORDS = 2_000_000  # rough ceiling for an in-memory run


class PlanError(ValueError):
    pass


@dataclass
class ExperimentPlan:
    sweep: str = "epsilon"
    values: list | None = None
    defaults: dict = field(default_factory=lambda: dict(DESK_DEFAULTS))
    methods: tuple[str, ...] = ("B", "PE", "PI")
    pdf: str = "UD"
    queries: int = 50
    reps: int = 10
    updates: int = 100
    seed: int = 0
    full_scale: bool = False
    gate: bool = True
    world: WorldConfig = field(default_factory=WorldConfig)

    def __post_init__(self):
        if self.sweep not in SWEEPS:
            raise PlanError(f"unknown sweep variable {self.sweep!r}")
        if self.full_scale:
            self.defaults = {**self.defaults, "N": FULL_DEFAULTS["N"], "M": FULL_DEFAULTS["M"]}
        if self.values is None:
            vals = SWEEPS[self.sweep]
            if self.sweep in ("N", "M") and not self.full_scale:
                vals = [v // DESK_SCALE for v in vals]
            self.values = list(vals)
        for m in self.methods:
            Method(m)
        if self.pdf not in ("UD", "DG"):
            raise PlanError(f"unknown pdf {self.pdf!r}")
        if self.queries < 1 or self.reps < 1:
            raise PlanError("queries and reps must be positive")
        biggest = max(self._point(v)["N"] + self._point(v)["M"] for v in self.values)
        if biggest > MAX_RECORDS:
            raise PlanError(f"{biggest} records exceed the in-memory ceiling of {MAX_RECORDS}; lower N/M")

    def _point(self, value) -> dict:
        return {**self.defaults, self.sweep: value}

    def workload(self, value) -> WorkloadSpec:
        p = self._point(value)
        regular = self.sweep == "psi" or p["psi"] != 4
        return WorkloadSpec(
            N=int(p["N"]),
            M=int(p["M"]),
            zeta=int(p["zeta"]),
            psi=int(p["psi"]),
            epsilon=float(p["epsilon"]),
            eta=REGULAR if regular else p["eta"],
            seed=self.seed,
            width=self.world.width,
            area_shape="regular" if self.sweep == "zeta" or p["zeta"] != 4 else "rect",
            pdf=self.pdf,
        )

    def p_t(self, value) -> float:
        return float(self._point(value)["p_t"])


@dataclass
class MetricsRow:
    sweep: str
    value: object
    method: str
    pdf: str
    queries: int
    reps: int
    query_time_mean: float
    query_time_median: float
    query_time_min: float
    io_mean: float
    node_reads_mean: float
    record_fetches_mean: float
    preprocessing_time: float
    update_time: float
    candidates_mean: float
    k1_mean: float
    k2_mean: float
    k3_mean: float
    by_probability_mean: float
    avg_step: float
    answers_mean: float
    circle_vertices: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class GateFailure(AssertionError):
    """A method disagreed with the baseline beyond the allowed Monte-Carlo band."""


def _check_gate(q: Query, results: dict[str, QueryResult], pdf: str, band: float) -> None:
    base = results.get("B")
    pe = results.get("PE")
    pi = results.get("PI")
    if base is None:
        return
    exact = dict(base.answer)
    if pdf == "UD":
        if pe is not None:
            if set(pe.answer) != set(exact):
                raise GateFailure(f"PE answer ids differ from baseline: {sorted(set(pe.answer) ^ set(exact))}")
            for oid, p in pe.answer.items():
                if abs(p - exact[oid]) > 1e-9:
                    raise GateFailure(f"object {oid}: PE p={p} but baseline p={exact[oid]}")
        if pi is not None and pi.ids != frozenset(exact):
            raise GateFailure(f"PI ids differ from baseline: {sorted(pi.ids ^ frozenset(exact))}")
        return
    # Monte-Carlo estimates: disagreements are tolerated only for objects whose
    # baseline estimate lies within the coarsest error bound of the threshold
    for name, res in (("PE", pe), ("PI", pi)):
        if res is None:
            continue
        for oid in res.ids ^ frozenset(exact):
            p_b = base.stats.decisions[oid].p
            if abs(p_b - q.p_t) > band:
                raise GateFailure(f"{name} disagrees with baseline on object {oid} (baseline p={p_b})")


def _make_queries(spec: WorkloadSpec, p_t: float, n: int, seed: int) -> list[Query]:
    rng = np.random.default_rng([seed, 5])
    return [Query(gen_query_range(spec, rng), p_t) for _ in range(n)]


def _run_updates(db: Database, n: int, rng: np.random.Generator) -> float:
    """Apply n random location reports; returns mean seconds per update."""
    if n == 0 or not db.objects:
        return 0.0
    ids = sorted(db.objects)
    draw = free_location_sampler(list(db.areas.values()), db.cfg.width)
    todo = [(ids[int(rng.integers(len(ids)))], draw(rng)) for _ in range(n)]
    t0 = time.perf_counter()
    for oid, loc in todo:
        db.report_location(oid, loc)
    return (time.perf_counter() - t0) / n


class _PointRun:
    """One sweep point: its data, index, queries and accumulated measurements."""

    def __init__(self, plan: ExperimentPlan, value):
        self.plan = plan
        self.value = value
        spec = plan.workload(value)
        areas = gen_restricted_areas(spec)
        objects = gen_objects(spec, areas)
        t0 = time.perf_counter()
        self.db = Database(objects, areas, plan.world, check=False)
        self.prep = time.perf_counter() - t0
        self.queries = _make_queries(spec, plan.p_t(value), plan.queries, plan.seed)
        self.methods = [Method(m).value for m in plan.methods]
        self.times: dict[str, list[float]] = {m: [] for m in self.methods}
        self.stats: dict[str, list[EngineStats]] = {m: [] for m in self.methods}
        self.update_time = 0.0

    def run_rep(self, rep: int) -> None:
        plan, methods = self.plan, self.methods
        band = plan.world.delta_table[0]
        for qi, q in enumerate(self.queries):
            results = {}
            # rotate the method order so no method always runs first
            k = qi % len(methods)
            for m in methods[k:] + methods[:k]:
                qq = replace(q, mode=Mode.IMPLICIT if m == "PI" else Mode.EXPLICIT)
                t = time.perf_counter()
                res = run_query(self.db, qq, m, seed=plan.seed * 100_003 + qi)
                self.times[m].append(time.perf_counter() - t)
                results[m] = res
                if rep == 0:
                    self.stats[m].append(res.stats)
            if plan.gate and rep == 0:
                _check_gate(q, results, plan.pdf, band)

    def run_updates(self) -> None:
        plan = self.plan
        if not plan.updates:
            return
        rng = np.random.default_rng([plan.seed, 6])
        self.update_time = statistics.mean(_run_updates(self.db, plan.updates, rng) for _ in range(plan.reps))
        if plan.gate:
            self.db.object_index.validate()

    def rows(self) -> list[MetricsRow]:
        plan = self.plan
        out = []
        for m in self.methods:
            st = self.stats[m]
            t = self.times[m]
            # per query, the median over reps damps one-off stalls (GC, scheduler)
            per_query = np.median(np.reshape(t, (-1, len(self.queries))), axis=0)
            steps = [s for e in st for s in e.steps]
            out.append(
                MetricsRow(
                    sweep=plan.sweep,
                    value=self.value,
                    method=m,
                    pdf=plan.pdf,
                    queries=plan.queries,
                    reps=plan.reps,
                    query_time_mean=float(per_query.mean()),
                    query_time_median=statistics.median(t),
                    query_time_min=min(t),
                    io_mean=statistics.mean(e.io for e in st),
                    node_reads_mean=statistics.mean(e.counters.node_reads for e in st),
                    record_fetches_mean=statistics.mean(e.counters.record_fetches for e in st),
                    preprocessing_time=self.prep,
                    update_time=self.update_time,
                    candidates_mean=statistics.mean(e.candidates for e in st),
                    k1_mean=statistics.mean(e.k1 for e in st),
                    k2_mean=statistics.mean(e.k2 for e in st),
                    k3_mean=statistics.mean(e.k3 for e in st),
                    by_probability_mean=statistics.mean(e.by_probability for e in st),
                    avg_step=sum(steps) / len(steps) if steps else 0.0,
                    answers_mean=statistics.mean(
                        sum(1 for d in e.decisions.values() if d.outcome is not Outcome.PRUNED) for e in st
                    ),
                    circle_vertices=plan.world.circle_vertices,
                )
            )
        return out


def run_plan(plan: ExperimentPlan, progress: Callable[[str], None] | None = None) -> list[MetricsRow]:
    """Measure every sweep point; rows come out in plan order.

    Points are set up first and repetitions then run round-robin over them,
    so slow phases of the machine are spread across the sweep instead of
    bending its trend.  Execution stays single-threaded.
    """
    if not plan.methods:
        return []
    points = [_PointRun(plan, v) for v in plan.values]
    for rep in range(plan.reps):
        for pt in points:
            pt.run_rep(rep)
        if progress:
            progress(f"{plan.sweep}: rep {rep + 1}/{plan.reps}")
    rows: list[MetricsRow] = []
    for pt in points:
        pt.run_updates()
        rows.extend(pt.rows())
    return rows


def emit_csv(rows: Iterable[MetricsRow], path: str | Path) -> None:
    cols = MetricsRow.columns()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, c) for c in cols)])


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def nondecreasing(values: Sequence[float], slack: float = 0.0) -> bool:
    """True when each value is at least the previous one minus ``slack`` (relative)."""
    return all(b >= a * (1.0 - slack) for a, b in zip(values, values[1:]))
