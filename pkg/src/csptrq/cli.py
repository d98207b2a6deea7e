"""Command line entry point: ``csptrq gen|calibrate|query|bench|validate``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, datagen
from .engine import Database, Method, collect_mc_workload, run_query
from .geometry import from_wkt, Ring
from .model import DeltaTable, Mode, ModelError, Query, QueryRange, WorldConfig

log = logging.getLogger("csptrq")

# keys accepted both as --flags and in a key=value config file
PARAM_TYPES = {
    "N": int,
    "M": int,
    "zeta": int,
    "psi": int,
    "epsilon": float,
    "p_t": float,
    "eta": str,
    "N1": int,
    "theta": int,
    "seed": int,
    "pdf": str,
    "W": float,
}
DEFAULTS = {**bench.DESK_DEFAULTS, "N1": 700, "theta": 7, "seed": 0, "pdf": "UD", "W": 10000.0}


class ConfigError(ValueError):
    pass


def read_config(path: str | Path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (t.strip() for t in line.split("=", 1))
            value = value.strip("\"'")
            if key not in PARAM_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = PARAM_TYPES[key](value)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def _params(args: argparse.Namespace) -> dict:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    p = dict(DEFAULTS)
    if args.config:
        p.update(read_config(args.config))
    for key in PARAM_TYPES:
        v = getattr(args, key, None)
        if v is not None:
            p[key] = v
    return p


def _world(p: dict, deltas: str | None = None) -> WorldConfig:
    if deltas:
        table = DeltaTable.from_csv(deltas)
        if table.theta != p["theta"] or table.n1 != p["N1"]:
            log.warning("delta table (N1=%d, theta=%d) overrides N1/theta settings", table.n1, table.theta)
    else:
        table = DeltaTable.standard()
        if p["N1"] != table.n1 or p["theta"] != table.theta:
            raise ConfigError("non-default N1/theta need a calibrated table (--deltas)")
    return WorldConfig(width=p["W"], delta_table=table)


def _spec(p: dict) -> datagen.WorkloadSpec:
    return datagen.WorkloadSpec(
        N=p["N"], M=p["M"], zeta=p["zeta"], psi=p["psi"], epsilon=p["epsilon"], eta=p["eta"],
        seed=p["seed"], width=p["W"], pdf=p["pdf"],
        area_shape="rect" if p["zeta"] == 4 else "regular",
    )


def cmd_gen(args, p) -> int:
    spec = _spec(p)
    if args.rects:
        areas = datagen.load_rects(args.rects, spec.width, drop_overlapping=not args.keep_overlapping)
    else:
        areas = datagen.gen_restricted_areas(spec)
    if args.points:
        objects = datagen.objects_from_points(datagen.load_points(args.points, spec.width), areas, spec)
    else:
        objects = datagen.gen_objects(spec, areas)
    datagen.write_dataset(args.out, objects, areas, spec)
    print(f"wrote {len(objects)} objects and {len(areas)} restricted areas to {args.out}")
    return 0


def _load(args, p):
    if args.data:
        objects, areas, _ = datagen.read_dataset(args.data)
    else:
        spec = _spec(p)
        areas = datagen.gen_restricted_areas(spec)
        objects = datagen.gen_objects(spec, areas)
    return objects, areas


def cmd_validate(args, p) -> int:
    objects, areas, manifest = datagen.read_dataset(args.data)
    width = manifest.get("spec", {}).get("width", p["W"]) if manifest.get("spec") else p["W"]
    problems = datagen.validate_dataset(objects, areas, width)
    db = Database(objects, areas, WorldConfig(width=width), check=False)
    db.object_index.validate()
    db.area_index.validate()
    for msg in problems:
        print(msg)
    print(f"{len(objects)} objects, {len(areas)} areas: {'OK' if not problems else f'{len(problems)} problems'}")
    return 1 if problems else 0


def cmd_calibrate(args, p) -> int:
    from .probability import calibrate_delta_table  # noqa: PLC0415

    p = {**p, "pdf": "DG"}
    objects, areas = _load(args, p)
    spec = _spec(p)
    world = WorldConfig(width=p["W"])
    objects = [replace(o, pdf=spec.pdf_kind()) for o in objects]
    db = Database(objects, areas, world, check=False)
    rng = np.random.default_rng([p["seed"], 9])
    queries = [Query(datagen.gen_query_range(spec, rng), p["p_t"]) for _ in range(args.queries)]
    workload = list(collect_mc_workload(db, queries))[: args.limit]
    cal = calibrate_delta_table(workload, n1=p["N1"], theta=p["theta"], seed=p["seed"], envelope=not args.raw)
    cal.table.to_csv(args.out)
    for k, d in enumerate(cal.table.deltas, start=1):
        print(f"version {k}: samples={cal.table.samples(k)} delta={d:.4f}")
    print(f"{len(workload)} instances; table written to {args.out}")
    return 0


def cmd_query(args, p) -> int:
    objects, areas = _load(args, p)
    world = _world(p, args.deltas)
    db = Database(objects, areas, world, check=False)
    if args.wkt:
        shape = from_wkt(args.wkt)
        if not isinstance(shape, Ring):
            raise ConfigError("query range must be a LINEARRING")
    elif args.x is not None and args.y is not None:
        shape = datagen.query_shape(p["eta"], args.x, args.y, p["epsilon"], p["psi"])
    else:
        rng = np.random.default_rng([p["seed"], 5])
        shape = datagen.gen_query_range(_spec(p), rng).shape
    method = Method(args.method)
    mode = Mode.IMPLICIT if method is Method.PI else Mode.EXPLICIT
    res = run_query(db, Query(QueryRange(shape), p["p_t"], mode), method, seed=p["seed"])
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        if isinstance(res.answer, dict):
            w.writerow(["id", "p"])
            for oid in sorted(res.answer):
                w.writerow([oid, repr(res.answer[oid])])
        else:
            w.writerow(["id"])
            for oid in sorted(res.answer):
                w.writerow([oid])
    finally:
        if args.out:
            out.close()
    st = res.stats
    log.info("candidates=%d k1=%d k2=%d k3=%d probability=%d io=%d", st.candidates, st.k1, st.k2, st.k3,
             st.by_probability, st.io)
    return 0


def _parse_values(sweep: str, text: str | None):
    if text is None:
        return None
    kind = str if sweep == "eta" else PARAM_TYPES[sweep]
    return [kind(v) for v in text.split(",")]


def cmd_bench(args, p) -> int:
    defaults = {k: p[k] for k in bench.FULL_DEFAULTS}
    world = _world(p, args.deltas)
    plan = bench.ExperimentPlan(
        sweep=args.sweep,
        values=_parse_values(args.sweep, args.values),
        defaults=defaults,
        methods=tuple(args.methods.split(",")) if args.methods else (),
        pdf=p["pdf"],
        queries=args.queries,
        reps=args.reps,
        updates=args.updates,
        seed=p["seed"],
        full_scale=args.full_scale,
        gate=not args.no_gate,
        world=world,
    )
    rows = bench.run_plan(plan, progress=lambda m: log.info("%s", m))
    bench.emit_csv(rows, args.out)
    print(f"{len(rows)} rows written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file with the same keys as the flags")
    for key, kind in PARAM_TYPES.items():
        common.add_argument(f"--{key}", type=kind, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="csptrq", description="Probabilistic range queries over obstructed moving objects")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate or import a dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--points", help="CSV of x,y object locations")
    g.add_argument("--rects", help="CSV of xmin,ymin,xmax,ymax restricted areas")
    g.add_argument("--keep-overlapping", action="store_true")
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("calibrate", parents=[common], help="measure Monte-Carlo workload errors")
    c.add_argument("--data")
    c.add_argument("--queries", type=int, default=50)
    c.add_argument("--limit", type=int, default=2000, help="max instances")
    c.add_argument("--raw", action="store_true", help="keep raw maxima instead of the nonincreasing envelope")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    q = sub.add_parser("query", parents=[common], help="run one range query")
    q.add_argument("--data")
    q.add_argument("--method", default="PE", choices=[m.value for m in Method])
    q.add_argument("--x", type=float)
    q.add_argument("--y", type=float)
    q.add_argument("--wkt", help="query polygon as a WKT LINEARRING")
    q.add_argument("--deltas", help="delta table CSV")
    q.add_argument("--out")
    q.set_defaults(func=cmd_query)

    b = sub.add_parser("bench", parents=[common], help="run a parameter sweep")
    b.add_argument("--sweep", default="epsilon", choices=list(bench.SWEEPS))
    b.add_argument("--values", help="comma separated sweep values")
    b.add_argument("--methods", default="B,PE,PI")
    b.add_argument("--queries", type=int, default=50)
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--updates", type=int, default=100)
    b.add_argument("--full-scale", action="store_true")
    b.add_argument("--no-gate", action="store_true")
    b.add_argument("--deltas")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("validate", parents=[common], help="check a dataset directory")
    v.add_argument("--data", required=True)
    v.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        p = _params(args)
        return args.func(args, p)
    except (ConfigError, ModelError, datagen.DatasetError, datagen.PlacementError, bench.PlanError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
