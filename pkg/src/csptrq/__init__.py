"""Probabilistic threshold range queries over moving objects in obstructed space."""

from .engine import Database, Method, QueryResult, baseline_query, ecsptrq, icsptrq, run_query
from .geometry import Point, Ring, circle_polygon, rectangle
from .model import DeltaTable, DistortedGaussian, Mode, MovingObject, Query, QueryRange, RestrictedArea, Uniform, WorldConfig

__all__ = [
    "Database", "Method", "QueryResult", "baseline_query", "ecsptrq", "icsptrq", "run_query",
    "Point", "Ring", "circle_polygon", "rectangle",
    "DeltaTable", "DistortedGaussian", "Mode", "MovingObject", "Query", "QueryRange",
    "RestrictedArea", "Uniform", "WorldConfig",
]
