from __future__ import annotations

import math

import numpy as np
import pytest

from csptrq.geometry import area, mbr, rectangle
from csptrq.model import (
    DEFAULT_DELTAS,
    DeltaTable,
    DistortedGaussian,
    ModelError,
    MovingObject,
    Point,
    Query,
    QueryRange,
    RestrictedArea,
    Uniform,
    WorldConfig,
    object_disc,
    pdf_density,
    pdf_weights,
)


def test_moving_object_square_and_sigma():
    o = MovingObject(1, (10, 20), 5.0)
    assert o.location == Point(10.0, 20.0)
    assert o.square == (5, 15, 15, 25)
    assert o.sigma() == 1.0
    assert MovingObject(2, (0, 0), 5.0, DistortedGaussian(3.0)).sigma() == 3.0
    assert o.moved((1, 2)).location == Point(1.0, 2.0)
    assert o.moved((1, 2)).tau == 5.0


def test_moving_object_validation():
    with pytest.raises(ModelError):
        MovingObject(1, (0, 0), 0.0)
    with pytest.raises(ModelError):
        DistortedGaussian(-1.0)


def test_query_threshold_range():
    r = QueryRange(rectangle(0, 0, 1, 1))
    assert r.edges == 4 and r.mbr == (0, 0, 1, 1)
    Query(r, 0.0)
    Query(r, 1.0)
    with pytest.raises(ModelError):
        Query(r, 1.5)


def test_restricted_area_mbr():
    ra = RestrictedArea(3, rectangle(1, 2, 41, 12))
    assert ra.mbr == (1, 2, 41, 12)


# -- delta tables -------------------------------------------------------------


def test_default_table_and_sample_schedule():
    t = DeltaTable.standard()
    assert t.theta == 7 and t.n1 == 700
    assert t.deltas == DEFAULT_DELTAS
    assert [t.samples(k) for k in range(1, 8)] == [100, 200, 300, 400, 500, 600, 700]
    assert t[0] == 0.3607 and t[6] == 0.0095


def test_sample_schedule_floors():
    t = DeltaTable((0.3, 0.2, 0.1), 10)
    assert [t.samples(k) for k in (1, 2, 3)] == [3, 6, 10]


@pytest.mark.parametrize(
    "deltas,n1",
    [((), 700), ((0.1, 0.2), 700), ((0.1, -0.1), 700), ((0.3, 0.2, 0.1), 2)],
)
def test_delta_table_rejects_bad_tables(deltas, n1):
    with pytest.raises(ModelError):
        DeltaTable(deltas, n1)


def test_delta_table_csv_round_trip(tmp_path):
    t = DeltaTable((0.4, 0.31234567890123, 0.1), 90)
    path = tmp_path / "d.csv"
    t.to_csv(path)
    assert path.read_text().splitlines()[0] == "version,samples,delta"
    assert DeltaTable.from_csv(path) == t


def test_delta_table_csv_rejects_inconsistent_samples(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("version,samples,delta\n1,50,0.3\n2,700,0.1\n")
    with pytest.raises(ModelError):
        DeltaTable.from_csv(path)
    path.write_text("version,samples,delta\n")
    with pytest.raises(ModelError):
        DeltaTable.from_csv(path)


# -- world and discs ------------------------------------------------------------


def test_world_config_validation():
    assert mbr(WorldConfig().world) == (0, 0, 10000, 10000)
    with pytest.raises(ModelError):
        WorldConfig(width=0)
    with pytest.raises(ModelError):
        WorldConfig(circle_vertices=2)
    assert WorldConfig(width=1024).quantum == pytest.approx(1024 * 2.0**-20)


def test_object_disc_is_clipped_to_world():
    cfg = WorldConfig(width=100)
    inner = object_disc(MovingObject(0, (50, 50), 10), cfg)
    assert area(inner) == pytest.approx(0.5 * 64 * 100 * math.sin(2 * math.pi / 64))
    corner = object_disc(MovingObject(1, (0, 0), 10), cfg)
    assert area(corner) == pytest.approx(area(inner) / 4)
    assert mbr(corner).xmin == 0 and mbr(corner).ymin == 0
    unclipped = object_disc(MovingObject(1, (0, 0), 10), WorldConfig(width=100, clip_to_world=False))
    assert area(unclipped) == pytest.approx(area(inner))


def test_pdf_density():
    o = MovingObject(0, (0, 0), 10, DistortedGaussian())
    assert pdf_density(Uniform(), o, (3, 4)) == 1.0
    near = pdf_density(o.pdf, o, (0, 0))
    far = pdf_density(o.pdf, o, (4, 0))
    assert far / near == pytest.approx(math.exp(-16 / (2 * 4)))
    w = pdf_weights(o.pdf, o, np.array([(0.0, 0.0), (4.0, 0.0)]))
    assert w[1] / w[0] == pytest.approx(far / near)
