import numpy as np
import pytest

from fegut.errors import ConfigurationError, DatasetParseError, TimeRangeError
from fegut.geoframe import geodetic_to_ecef
from fegut.trajectory import (
    DEFAULT_ORIGIN,
    Shape,
    TrajectorySpec,
    TruthTable,
    _lemniscate,
    build_truth_table,
    sample_truth,
    static_truth_table,
)


@pytest.fixture(scope="module")
def circle_table():
    return build_truth_table(TrajectorySpec(shape="circle", duration=60.0, table_rate=200.0))


def test_lemniscate_starts_at_western_apex(short_table):
    s = sample_truth(short_table, 0.0)
    np.testing.assert_allclose(s.r, geodetic_to_ecef(*DEFAULT_ORIGIN), atol=1e-6)


def test_lemniscate_constant_speed(short_table):
    speed = np.linalg.norm(short_table.velocities, axis=1)
    assert np.max(np.abs(speed - 5.0)) < 0.01


def test_constant_speed_means_acceleration_perpendicular(short_table):
    dots = np.sum(short_table.velocities * short_table.accelerations, axis=1)
    assert np.max(np.abs(dots)) < 1e-6


def test_stays_in_horizontal_plane(short_table):
    enu = short_table.frame.to_enu(short_table.positions)
    assert np.max(np.abs(enu[:, 2])) < 1e-6


def test_lemniscate_extent():
    table = build_truth_table(TrajectorySpec(duration=170.0, table_rate=100.0))
    enu = table.frame.to_enu(table.positions)
    assert enu[:, 0].min() == pytest.approx(0.0, abs=1e-6)
    assert enu[:, 0].max() == pytest.approx(200.0, abs=1e-2)


def test_circle_centripetal_acceleration(circle_table):
    acc = np.linalg.norm(circle_table.accelerations, axis=1)
    np.testing.assert_allclose(acc, 5.0**2 / 100.0, rtol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(circle_table.velocities, axis=1), 5.0, rtol=1e-9)


def test_circle_starts_at_origin(circle_table):
    np.testing.assert_allclose(circle_table.sample(0.0).r, geodetic_to_ecef(*DEFAULT_ORIGIN), atol=1e-6)


def test_finite_differences_match_stored_derivatives(short_table):
    t, r, v, a = short_table.times, short_table.positions, short_table.velocities, short_table.accelerations
    dt = t[1] - t[0]
    v_fd = (r[2:] - r[:-2]) / (2 * dt)
    a_fd = (v[2:] - v[:-2]) / (2 * dt)
    # central differences are O(dt^2) accurate; jerk and snap are O(0.1) here
    assert np.max(np.abs(v_fd - v[1:-1])) < 1e-4
    assert np.max(np.abs(a_fd - a[1:-1])) < 1e-4


def test_analytic_lemniscate_derivatives_against_finite_differences():
    a = 100.0
    th = np.linspace(0.1, 6.2, 40)
    h = 1e-5
    p, dp, ddp = _lemniscate(th, a)
    pp, _, _ = _lemniscate(th + h, a)
    pm, _, _ = _lemniscate(th - h, a)
    np.testing.assert_allclose((pp - pm) / (2 * h), dp, atol=1e-6)
    _, dpp, _ = _lemniscate(th + h, a)
    _, dpm, _ = _lemniscate(th - h, a)
    np.testing.assert_allclose((dpp - dpm) / (2 * h), ddp, atol=1e-5)


def test_interpolation_between_grid_points(short_table):
    # off-grid samples agree with a finer reference table
    fine = build_truth_table(TrajectorySpec(duration=40.0, table_rate=1000.0))
    ts = np.linspace(0.0013, 39.7, 57)
    coarse_s = short_table.sample(ts)
    fine_s = fine.sample(ts)
    assert np.max(np.abs(coarse_s.r - fine_s.r)) < 1e-7
    assert np.max(np.abs(coarse_s.v - fine_s.v)) < 1e-5


def test_sampling_outside_span_raises(short_table):
    lo, hi = short_table.span
    with pytest.raises(TimeRangeError):
        short_table.sample(hi + 0.1)
    with pytest.raises(TimeRangeError):
        short_table.sample(np.array([lo - 1e-3, 0.0]))


def test_lead_time_allows_negative_times(short_table):
    assert short_table.span[0] == pytest.approx(-1.0)


@pytest.mark.parametrize(
    "kwargs",
    [{"duration": 0.0}, {"average_speed": -1.0}, {"table_rate": 50.0}, {"shape": "square"},
     {"origin": (95.0, 0.0, 0.0)}, {"horizontal_extent": 0.0}],
)
def test_invalid_specs(kwargs):
    with pytest.raises(ConfigurationError):
        build_truth_table(TrajectorySpec(**kwargs))


def test_csv_round_trip(tmp_path, short_table):
    path = tmp_path / "truth.csv"
    short_table.to_csv(path)
    back = TruthTable.from_csv(path)
    np.testing.assert_array_equal(back.times, short_table.times)
    np.testing.assert_array_equal(back.positions, short_table.positions)
    np.testing.assert_array_equal(back.accelerations, short_table.accelerations)
    assert tuple(back.origin) == tuple(short_table.origin)


def test_csv_bad_row_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,rx,ry,rz,vx,vy,vz,ax,ay,az\n0,1,2,3,4,5,6,7,8,9\n1,2,3\n")
    with pytest.raises(DatasetParseError, match="line 3"):
        TruthTable.from_csv(path)


def test_static_table_is_motionless():
    table = static_truth_table(duration=5.0)
    s = table.sample(np.linspace(0, 5, 11))
    assert np.all(s.v == 0) and np.all(s.a == 0)
    assert np.ptp(s.r, axis=0).max() == 0


def test_shape_enum_round_trip():
    assert TrajectorySpec(shape="circle").validate().shape is Shape.CIRCLE
