import numpy as np
import pytest

from fbtomo import ParameterError, Timing, auto_timing, make_grid, make_ring_array
from fbtomo.geometry import grid_detector_distances


def test_ring_positions_on_circle():
    arr = make_ring_array(256, 0.040, 270.0)
    r = np.hypot(arr.positions[:, 0], arr.positions[:, 1])
    assert np.max(np.abs(r - 0.040) / 0.040) <= 1e-12


def test_ring_spacing_and_chord_256_270():
    arr = make_ring_array(256, 0.040, 270.0)
    ang = np.unwrap(np.radians(arr.angles_deg()))
    steps = np.degrees(np.diff(ang))
    expected = 270.0 / 255.0
    assert steps == pytest.approx(expected, rel=1e-12)
    chord = np.hypot(*(arr.positions[1] - arr.positions[0]))
    # closed-form chord of the uniform spacing
    assert chord == pytest.approx(2 * 0.040 * np.sin(np.radians(expected / 2)),
                                  rel=1e-12)
    assert chord == pytest.approx(0.739e-3, rel=5e-3)


def test_full_circle_four_elements_square():
    arr = make_ring_array(4, 1.0, 360.0)
    ang = np.sort(np.mod(arr.angles_deg(), 360.0))
    # uniform square, up to the documented global rotation
    assert np.diff(ang) == pytest.approx([90.0, 90.0, 90.0], abs=1e-9)


def test_full_circle_gap_equals_spacing():
    arr = make_ring_array(10, 0.05, 360.0)
    ang = np.sort(np.mod(arr.angles_deg(), 360.0))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 360.0]]))
    assert gaps == pytest.approx(36.0, abs=1e-9)


def test_partial_arc_centered_on_minus_y():
    arr = make_ring_array(5, 1.0, 270.0)
    mid = arr.positions[2]
    assert mid == pytest.approx([0.0, -1.0], abs=1e-12)


def test_ring_array_errors():
    with pytest.raises(ParameterError):
        make_ring_array(0, 1.0, 270.0)
    with pytest.raises(ParameterError):
        make_ring_array(8, -1.0, 270.0)
    with pytest.raises(ParameterError):
        make_ring_array(8, 1.0, 0.0)
    with pytest.raises(ParameterError):
        make_ring_array(8, 1.0, 361.0)


def test_grid_center_pixel():
    grid = make_grid(3, 3, 1e-3)
    assert grid.index_to_position(1, 1) == pytest.approx((0.0, 0.0))


def test_grid_two_by_two_corner():
    grid = make_grid(2, 2, 1e-3)
    x, y = grid.index_to_position(0, 0)
    assert (x, y) == pytest.approx((-0.5e-3, -0.5e-3))


def test_grid_field_of_view_401():
    grid = make_grid(401, 401, 40e-6)
    fov_x, fov_y = grid.extent
    assert fov_x == pytest.approx(16.04e-3)
    span = grid.x_coords()[-1] - grid.x_coords()[0]
    assert span == pytest.approx(16e-3)


def test_grid_round_trip_exact():
    grid = make_grid(7, 5, 3.7e-4, origin=(1.5e-3, -2e-3))
    ii, jj = np.meshgrid(np.arange(7), np.arange(5), indexing="ij")
    x, y = grid.index_to_position(ii, jj)
    i2, j2 = grid.position_to_index(x, y)
    assert np.array_equal(i2, ii)
    assert np.array_equal(j2, jj)


def test_grid_errors():
    with pytest.raises(ParameterError):
        make_grid(1, 5, 1e-3)
    with pytest.raises(ParameterError):
        make_grid(5, 5, 0.0)


def test_timing_validation():
    with pytest.raises(ParameterError):
        Timing(n_samples=1, sample_rate=1e6, t0=0.0)
    with pytest.raises(ParameterError):
        Timing(n_samples=16, sample_rate=0.0, t0=0.0)
    with pytest.raises(ParameterError):
        Timing(n_samples=16, sample_rate=1e6, t0=0.0, speed_of_sound=-1.0)


def test_auto_timing_covers_grid():
    grid = make_grid(32, 32, 5e-4)
    arr = make_ring_array(32, 0.04, 270.0)
    tim = auto_timing(grid, arr, sample_rate=10e6)
    dmin, dmax = grid_detector_distances(grid, arr)
    c = tim.speed_of_sound
    assert tim.t0 <= dmin.min() / c
    assert tim.t_end >= dmax.max() / c
    assert tim.n_samples % 32 == 0


def test_detector_array_rejects_off_circle():
    from fbtomo import DetectorArray
    pos = np.array([[1.0, 0.0], [0.0, 1.001]])
    with pytest.raises(ParameterError):
        DetectorArray(positions=pos, radius=1.0, coverage_deg=90.0)
