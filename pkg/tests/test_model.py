import numpy as np
import pytest

from fbtomo import (BuildError, Image, ParameterError, ShapeError, Sinogram,
                    apply, apply_adjoint, auto_timing, build_model,
                    convolve_eir, make_gaussian_eir, make_grid,
                    make_ring_array)
from fbtomo.geometry import Timing


def test_adjoint_identity_against_transpose(tiny_setup, rng):
    grid, _, _, model = tiny_setup
    mt = model.matrix.T  # explicit sparse transpose as the oracle
    for _ in range(20):
        x = rng.standard_normal(grid.n_pixels)
        y = rng.standard_normal(model.shape[0])
        lhs = float((model.matrix @ x) @ y)
        rhs = float(x @ (mt @ y))
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1e-30)


def test_apply_adjoint_matches_transpose(tiny_setup, rng):
    grid, array, timing, model = tiny_setup
    y = rng.standard_normal((array.n_elements, timing.n_samples))
    out = apply_adjoint(model, Sinogram(data=y, timing=timing))
    expected = (model.matrix.T @ y.ravel()).reshape(grid.nx, grid.ny)
    assert np.array_equal(out.values, expected)
    assert not out.nonneg


def test_single_pixel_support_and_bipolarity(tiny_setup):
    grid, array, timing, model = tiny_setup
    values = np.zeros((grid.nx, grid.ny))
    values[8, 5] = 1.0
    sino = apply(model, Image(grid=grid, values=values))
    c = timing.speed_of_sound
    px, py = grid.index_to_position(8, 5)
    diag = grid.pixel_size * np.sqrt(2.0)
    for d in range(array.n_elements):
        trace = sino.data[d]
        nz = np.nonzero(np.abs(trace) > 1e-12 * np.abs(trace).max())[0]
        dist = np.hypot(array.positions[d, 0] - px, array.positions[d, 1] - py)
        t_nz = timing.t0 + nz / timing.sample_rate
        # support confined to |c t - dist| <= c dt + pixel diagonal
        assert np.all(np.abs(c * t_nz - dist) <= c / timing.sample_rate + diag)
        signs = np.sign(trace[nz])
        assert np.count_nonzero(np.diff(signs)) == 1  # bipolar
        k_arrival = (dist / c - timing.t0) * timing.sample_rate
        assert nz[0] <= k_arrival <= nz[-1]


def test_apply_linearity(tiny_setup, rng):
    grid, _, _, model = tiny_setup
    x1 = rng.random((grid.nx, grid.ny))
    x2 = rng.random((grid.nx, grid.ny))
    s1 = apply(model, Image(grid=grid, values=x1))
    s2 = apply(model, Image(grid=grid, values=x2))
    s12 = apply(model, Image(grid=grid, values=x1 + x2))
    err = np.abs(s12.data - s1.data - s2.data).max()
    assert err < 1e-12 * np.abs(s12.data).max()


def test_zero_image_zero_sinogram(tiny_setup):
    grid, _, _, model = tiny_setup
    sino = apply(model, Image(grid=grid, values=np.zeros((grid.nx, grid.ny))))
    assert not sino.data.any()


def test_zero_sinogram_zero_image(tiny_setup):
    grid, array, timing, model = tiny_setup
    img = apply_adjoint(model, Sinogram(
        data=np.zeros((array.n_elements, timing.n_samples)), timing=timing))
    assert not img.values.any()


def test_adjoint_of_delta_concentrates(tiny_setup):
    grid, _, _, model = tiny_setup
    values = np.zeros((grid.nx, grid.ny))
    values[4, 7] = 1.0
    sino = apply(model, Image(grid=grid, values=values))
    back = apply_adjoint(model, sino)
    peak = np.unravel_index(np.argmax(np.abs(back.values)), back.values.shape)
    assert abs(peak[0] - 4) <= 2 and abs(peak[1] - 7) <= 2


def test_translation_covariance(tiny_setup):
    grid, array, timing, model = tiny_setup
    d = 0  # detector on the -y axis; pixels below center move toward it
    values_a = np.zeros((grid.nx, grid.ny))
    values_b = np.zeros((grid.nx, grid.ny))
    values_a[6, 6] = 1.0
    values_b[6, 5] = 1.0  # one pixel toward -y
    ta = apply(model, Image(grid=grid, values=values_a)).data[d]
    tb = apply(model, Image(grid=grid, values=values_b)).data[d]
    lag = np.argmax(np.correlate(ta, tb, mode="full")) - (ta.size - 1)
    dxa = np.hypot(*(array.positions[d] - grid.index_to_position(6, 6)))
    dxb = np.hypot(*(array.positions[d] - grid.index_to_position(6, 5)))
    expected = (dxa - dxb) / timing.speed_of_sound * timing.sample_rate
    assert abs(lag - expected) <= 1.0


def test_sparsity_reported(tiny_setup):
    model = tiny_setup[3]
    assert model.nnz > 0
    assert model.memory_bytes > model.nnz * 12  # data + indices + indptr


def test_window_too_short_names_pair():
    grid = make_grid(8, 8, 1e-3)
    arr = make_ring_array(4, 0.03, 360.0)
    tim = Timing(n_samples=16, sample_rate=5e6, t0=1.5e-5)
    with pytest.raises(BuildError, match=r"detector \d+"):
        build_model(grid, arr, tim)
    late = Timing(n_samples=64, sample_rate=5e6, t0=2.2e-5)
    with pytest.raises(BuildError, match="already receives"):
        build_model(grid, arr, late)


def test_grid_mismatch_raises(tiny_setup):
    _, _, _, model = tiny_setup
    other = make_grid(10, 10, 1e-3)
    with pytest.raises(ShapeError):
        apply(model, Image(grid=other, values=np.zeros((10, 10))))


def test_shape_mismatch_adjoint(tiny_setup):
    _, _, timing, model = tiny_setup
    bad = Sinogram(data=np.zeros((3, timing.n_samples)), timing=timing)
    with pytest.raises(ShapeError):
        apply_adjoint(model, bad)


def test_eir_identity(tiny_setup, rng):
    _, array, timing, model = tiny_setup
    sino = Sinogram(data=rng.standard_normal((array.n_elements,
                                              timing.n_samples)),
                    timing=timing)
    out = convolve_eir(sino, np.array([1.0]))
    assert np.array_equal(out.data, sino.data)


def test_eir_two_tap_average(tiny_setup, rng):
    _, array, timing, _ = tiny_setup
    data = rng.standard_normal((array.n_elements, timing.n_samples))
    sino = Sinogram(data=data, timing=timing)
    out = convolve_eir(sino, np.array([0.5, 0.5]))
    # direct summation oracle
    expected = 0.5 * data
    expected[:, 1:] += 0.5 * data[:, :-1]
    assert np.allclose(out.data, expected, rtol=0, atol=1e-15)


def test_eir_band_limits_tones():
    timing = Timing(n_samples=512, sample_rate=40e6, t0=0.0)
    eir = make_gaussian_eir(5e6, 1.5, timing.sample_rate)
    t = timing.times()
    rms = {}
    for freq in (5e6, 20e6):
        tone = np.sin(2 * np.pi * freq * t)[None, :]
        out = convolve_eir(Sinogram(data=tone, timing=timing), eir)
        mid = out.data[0, 100:-100]  # steady state
        rms[freq] = np.sqrt(np.mean(mid ** 2))
    attenuation_db = 20 * np.log10(rms[5e6] / rms[20e6])
    assert attenuation_db >= 20.0


def test_eir_errors(tiny_setup, rng):
    _, array, timing, _ = tiny_setup
    sino = Sinogram(data=np.zeros((array.n_elements, timing.n_samples)),
                    timing=timing)
    with pytest.raises(ParameterError):
        convolve_eir(sino, np.array([]))
    with pytest.raises(ParameterError):
        convolve_eir(sino, np.ones(timing.n_samples + 1))


def test_image_nonneg_flag_validation(tiny_setup):
    grid = tiny_setup[0]
    with pytest.raises(ParameterError):
        Image(grid=grid, values=np.full((grid.nx, grid.ny), -1.0), nonneg=True)
