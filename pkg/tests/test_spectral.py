import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpdtrack.errors import InvalidArgumentError
from fpdtrack.signal_model import SimParams, TimeSeries, make_rng, simulate_fpd
from fpdtrack.spectral import (
    EPS_SING, BlockSpec, SpectralWindow, block_dft, block_dfts, h_jacobian,
    h_measure, initial_state, segment, select_center_bin, stack_complex,
)

F_S = 1000.0


def brute_dft(z, bins):
    """Reference DFT by direct summation, scaled by 2/N."""
    n = np.arange(z.size)
    return np.array([np.sum(z * np.exp(-2j * np.pi * m * n / z.size)) for m in bins]) * 2 / z.size


def synth(x, win, spec):
    t = np.arange(spec.n_bl) / spec.f_s
    return x[0] * np.cos(2 * np.pi * (win.f0 + x[3]) * t + x[2])


def fd_jacobian(x, win, spec, rel=1e-6):
    out = np.zeros((2 * win.n_coeffs, 5))
    for j in range(5):
        step = rel * (1.0 / spec.t_bl if j == 3 else max(abs(x[j]), 1.0))
        e = np.zeros(5)
        e[j] = step
        hp = stack_complex(h_measure(x + e, win, spec))
        hm = stack_complex(h_measure(x - e, win, spec))
        out[:, j] = (hp - hm) / (2 * step)
    return out


@pytest.fixture
def setup():
    spec = BlockSpec(n_bl=4500, f_s=F_S, n_blocks=1)
    win = SpectralWindow(m_center=381, l_half=1, t_bl=spec.t_bl)
    return win, spec


@pytest.mark.parametrize("n,n_bl,blocks,rem", [(1000, 300, 3, 100), (1000, 1000, 1, 0)])
def test_segment_counts(n, n_bl, blocks, rem):
    spec = segment(TimeSeries(np.zeros(n), F_S), n_bl / F_S)
    assert (spec.n_bl, spec.n_blocks, spec.remainder_dropped) == (n_bl, blocks, rem)


def test_segment_eks_block_length():
    spec = segment(TimeSeries(np.zeros(10_000), F_S), 4.5)
    assert spec.n_bl == 4500
    assert spec.t_bl == 4.5


def test_segment_block_too_long():
    with pytest.raises(InvalidArgumentError):
        segment(TimeSeries(np.zeros(10), F_S), 1.0)


def _tone(f, seconds=10.0, extra=None):
    t = np.arange(int(seconds * F_S)) / F_S
    y = np.sin(2 * np.pi * f * t)
    if extra:
        y = y + extra[1] * np.sin(2 * np.pi * extra[0] * t)
    return TimeSeries(y, F_S)


def test_select_center_bin_on_grid():
    win = select_center_bin(_tone(84.6), 10.0, 50.0, 150.0)
    assert win.m_center == 846
    assert win.f0 == pytest.approx(84.6)


def test_select_center_bin_off_grid():
    win = select_center_bin(_tone(84.63), 10.0, 50.0, 150.0)
    assert win.m_center == 846
    assert 84.63 - win.f0 == pytest.approx(0.03, abs=1e-9)


def test_select_center_bin_respects_range():
    ts = _tone(84.6, extra=(200.0, 5.0))
    assert select_center_bin(ts, 10.0, 50.0, 150.0).m_center == 846


def test_select_center_bin_empty_range():
    with pytest.raises(InvalidArgumentError):
        select_center_bin(_tone(84.6), 10.0, 84.61, 84.65)


def test_block_dft_unit_cosine():
    n = np.arange(8)
    ts = TimeSeries(np.cos(2 * np.pi * 2 / 8 * n), f_s=1.0)
    spec = segment(ts, 8.0)
    win = SpectralWindow(2, 0, spec.t_bl)
    c = block_dft(ts, spec, win, 0).coeffs
    assert c[0] == pytest.approx(1.0 + 0j, abs=1e-15)
    # un-normalised peak equals n_bl / 2
    assert np.abs(np.fft.fft(ts.samples)[2]) == pytest.approx(4.0, abs=1e-12)


def test_block_dft_zero_block(setup):
    win, _ = setup
    ts = TimeSeries(np.zeros(9000), F_S)
    spec = segment(ts, 4.5)
    assert np.all(block_dft(ts, spec, win, 1).coeffs == 0)


def test_block_dft_index_range(setup):
    win, _ = setup
    ts = TimeSeries(np.zeros(9000), F_S)
    spec = segment(ts, 4.5)
    with pytest.raises(InvalidArgumentError):
        block_dft(ts, spec, win, 2)


def test_block_dfts_matches_single_blocks():
    p = SimParams(sigma_eta=0.1, duration=20.0, seed=2)
    ts, _ = simulate_fpd(p)
    spec = segment(ts, 4.5)
    win = select_center_bin(ts, 4.5, 50, 150)
    allc = block_dfts(ts, spec, win)
    for k in range(spec.n_blocks):
        np.testing.assert_allclose(allc[k], block_dft(ts, spec, win, k).coeffs, atol=1e-14)
        np.testing.assert_allclose(allc[k], brute_dft(ts.samples[spec.block_slice(k)], win.bins),
                                   atol=1e-12)


def test_noise_coefficient_variance():
    n_bl, trials = 1000, 10_000
    noise = make_rng(11).standard_normal((trials, n_bl))
    ts = TimeSeries(noise.ravel(), F_S)
    spec = segment(ts, 1.0)
    win = SpectralWindow(85, 1, spec.t_bl)
    c = block_dfts(ts, spec, win)
    expected = 2.0 / n_bl
    for part in (c.real, c.imag):
        ratio = part.var(axis=0) / expected
        assert np.all(np.abs(ratio - 1) < 0.1)


def test_h_measure_on_bin(setup):
    win, spec = setup
    h = h_measure([1.0, 0.0, 0.0, 0.0, 0.0], win, spec)
    assert h[1] == pytest.approx(1.0 + 0j, abs=1e-12)


def test_h_measure_zero_amplitude(setup):
    win, spec = setup
    assert np.all(h_measure([0.0, 0.3, 1.2, 0.05, 0.0], win, spec) == 0)


def test_h_measure_matches_dft_small_offset(setup):
    win, spec = setup
    x = np.array([1.0, 0.0, 0.3, 0.02 / spec.t_bl, 0.0])
    z = synth(x, win, spec)
    np.testing.assert_allclose(h_measure(x, win, spec), brute_dft(z, win.bins), atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.01, 10), phi=st.floats(-50, 50), delta=st.floats(-0.9, 0.9),
       l_half=st.integers(0, 3))
def test_h_measure_property(a, phi, delta, l_half):
    spec = BlockSpec(n_bl=900, f_s=F_S, n_blocks=1)
    win = SpectralWindow(m_center=80, l_half=l_half, t_bl=spec.t_bl)
    x = np.array([a, 0.0, phi, delta / spec.t_bl, 0.0])
    np.testing.assert_allclose(h_measure(x, win, spec), brute_dft(synth(x, win, spec), win.bins),
                               atol=1e-10 * max(a, 1))


def test_h_measure_across_singularity_threshold(setup):
    win, spec = setup
    # |1 - exp(i theta)| ~ 2 pi df dt near the centre bin
    df_edge = EPS_SING / (2 * np.pi * spec.dt)
    for df in (0.0, df_edge / 2, -df_edge / 2, df_edge * 0.999, df_edge * 1.001, -df_edge * 1.01):
        x = np.array([1.0, 0.0, 0.7, df, 0.0])
        np.testing.assert_allclose(h_measure(x, win, spec),
                                   brute_dft(synth(x, win, spec), win.bins), atol=1e-10)


def test_h_measure_nan_state(setup):
    win, spec = setup
    with pytest.raises(InvalidArgumentError):
        h_measure([np.nan, 0, 0, 0, 0], win, spec)


def test_jacobian_amplitude_column(setup):
    win, spec = setup
    x = np.array([2.5, 0.1, 0.4, 0.03, 0.001])
    J = h_jacobian(x, win, spec)
    np.testing.assert_allclose(J[:, 0], stack_complex(h_measure(x, win, spec)) / 2.5, rtol=1e-13)
    assert np.all(J[:, 1] == 0) and np.all(J[:, 4] == 0)


def test_jacobian_finite_differences(setup):
    win, spec = setup
    rng = np.random.default_rng(4)
    for _ in range(100):
        x = np.array([rng.uniform(0.1, 3), 0.0, rng.uniform(-4, 4),
                      rng.uniform(-0.9, 0.9) / spec.t_bl, 0.0])
        J = h_jacobian(x, win, spec)
        Jn = fd_jacobian(x, win, spec)
        for j in (0, 2, 3):
            rel = np.linalg.norm(J[:, j] - Jn[:, j]) / np.linalg.norm(Jn[:, j])
            assert rel < 1e-6


def test_jacobian_in_singular_region(setup):
    win, spec = setup
    x = np.array([1.3, 0.0, 0.2, 1e-12, 0.0])
    J = h_jacobian(x, win, spec)
    Jn = fd_jacobian(np.array([1.3, 0.0, 0.2, 0.0, 0.0]), win, spec, rel=1e-4)
    np.testing.assert_allclose(J[:, 3], Jn[:, 3], rtol=1e-5, atol=1e-6 * np.abs(Jn[:, 3]).max())


def test_initial_state_recovers_tone(setup):
    win, spec = setup
    x = np.array([0.8, 0.0, 1.1, 0.07, 0.0])
    z = synth(x, win, spec)
    a, df, phi = initial_state(brute_dft(z, win.bins), win, spec)
    assert a == pytest.approx(0.8, rel=1e-2)
    assert df == pytest.approx(0.07, abs=2e-3)
    assert phi == pytest.approx(1.1, abs=2e-2)
