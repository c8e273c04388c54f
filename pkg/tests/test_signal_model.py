import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpdtrack.errors import InvalidArgumentError
from fpdtrack.signal_model import (
    SimParams, TimeSeries, diffusion_constant, gen_random_walk_frequency,
    sigma_for_snr0, simulate_fpd, snr0,
)


def test_timeseries_times():
    ts = TimeSeries(np.zeros(4), f_s=4.0, t0=1.0)
    np.testing.assert_allclose(ts.times, [1.0, 1.25, 1.5, 1.75])
    assert ts.duration == 1.0


@pytest.mark.parametrize("kw", [dict(samples=[], f_s=1.0), dict(samples=[1.0], f_s=0.0)])
def test_timeseries_rejects_invalid(kw):
    with pytest.raises(InvalidArgumentError):
        TimeSeries(**kw)


def test_random_walk_zero_diffusion_is_constant():
    tr = gen_random_walk_frequency(84.6, 0.0, 1000.0, 500, seed=3)
    assert np.all(tr.freqs == 84.6)


def test_random_walk_starts_at_carrier():
    tr = gen_random_walk_frequency(10.0, 1.0, 100.0, 50, seed=1)
    assert tr.freqs[0] == 10.0


@pytest.mark.parametrize("f_s,n", [(0.0, 10), (-1.0, 10), (100.0, 0)])
def test_random_walk_invalid(f_s, n):
    with pytest.raises(InvalidArgumentError):
        gen_random_walk_frequency(1.0, 1.0, f_s, n)


def test_diffusion_constant_inverse_relation():
    assert diffusion_constant(2.0, 1.0) == 1.0


def test_random_walk_endpoint_variance():
    # Var(f[n-1] - f_c) = (n-1) * 2D/f_s
    D, f_s, n = 1e-6, 1000.0, 10**6
    ends = np.array([gen_random_walk_frequency(0.0, D, f_s, n, seed=s).freqs[-1]
                     for s in range(100)])
    expected = 2 * D * n / f_s
    assert abs(np.mean(ends ** 2) / expected - 1) < 0.3


def test_random_walk_increment_variance():
    D, f_s = 0.5, 10.0
    inc = np.concatenate([np.diff(gen_random_walk_frequency(0.0, D, f_s, 10**4 + 1, seed=s).freqs)
                          for s in range(5)])
    assert abs(inc.var() / (2 * D / f_s) - 1) < 0.1


def test_noiseless_envelope_at_t2star():
    p = SimParams(A0=2.0, T2star=0.25, f_c=1.0, sigma_eta=0.0, phi0=np.pi / 2,
                  f_s=1000.0, duration=1.0)
    ts, _ = simulate_fpd(p)
    # sin(2 pi * 1 Hz * 0.25 s + pi/2) = -1 ... use the envelope directly
    k = 250
    envelope = abs(ts.samples[k] / np.sin(2 * np.pi * 0.25 + np.pi / 2))
    assert envelope == pytest.approx(2.0 / np.e, rel=1e-12)


def test_noiseless_matches_closed_form():
    p = SimParams(A0=1.5, T2star=30.0, f_c=84.6, sigma_eta=0.0, phi0=0.4,
                  f_s=1000.0, duration=20.0)
    ts, tr = simulate_fpd(p)
    t = np.arange(len(ts)) / p.f_s
    ref = p.A0 * np.exp(-t / p.T2star) * np.sin(2 * np.pi * p.f_c * t + p.phi0)
    assert np.max(np.abs(ts.samples - ref)) < 1e-12 * p.A0
    assert np.all(tr.freqs == p.f_c)


def test_zero_amplitude_is_pure_noise():
    p = SimParams(A0=0.0, sigma_eta=0.3, duration=100.0, seed=5)
    ts, _ = simulate_fpd(p)
    assert len(ts) == 10**5
    assert abs(ts.samples.var() / 0.09 - 1) < 0.05


def test_dominant_fft_bin():
    p = SimParams(A0=1.0, T2star=1e9, f_c=84.6, sigma_eta=0.0, f_s=1000.0, duration=10.0)
    ts, _ = simulate_fpd(p)
    assert np.argmax(np.abs(np.fft.rfft(ts.samples))) == 846


def test_same_seed_bit_identical():
    p = SimParams(D=1e-6, sigma_eta=0.1, duration=5.0, seed=42)
    a, ta = simulate_fpd(p)
    b, tb = simulate_fpd(p)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(ta.freqs, tb.freqs)
    c, _ = simulate_fpd(SimParams(D=1e-6, sigma_eta=0.1, duration=5.0, seed=43))
    assert not np.array_equal(a.samples, c.samples)


def test_nyquist_violation():
    with pytest.raises(InvalidArgumentError):
        SimParams(f_c=600.0, f_s=1000.0)


def test_printed_phase_mode_equals_integrated_without_drift():
    base = dict(A0=1.0, D=0.0, sigma_eta=0.0, duration=3.0)
    a, _ = simulate_fpd(SimParams(phase_mode="integrated", **base))
    b, _ = simulate_fpd(SimParams(phase_mode="printed", **base))
    np.testing.assert_allclose(a.samples, b.samples, atol=1e-12)


def test_integrated_phase_follows_track():
    p = SimParams(A0=1.0, T2star=1e9, D=1e-2, sigma_eta=0.0, f_s=1000.0, duration=2.0, seed=1)
    ts, tr = simulate_fpd(p)
    phase = 2 * np.pi * np.concatenate(([0.0], np.cumsum(tr.freqs[:-1]))) / p.f_s
    np.testing.assert_allclose(ts.samples, np.sin(phase), atol=1e-9)


@pytest.mark.parametrize("a0,sig,expected", [(1.0, 1.0, 0.5), (2.0, 1.0, 2.0)])
def test_snr0_values(a0, sig, expected):
    assert snr0(a0, sig) == expected


@given(a0=st.floats(1e-3, 1e3), sig=st.floats(1e-3, 1e3))
def test_snr0_quadratic_scaling(a0, sig):
    assert snr0(10 * a0, sig) == pytest.approx(100 * snr0(a0, sig), rel=1e-12)
    assert snr0(a0, sigma_for_snr0(a0, snr0(a0, sig))) == pytest.approx(snr0(a0, sig), rel=1e-9)


def test_snr0_zero_noise():
    with pytest.raises(ZeroDivisionError):
        snr0(1.0, 0.0)
