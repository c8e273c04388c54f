"""Simulated free-precession-decay (FPD) signals.

The simulated record is an exponentially decaying sinusoid whose frequency
performs a Gaussian random walk around a constant carrier, plus white
Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

PHASE_MODES = ("integrated", "printed")


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled real signal.

    Sample ``k`` is taken at ``t0 + k / f_s``.
    """

    samples: np.ndarray
    f_s: float
    t0: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size < 1:
            raise InvalidArgumentError("samples must be a non-empty 1-D array")
        if not self.f_s > 0:
            raise InvalidArgumentError(f"f_s must be positive, got {self.f_s}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "f_s", float(self.f_s))
        object.__setattr__(self, "t0", float(self.t0))

    def __len__(self):
        return self.samples.size

    @property
    def dt(self) -> float:
        return 1.0 / self.f_s

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.f_s

    @property
    def duration(self) -> float:
        return self.samples.size / self.f_s


@dataclass(frozen=True)
class FrequencyTrack:
    """Ground-truth instantaneous frequency, one value per sample."""

    freqs: np.ndarray
    f_s: float

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float)
        freqs.setflags(write=False)
        object.__setattr__(self, "freqs", freqs)

    def __len__(self):
        return self.freqs.size

    def block_means(self, n_bl: int, n_blocks: int, offset: int = 0) -> np.ndarray:
        """Average the track over consecutive blocks of ``n_bl`` samples."""
        stop = offset + n_bl * n_blocks
        if stop > self.freqs.size:
            raise InvalidArgumentError(
                f"truth has {self.freqs.size} samples, estimate spans {stop}")
        return self.freqs[offset:stop].reshape(n_blocks, n_bl).mean(axis=1)


@dataclass(frozen=True)
class SimParams:
    """Parameters of a simulated FPD record.

    ``phase_mode`` selects how the random-walk frequency enters the phase:
    ``"integrated"`` accumulates ``2*pi*sum(f)/f_s`` (the instantaneous
    frequency then equals the track), ``"printed"`` uses ``2*pi*f(t)*t``
    literally. Both coincide for ``D == 0``.
    """

    A0: float = 1.0
    T2star: float = 3000.0
    f_c: float = 84.6
    D: float = 0.0
    sigma_eta: float = 0.01
    phi0: float = 0.0
    f_s: float = 1000.0
    duration: float = 200.0
    seed: int = 0
    phase_mode: str = "integrated"

    def __post_init__(self):
        if self.A0 < 0:
            raise InvalidArgumentError("A0 must be >= 0")
        if not self.T2star > 0:
            raise InvalidArgumentError("T2star must be > 0")
        if self.D < 0:
            raise InvalidArgumentError("D must be >= 0")
        if self.sigma_eta < 0:
            raise InvalidArgumentError("sigma_eta must be >= 0")
        if not self.f_s > 0:
            raise InvalidArgumentError("f_s must be > 0")
        if not self.f_s > 2 * self.f_c:
            raise InvalidArgumentError(
                f"f_s={self.f_s} Hz violates Nyquist for f_c={self.f_c} Hz")
        if not self.duration > 0:
            raise InvalidArgumentError("duration must be > 0")
        if self.phase_mode not in PHASE_MODES:
            raise InvalidArgumentError(f"phase_mode must be one of {PHASE_MODES}")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.f_s))


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; normals come from numpy's ziggurat, which is platform stable."""
    return np.random.Generator(np.random.PCG64(seed))


def gen_random_walk_frequency(f_c, D, f_s, n, seed=0, rng=None) -> FrequencyTrack:
    """Random-walk frequency track starting at ``f_c``.

    Increments are N(0, 2D/f_s), so that ``D = sigma_df**2 * f_s / 2``.
    """
    if not f_s > 0:
        raise InvalidArgumentError(f"f_s must be positive, got {f_s}")
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    if D < 0:
        raise InvalidArgumentError(f"D must be >= 0, got {D}")
    if rng is None:
        rng = make_rng(seed)
    freqs = np.full(int(n), float(f_c))
    if D > 0 and n > 1:
        steps = rng.standard_normal(int(n) - 1) * np.sqrt(2.0 * D / f_s)
        freqs[1:] += np.cumsum(steps)
    return FrequencyTrack(freqs, f_s)


def diffusion_constant(sigma_df2, f_s) -> float:
    """Diffusion constant of a walk with per-sample increment variance ``sigma_df2``."""
    return sigma_df2 * f_s / 2.0


def simulate_fpd(p: SimParams) -> tuple[TimeSeries, FrequencyTrack]:
    """Simulate one FPD record and return it with its true frequency track."""
    n = p.n_samples
    if n < 1:
        raise InvalidArgumentError("duration * f_s must give at least one sample")
    rng = make_rng(p.seed)
    track = gen_random_walk_frequency(p.f_c, p.D, p.f_s, n, rng=rng)
    t = np.arange(n) / p.f_s
    if p.phase_mode == "printed":
        phase = 2 * np.pi * track.freqs * t + p.phi0
    else:
        # offset from f_c accumulated separately so D == 0 is the exact closed form
        offset = np.concatenate(([0.0], np.cumsum(track.freqs[:-1] - p.f_c))) / p.f_s
        phase = 2 * np.pi * p.f_c * t + p.phi0 + 2 * np.pi * offset
    y = p.A0 * np.exp(-t / p.T2star) * np.sin(phase)
    if p.sigma_eta > 0:
        y = y + rng.standard_normal(n) * p.sigma_eta
    return TimeSeries(y, p.f_s, 0.0), track


def snr0(A0, sigma_eta) -> float:
    """Initial signal-to-noise ratio ``A0**2 / (2 sigma_eta**2)``."""
    if sigma_eta == 0:
        raise ZeroDivisionError("sigma_eta must be non-zero")
    return A0 ** 2 / (2.0 * sigma_eta ** 2)


def sigma_for_snr0(A0, snr) -> float:
    """Noise std that yields the requested SNR0 for amplitude ``A0``."""
    if not snr > 0:
        raise InvalidArgumentError("snr must be > 0")
    return A0 / np.sqrt(2.0 * snr)
