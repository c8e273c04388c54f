"""Block segmentation, windowed block DFTs and the analytic DFT measurement model.

Within block ``k`` the signal is modelled as

    z_k(t_n) = A_k cos(2 pi (f0 + df_k) t_n + phi_k),   t_n = n / f_s,

with ``f0 = M / t_bl`` an integer number of periods per block. The DFT
coefficients at bins ``M-L .. M+L`` have a closed form which serves as the
measurement function of the Kalman smoother. Both the data DFT and the model
are scaled by ``2 / n_bl``, so a unit cosine on a bin gives a coefficient of
1 and white noise of variance s**2 gives real and imaginary parts of
variance ``2 s**2 / n_bl``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .signal_model import TimeSeries

EPS_SING = 1e-8

# state vector layout, shared with the Kalman module
IA, IDA, IPHI, IDF, IDDF = range(5)


@dataclass(frozen=True)
class BlockSpec:
    n_bl: int
    f_s: float
    n_blocks: int
    remainder_dropped: int = 0

    def __post_init__(self):
        if self.n_bl < 2:
            raise InvalidArgumentError(f"n_bl must be >= 2, got {self.n_bl}")
        if self.n_blocks < 1:
            raise InvalidArgumentError("need at least one block")

    @property
    def t_bl(self) -> float:
        return self.n_bl / self.f_s

    @property
    def dt(self) -> float:
        return 1.0 / self.f_s

    def block_slice(self, k: int) -> slice:
        return slice(k * self.n_bl, (k + 1) * self.n_bl)

    def block_centers(self, t0: float = 0.0) -> np.ndarray:
        return t0 + (np.arange(self.n_blocks) + 0.5) * self.t_bl


@dataclass(frozen=True)
class SpectralWindow:
    m_center: int
    l_half: int
    t_bl: float

    def __post_init__(self):
        if self.l_half < 0:
            raise InvalidArgumentError("l_half must be >= 0")
        if self.m_center - self.l_half < 1:
            raise InvalidArgumentError(
                f"window [{self.m_center - self.l_half}, {self.m_center + self.l_half}] "
                "reaches DC")

    @property
    def f0(self) -> float:
        return self.m_center / self.t_bl

    @property
    def bins(self) -> np.ndarray:
        return np.arange(self.m_center - self.l_half, self.m_center + self.l_half + 1)

    @property
    def n_coeffs(self) -> int:
        return 2 * self.l_half + 1

    def check(self, spec: BlockSpec):
        if self.m_center + self.l_half > spec.n_bl - 1:
            raise InvalidArgumentError("window exceeds the last DFT bin")
        if not np.isclose(self.t_bl, spec.t_bl, rtol=1e-12, atol=0):
            raise InvalidArgumentError("window and block spec disagree on t_bl")


@dataclass(frozen=True)
class BlockMeasurement:
    coeffs: np.ndarray
    block_index: int

    def stacked(self) -> np.ndarray:
        return stack_complex(self.coeffs)


def stack_complex(z) -> np.ndarray:
    """[Re; Im] stacking used for the real-valued measurement vector."""
    z = np.asarray(z)
    return np.concatenate([z.real, z.imag], axis=-1)


def block_length(t_bl, f_s) -> int:
    n_bl = int(round(t_bl * f_s))
    if n_bl < 2:
        raise InvalidArgumentError(f"t_bl={t_bl} s gives fewer than 2 samples per block")
    return n_bl


def segment(ts: TimeSeries, t_bl: float) -> BlockSpec:
    """Split ``ts`` into non-overlapping blocks of ``t_bl`` seconds.

    Trailing samples that do not fill a block are dropped.
    """
    n_bl = block_length(t_bl, ts.f_s)
    n = len(ts)
    if n_bl > n:
        raise InvalidArgumentError(
            f"block of {n_bl} samples is longer than the series ({n} samples)")
    n_blocks = n // n_bl
    return BlockSpec(n_bl=n_bl, f_s=ts.f_s, n_blocks=n_blocks,
                     remainder_dropped=n - n_blocks * n_bl)


def peak_bin(x, f_s, search_lo, search_hi) -> int:
    """Index of the largest |FFT| bin of ``x`` with frequency in [lo, hi]."""
    n = len(x)
    if not 0 < search_lo <= search_hi < f_s / 2:
        raise InvalidArgumentError(
            f"search range [{search_lo}, {search_hi}] Hz must lie inside (0, f_s/2)")
    lo = int(np.ceil(search_lo * n / f_s - 1e-9))
    hi = int(np.floor(search_hi * n / f_s + 1e-9))
    lo = max(lo, 1)
    if hi < lo:
        raise InvalidArgumentError(
            f"search range [{search_lo}, {search_hi}] Hz contains no DFT bin")
    spectrum = np.abs(np.fft.rfft(x))
    return lo + int(np.argmax(spectrum[lo:hi + 1]))


def select_center_bin(ts: TimeSeries, t_bl, search_lo, search_hi, l_half=1) -> SpectralWindow:
    """Pick the centre bin from the first block's spectrum within the search range."""
    spec = segment(ts, t_bl)
    m = peak_bin(ts.samples[:spec.n_bl], ts.f_s, search_lo, search_hi)
    win = SpectralWindow(m_center=m, l_half=l_half, t_bl=spec.t_bl)
    win.check(spec)
    return win


def _dft_basis(n_bl, bins) -> np.ndarray:
    # reduce m*n mod N so the exponent stays in [0, 2 pi)
    n = np.arange(n_bl)
    phase = np.outer(n, bins) % n_bl
    return np.exp(-2j * np.pi * phase / n_bl)


def block_dfts(ts: TimeSeries, spec: BlockSpec, win: SpectralWindow) -> np.ndarray:
    """Scaled DFT coefficients of every block, shape (n_blocks, 2L+1)."""
    win.check(spec)
    used = ts.samples[:spec.n_blocks * spec.n_bl].reshape(spec.n_blocks, spec.n_bl)
    return used @ _dft_basis(spec.n_bl, win.bins) * (2.0 / spec.n_bl)


def block_dft(ts: TimeSeries, spec: BlockSpec, win: SpectralWindow, k: int) -> BlockMeasurement:
    if not 0 <= k < spec.n_blocks:
        raise InvalidArgumentError(f"block index {k} out of range [0, {spec.n_blocks})")
    win.check(spec)
    z = ts.samples[spec.block_slice(k)]
    coeffs = z @ _dft_basis(spec.n_bl, win.bins) * (2.0 / spec.n_bl)
    return BlockMeasurement(coeffs, k)


def _geometric(theta, alpha, dtheta, dalpha, n):
    """Sum_{j<n} exp(i theta j) and its derivative along (dtheta, dalpha).

    ``alpha`` must equal ``n * theta`` modulo 2 pi; it is passed separately
    because it is known more accurately than ``n * theta``. The closed form
    exp(i(alpha-theta)/2) sin(alpha/2) / sin(theta/2) is used except where
    |1 - exp(i theta)| < EPS_SING, where the sum is evaluated term by term.
    """
    theta = np.asarray(theta, dtype=float)
    alpha = np.broadcast_to(alpha, theta.shape)
    dtheta = np.broadcast_to(dtheta, theta.shape)
    dalpha = np.broadcast_to(dalpha, theta.shape)
    s_t = np.sin(theta / 2)
    singular = 2 * np.abs(s_t) < EPS_SING
    g = np.empty(theta.shape, dtype=complex)
    dg = np.empty(theta.shape, dtype=complex)

    ok = ~singular
    if np.any(ok):
        th, al = theta[ok], alpha[ok]
        st = s_t[ok]
        sa = np.sin(al / 2)
        rot = np.exp(0.5j * (al - th))
        val = rot * sa / st
        g[ok] = val
        d_rot = 0.5j * (dalpha[ok] - dtheta[ok]) * val
        d_ratio = (0.5 * np.cos(al / 2) * dalpha[ok] * st
                   - 0.5 * sa * np.cos(th / 2) * dtheta[ok]) / st ** 2
        dg[ok] = d_rot + rot * d_ratio
    if np.any(singular):
        j = np.arange(n)
        terms = np.exp(1j * np.outer(theta[singular], j))
        g[singular] = terms.sum(axis=1)
        dg[singular] = 1j * dtheta[singular] * (terms @ j)
    return g, dg


def _model_terms(x, win: SpectralWindow, spec: BlockSpec):
    n = spec.n_bl
    bins = win.bins
    df = float(x[IDF])
    frac_dt = df * spec.dt
    alpha = 2 * np.pi * df * spec.t_bl
    # positive-frequency term: theta = 2 pi (f0 + df - f_m) dt
    pos = (win.m_center - bins) / n
    g1, dg1 = _geometric(2 * np.pi * (pos + frac_dt), alpha,
                         2 * np.pi * spec.dt, 2 * np.pi * spec.t_bl, n)
    # negative-frequency term: sum exp(-i 2 pi (f0 + df + f_m) dt j)
    neg = (win.m_center + bins) / n
    neg = neg - np.round(neg)
    g2, dg2 = _geometric(-2 * np.pi * (neg + frac_dt), -alpha,
                         -2 * np.pi * spec.dt, -2 * np.pi * spec.t_bl, n)
    return g1, dg1, g2, dg2


def _check_state(x):
    x = np.asarray(x, dtype=float)
    if x.shape != (5,):
        raise InvalidArgumentError(f"state must have 5 components, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"state is not finite: {x}")
    return x


def h_measure(x, win: SpectralWindow, spec: BlockSpec) -> np.ndarray:
    """Model DFT coefficients (complex, length 2L+1) for state ``x``."""
    x = _check_state(x)
    g1, _, g2, _ = _model_terms(x, win, spec)
    e = np.exp(1j * x[IPHI])
    return x[IA] / spec.n_bl * (e * g1 + np.conj(e) * g2)


def h_jacobian(x, win: SpectralWindow, spec: BlockSpec) -> np.ndarray:
    """Jacobian of the stacked [Re; Im] model with respect to the 5 states."""
    return h_and_jacobian(x, win, spec)[1]


def h_and_jacobian(x, win: SpectralWindow, spec: BlockSpec):
    """Stacked model vector and its Jacobian from one kernel evaluation."""
    x = _check_state(x)
    g1, dg1, g2, dg2 = _model_terms(x, win, spec)
    e = np.exp(1j * x[IPHI])
    ec = np.conj(e)
    scale = 1.0 / spec.n_bl
    base = scale * (e * g1 + ec * g2)
    cols = np.zeros((win.n_coeffs, 5), dtype=complex)
    cols[:, IA] = base
    cols[:, IPHI] = x[IA] * scale * 1j * (e * g1 - ec * g2)
    cols[:, IDF] = x[IA] * scale * (e * dg1 + ec * dg2)
    return stack_complex(x[IA] * base), np.concatenate([cols.real, cols.imag], axis=0)


def initial_state(coeffs, win: SpectralWindow, spec: BlockSpec):
    """Rough (amplitude, frequency offset, phase) from one block's coefficients.

    The offset comes from three-bin interpolation around the centre bin
    (bias-corrected for a rectangular window); amplitude and phase follow by
    dividing the centre coefficient by the positive-frequency kernel.
    """
    coeffs = np.asarray(coeffs)
    c = win.l_half
    n = spec.n_bl
    delta = 0.0
    if win.l_half >= 1:
        xm, x0, xp = coeffs[c - 1], coeffs[c], coeffs[c + 1]
        den = 2 * x0 - xm - xp
        if abs(den) > 0:
            delta = float(np.real((xm - xp) / den))
            delta *= np.tan(np.pi / n) / (np.pi / n)
            delta = float(np.clip(delta, -0.5, 0.5))
    df = delta / spec.t_bl
    g, _ = _geometric(np.array([2 * np.pi * df * spec.dt]), 2 * np.pi * delta, 0.0, 0.0, n)
    ae = coeffs[c] * n / g[0]
    return float(np.abs(ae)), df, float(np.angle(ae))
