"""Extended Kalman filter and Rauch-Tung-Striebel smoother over block DFTs.

State per block: ``[A, dA, phi, df, ddf]``. Amplitude and frequency offset
are integrated random walks, the phase integrates the frequency offset over
one block:

    A'   = A + dA          dA'  = dA + w_dA
    phi' = phi + 2 pi df t_bl
    df'  = df + ddf        ddf' = ddf + w_ddf
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .errors import InvalidArgumentError, NumericalError
from .signal_model import TimeSeries
from .spectral import (
    IA, IDA, IDDF, IDF, IPHI,
    BlockMeasurement, BlockSpec, SpectralWindow,
    block_dfts, h_and_jacobian, initial_state, segment, select_center_bin,
    stack_complex,
)

LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class HyperParams:
    """Static parameters of the block state-space model.

    ``a0``, ``df0`` and ``phi0`` are the prior mean of the first block; when
    left as ``None`` they are seeded from the first block's DFT. ``p0`` is
    the diagonal of the prior covariance; ``None`` selects
    :func:`default_p0`.
    """

    q_da: float
    q_ddf: float
    r: float
    df0: Optional[float] = None
    a0: Optional[float] = None
    phi0: Optional[float] = None
    p0: Optional[tuple] = None

    def __post_init__(self):
        if self.q_da < 0 or self.q_ddf < 0:
            raise InvalidArgumentError("process variances must be >= 0")
        if not self.r > 0:
            raise InvalidArgumentError(f"r must be > 0, got {self.r}")
        if self.p0 is not None:
            p0 = tuple(float(v) for v in self.p0)
            if len(p0) != 5 or min(p0) < 0:
                raise InvalidArgumentError("p0 must be 5 non-negative variances")
            object.__setattr__(self, "p0", p0)

    def replace(self, **kw) -> "HyperParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {"q_da": self.q_da, "q_ddf": self.q_ddf, "r": self.r,
                "df0": self.df0, "a0": self.a0, "phi0": self.phi0,
                "p0": list(self.p0) if self.p0 is not None else None}

    @classmethod
    def from_dict(cls, d) -> "HyperParams":
        p0 = d.get("p0")
        return cls(q_da=d["q_da"], q_ddf=d["q_ddf"], r=d["r"], df0=d.get("df0"),
                   a0=d.get("a0"), phi0=d.get("phi0"),
                   p0=tuple(p0) if p0 is not None else None)


def default_p0(a0, t_bl) -> tuple:
    """Weakly informative prior variances for the first block."""
    a0 = abs(a0)
    return (a0 ** 2, (0.1 * a0) ** 2, np.pi ** 2, (2.0 / t_bl) ** 2, (0.1 / t_bl) ** 2)


@dataclass
class TrackResult:
    """Filtered and smoothed block states of one EKS run.

    ``cross[k]`` is the smoothed cross-covariance Cov(x_k, x_{k-1}); row 0
    is zero. ``loglik_inc[k]`` is block k's innovation log-likelihood.
    """

    x_smooth: np.ndarray
    p_smooth: np.ndarray
    cross: np.ndarray
    x_filt: np.ndarray
    p_filt: np.ndarray
    x_pred: np.ndarray
    p_pred: np.ndarray
    loglik_inc: np.ndarray
    win: Optional[SpectralWindow] = None
    spec: Optional[BlockSpec] = None
    t0: float = 0.0
    hp: Optional[HyperParams] = None

    @property
    def n_blocks(self) -> int:
        return self.x_smooth.shape[0]

    @property
    def loglik(self) -> float:
        return float(np.sum(self.loglik_inc))

    @property
    def freq(self) -> np.ndarray:
        return self.win.f0 + self.x_smooth[:, IDF]

    @property
    def freq_std(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.p_smooth[:, IDF, IDF], 0.0))

    @property
    def amplitude(self) -> np.ndarray:
        return self.x_smooth[:, IA]

    @property
    def amplitude_std(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.p_smooth[:, IA, IA], 0.0))

    @property
    def phase(self) -> np.ndarray:
        return self.x_smooth[:, IPHI]

    @property
    def t_center(self) -> np.ndarray:
        return self.spec.block_centers(self.t0)


def transition_matrix(t_bl) -> np.ndarray:
    F = np.eye(5)
    F[IA, IDA] = 1.0
    F[IPHI, IDF] = 2 * np.pi * t_bl
    F[IDF, IDDF] = 1.0
    return F


def process_noise(hp: HyperParams) -> np.ndarray:
    Q = np.zeros((5, 5))
    Q[IDA, IDA] = hp.q_da
    Q[IDDF, IDDF] = hp.q_ddf
    return Q


def _sym(p):
    return 0.5 * (p + p.T)


def spd_factor(a, what="matrix", index=None):
    """Cholesky factor of a Jacobi-scaled SPD matrix.

    Returns ``(factor, scale)`` for use with :func:`spd_solve`.
    """
    d = np.sqrt(np.abs(np.diag(a)))
    d[d == 0] = 1.0
    scaled = a / np.outer(d, d)
    try:
        c = linalg.cho_factor(_sym(scaled), lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"{what} is not positive definite (block {index})",
                             index=index) from exc
    return c, d


def spd_solve(fac, b):
    c, d = fac
    b = np.asarray(b, dtype=float)
    dd = d if b.ndim == 1 else d[:, None]
    return linalg.cho_solve(c, b / dd) / dd


def spd_logdet(fac) -> float:
    c, d = fac
    return 2.0 * np.sum(np.log(np.diag(c[0]))) + 2.0 * np.sum(np.log(d))


def predict(x, p, hp: HyperParams, t_bl):
    """Propagate mean and covariance one block ahead."""
    F = transition_matrix(t_bl)
    x = np.asarray(x, dtype=float)
    return F @ x, _sym(F @ p @ F.T + process_noise(hp))


def kalman_update(x_pred, p_pred, y, h, H, R, index=None):
    """Linearised Kalman update in Joseph form.

    ``h`` is the model prediction at ``x_pred`` and ``H`` its Jacobian.
    Returns ``(x_filt, p_filt, loglik_increment)``.
    """
    nu = y - h
    S = _sym(H @ p_pred @ H.T + R)
    fac = spd_factor(S, "innovation covariance", index)
    PHt = p_pred @ H.T
    K = spd_solve(fac, PHt.T).T
    x = x_pred + K @ nu
    IKH = np.eye(len(x_pred)) - K @ H
    p = _sym(IKH @ p_pred @ IKH.T + K @ R @ K.T)
    ll = -0.5 * (nu @ spd_solve(fac, nu) + spd_logdet(fac) + len(y) * LOG_2PI)
    return x, p, float(ll)


def update(x_pred, p_pred, y: BlockMeasurement, hp: HyperParams,
           win: SpectralWindow, spec: BlockSpec):
    """EKF update of one block with its DFT coefficients."""
    h, H = h_and_jacobian(x_pred, win, spec)
    R = hp.r * np.eye(h.size)
    return kalman_update(x_pred, p_pred, y.stacked(), h, H, R, index=y.block_index)


def filter_forward(ys, m0, p0, F, Q, R, measure: Callable):
    """Run a (possibly linearised) Kalman filter over ``ys``.

    ``measure(x)`` returns the model prediction and its Jacobian at ``x``.
    The prior ``(m0, p0)`` applies to the first measurement directly.
    Returns stacked ``(x_pred, p_pred, x_filt, p_filt, loglik_inc)``.
    """
    n = len(ys)
    dim = len(m0)
    x_pred = np.empty((n, dim))
    p_pred = np.empty((n, dim, dim))
    x_filt = np.empty((n, dim))
    p_filt = np.empty((n, dim, dim))
    ll = np.empty(n)
    x, p = np.asarray(m0, dtype=float), np.asarray(p0, dtype=float)
    for k in range(n):
        if k > 0:
            x = F @ x_filt[k - 1]
            p = _sym(F @ p_filt[k - 1] @ F.T + Q)
        x_pred[k], p_pred[k] = x, p
        h, H = measure(x)
        x_filt[k], p_filt[k], ll[k] = kalman_update(x, p, ys[k], h, H, R, index=k)
    return x_pred, p_pred, x_filt, p_filt, ll


def rts_smooth(x_filt, p_filt, x_pred, p_pred, F):
    """Rauch-Tung-Striebel backward pass.

    Returns smoothed means, covariances and lag-one cross-covariances
    ``cross[k] = Cov(x_k, x_{k-1} | all)`` (``cross[0]`` is zero).
    """
    x_filt = np.asarray(x_filt, dtype=float)
    n = x_filt.shape[0]
    if n < 1 or len(p_filt) != n or len(x_pred) != n or len(p_pred) != n:
        raise InvalidArgumentError("filtered and predicted sequences must align")
    xs = x_filt.copy()
    ps = np.array(p_filt, dtype=float, copy=True)
    cross = np.zeros_like(ps)
    for k in range(n - 2, -1, -1):
        fac = spd_factor(p_pred[k + 1], "predicted covariance", k + 1)
        # G = P_f F^T P_pred^-1, obtained from the symmetric solve of its transpose
        G = spd_solve(fac, F @ p_filt[k]).T
        xs[k] = x_filt[k] + G @ (xs[k + 1] - x_pred[k + 1])
        ps[k] = _sym(p_filt[k] + G @ (ps[k + 1] - p_pred[k + 1]) @ G.T)
        cross[k + 1] = ps[k + 1] @ G.T
    return xs, ps, cross


def prior_mean(hp: HyperParams, coeffs0, win, spec) -> np.ndarray:
    a, df, phi = initial_state(coeffs0, win, spec)
    return np.array([
        a if hp.a0 is None else hp.a0,
        0.0,
        phi if hp.phi0 is None else hp.phi0,
        df if hp.df0 is None else hp.df0,
        0.0,
    ])


def resolve_prior(hp: HyperParams, coeffs0, win, spec) -> HyperParams:
    """Fill unset prior fields (a0, df0, phi0, p0) from the first block."""
    m0 = prior_mean(hp, coeffs0, win, spec)
    p0 = hp.p0 if hp.p0 is not None else default_p0(m0[IA], spec.t_bl)
    return hp.replace(a0=float(m0[IA]), phi0=float(m0[IPHI]), df0=float(m0[IDF]), p0=p0)


def run_eks_blocks(coeffs, win: SpectralWindow, spec: BlockSpec, hp: HyperParams,
                   t0: float = 0.0) -> TrackResult:
    """EKS over precomputed block coefficients, shape (n_blocks, 2L+1)."""
    coeffs = np.asarray(coeffs)
    hp = resolve_prior(hp, coeffs[0], win, spec)
    F = transition_matrix(spec.t_bl)
    Q = process_noise(hp)
    R = hp.r * np.eye(2 * win.n_coeffs)
    m0 = np.array([hp.a0, 0.0, hp.phi0, hp.df0, 0.0])
    p0 = np.diag(hp.p0)
    ys = stack_complex(coeffs)

    def measure(x):
        return h_and_jacobian(x, win, spec)

    x_pred, p_pred, x_filt, p_filt, ll = filter_forward(ys, m0, p0, F, Q, R, measure)
    xs, ps, cross = rts_smooth(x_filt, p_filt, x_pred, p_pred, F)
    return TrackResult(xs, ps, cross, x_filt, p_filt, x_pred, p_pred, ll,
                       win=win, spec=spec, t0=t0, hp=hp)


def run_eks(ts: TimeSeries, t_bl, l_half, hp: HyperParams, win=None, search=None) -> TrackResult:
    """Segment ``ts``, compute block DFTs and run the smoother.

    Without ``win`` the centre bin is the first block's spectral peak inside
    ``search`` (default: 1 Hz up to just below Nyquist).
    """
    spec = segment(ts, t_bl)
    if win is None:
        lo, hi = search if search is not None else (1.0, 0.5 * ts.f_s * (1 - 1e-9))
        win = select_center_bin(ts, spec.t_bl, lo, hi, l_half=l_half)
    elif win.l_half != l_half:
        raise InvalidArgumentError("l_half disagrees with the supplied window")
    coeffs = block_dfts(ts, spec, win)
    return run_eks_blocks(coeffs, win, spec, hp, t0=ts.t0)
