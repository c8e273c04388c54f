"""Sine-cosine fit (SCF) reference estimator.

Each block is fitted with ``a_s sin(2 pi f t) + a_c cos(2 pi f t) + c0``.
The linear coefficients are eliminated in closed form (variable
projection) and the frequency is found by Levenberg-Marquardt on the
projected residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FitError, InvalidArgumentError, NumericalError
from .signal_model import TimeSeries
from .spectral import block_length, peak_bin

MIN_BLOCK = 8


@dataclass(frozen=True)
class LmConfig:
    lam0: float = 1e-3
    up: float = 10.0
    down: float = 10.0
    max_iter: int = 100
    rel_step_tol: float = 1e-12


@dataclass(frozen=True)
class ScfBlockFit:
    block_index: int
    t_center: float
    f: float
    a_s: float
    a_c: float
    c0: float
    u_f: float
    u_as: float
    u_ac: float
    u_c0: float
    residual_mse: float
    n_samples: int

    @property
    def amplitude(self) -> float:
        return float(np.hypot(self.a_s, self.a_c))

    @property
    def phase0(self) -> float:
        ph = float(np.arctan2(self.a_c, self.a_s))
        return np.pi if ph == -np.pi else ph


def _design(t, f):
    w = 2 * np.pi * f * t
    return np.column_stack([np.sin(w), np.cos(w), np.ones_like(t)])


def linear_solve(y, t, f):
    """Least-squares ``(a_s, a_c, c0)`` at fixed ``f``.

    Returns ``(beta, residual_mse, cov)`` with ``cov = (X^T X)^-1 * mse`` and
    ``mse = |r|^2 / (n - 3)``.
    """
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    n = y.size
    if n < 4:
        raise InvalidArgumentError("need at least 4 samples")
    X = _design(t, f)
    q, rr = np.linalg.qr(X)
    d = np.abs(np.diag(rr))
    if d.min() <= 1e-10 * d.max():
        raise NumericalError(f"design matrix is rank deficient at f={f} Hz")
    beta = np.linalg.solve(rr, q.T @ y)
    res = y - X @ beta
    mse = float(res @ res) / (n - 3)
    rinv = np.linalg.inv(rr)
    cov = rinv @ rinv.T * mse
    return beta, mse, cov


def _projected(y, t, f):
    """Residual of the projected problem and its derivative in f."""
    X = _design(t, f)
    q, rr = np.linalg.qr(X)
    beta = np.linalg.solve(rr, q.T @ y)
    res = y - X @ beta
    w = 2 * np.pi * t
    dX = np.column_stack([w * X[:, 1], -w * X[:, 0], np.zeros_like(t)])
    # d(P_perp y)/df = -P_perp dX beta - pinv(X)^T dX^T r
    a = dX @ beta
    a -= q @ (q.T @ a)
    b = q @ np.linalg.solve(rr.T, dX.T @ res)
    return res, -(a + b)


def varpro_cost(y, t, f) -> float:
    res, _ = _projected(np.asarray(y, float), np.asarray(t, float), f)
    return float(res @ res)


def lm_fit_frequency(y, t, f_init, cfg: LmConfig = LmConfig()):
    """Levenberg-Marquardt over the frequency of the projected residual.

    Returns ``(f, u_f)`` where ``u_f`` is the one-sigma uncertainty from the
    Gauss-Newton curvature scaled by the residual MSE (n - 4 dof).
    """
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    n = y.size
    if n < MIN_BLOCK:
        raise InvalidArgumentError(f"blocks need at least {MIN_BLOCK} samples")
    f_nyq = 0.5 / (t[1] - t[0])
    if not 0 < f_init < f_nyq:
        raise InvalidArgumentError(f"f_init={f_init} Hz outside (0, {f_nyq}) Hz")
    f = float(f_init)
    lam = cfg.lam0
    res, jac = _projected(y, t, f)
    cost = res @ res
    converged = False
    for _ in range(cfg.max_iter):
        g = jac @ res
        jtj = jac @ jac
        if jtj == 0 or g == 0:
            converged = True
            break
        while True:
            step = -g / (jtj * (1.0 + lam))
            f_new = f + step
            if 0 < f_new < f_nyq:
                res_new, jac_new = _projected(y, t, f_new)
                cost_new = res_new @ res_new
                if cost_new <= cost:
                    break
            lam *= cfg.up
            if lam > 1e16:
                step = 0.0
                break
        if step == 0.0:
            converged = True
            break
        f, res, jac, cost = f_new, res_new, jac_new, cost_new
        lam = max(lam / cfg.down, 1e-12)
        if abs(step) <= cfg.rel_step_tol * abs(f):
            converged = True
            break
    if not converged:
        raise FitError(f"LM did not converge in {cfg.max_iter} iterations", last=f)
    jtj = jac @ jac
    mse = float(cost) / (n - 4)
    u_f = float(np.sqrt(mse / jtj)) if jtj > 0 else float("inf")
    return f, u_f


def fit_block(y, f_s, f_init, block_index=0, t_start=0.0, cfg: LmConfig = LmConfig()) -> ScfBlockFit:
    """VarPro fit of one block; time runs from 0 at the block start."""
    y = np.asarray(y, dtype=float)
    t = np.arange(y.size) / f_s
    f, u_f = lm_fit_frequency(y, t, f_init, cfg)
    beta, mse, cov = linear_solve(y, t, f)
    u = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return ScfBlockFit(block_index=block_index, t_center=t_start + 0.5 * y.size / f_s,
                       f=f, a_s=float(beta[0]), a_c=float(beta[1]), c0=float(beta[2]),
                       u_f=u_f, u_as=float(u[0]), u_ac=float(u[1]), u_c0=float(u[2]),
                       residual_mse=mse, n_samples=y.size)


def global_f_init(ts: TimeSeries, search_lo, search_hi) -> float:
    """Start frequency from the FFT peak of the complete record."""
    m = peak_bin(ts.samples, ts.f_s, search_lo, search_hi)
    return m * ts.f_s / len(ts)


def fit_blocks(ts: TimeSeries, t_bl_scf, search, cfg: LmConfig = LmConfig()) -> list:
    """Fit every complete block of ``t_bl_scf`` seconds independently."""
    n_bl = block_length(t_bl_scf, ts.f_s)
    if n_bl < MIN_BLOCK:
        raise InvalidArgumentError(f"blocks need at least {MIN_BLOCK} samples")
    n_blocks = len(ts) // n_bl
    if n_blocks < 1:
        raise InvalidArgumentError(
            f"block of {t_bl_scf} s is longer than the record ({ts.duration} s)")
    f_init = global_f_init(ts, *search)
    fits = []
    for k in range(n_blocks):
        y = ts.samples[k * n_bl:(k + 1) * n_bl]
        fits.append(fit_block(y, ts.f_s, f_init, block_index=k,
                              t_start=ts.t0 + k * n_bl / ts.f_s, cfg=cfg))
    return fits
