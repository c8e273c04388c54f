"""Expectation-maximisation of the smoother's static parameters.

Each iteration runs the EKS with the current parameters (E-step) and then
re-estimates the amplitude and frequency process variances, the scalar
measurement variance and the first block's prior mean from the smoothed
moments (M-step). The M-step is the closed-form linear-Gaussian update
applied to the model linearised about the smoothed trajectory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgumentError, NumericalError
from .kalman import (
    HyperParams, TrackResult, prior_mean, run_eks_blocks, transition_matrix,
)
from .signal_model import TimeSeries
from .spectral import (
    IA, IDA, IDDF, IDF, IPHI,
    block_dfts, h_and_jacobian, segment, select_center_bin, stack_complex,
)

log = logging.getLogger(__name__)

# starting values relative to the first-block amplitude a and block length T:
# q_da = (REL_Q_DA a)^2, q_ddf = (REL_Q_DDF / T)^2, r = (REL_R a)^2
REL_Q_DA = 1e-3
REL_Q_DDF = 1e-3
REL_R = 1e-1


@dataclass
class EmConfig:
    max_iter: int = 200
    ll_tol: float = 1e-6
    theta_init: Optional[HyperParams] = None
    min_variance_floor: float = 1e-18

    def __post_init__(self):
        if self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be >= 1")
        if not self.ll_tol > 0:
            raise InvalidArgumentError("ll_tol must be > 0")
        if not self.min_variance_floor > 0:
            raise InvalidArgumentError("min_variance_floor must be > 0")


@dataclass
class EmReport:
    theta_final: object
    ll_history: list = field(default_factory=list)
    iterations_used: int = 0
    converged: bool = False


def default_theta(a0, t_bl) -> HyperParams:
    """Fixed starting point, identical for every record up to scale."""
    a0 = abs(a0)
    return HyperParams(q_da=(REL_Q_DA * a0) ** 2,
                       q_ddf=(REL_Q_DDF / t_bl) ** 2,
                       r=(REL_R * a0) ** 2)


def process_residual_moment(xs, ps, cross, F) -> np.ndarray:
    """Mean over k >= 1 of E[(x_k - F x_{k-1})(x_k - F x_{k-1})^T | all]."""
    n = xs.shape[0]
    if n < 2:
        raise InvalidArgumentError("need at least two blocks")
    e = xs[1:] - xs[:-1] @ F.T
    acc = np.einsum("ki,kj->ij", e, e)
    acc += ps[1:].sum(axis=0)
    fc = F @ cross[1:].sum(axis=0).T
    acc -= fc + fc.T
    acc += F @ ps[:-1].sum(axis=0) @ F.T
    return acc / (n - 1)


def measurement_residual_moment(residuals, jacobians, ps) -> float:
    """Mean per-component E[|y_k - h(x_k)|^2] under the linearised model."""
    n, d = residuals.shape
    total = np.sum(residuals ** 2)
    total += np.einsum("kij,kjl,kil->", jacobians, ps, jacobians)
    return float(total / (n * d))


def m_step(track: TrackResult, measurements, theta: HyperParams,
           floor: float = EmConfig.min_variance_floor) -> HyperParams:
    """Closed-form parameter update from one smoother pass."""
    if track.n_blocks < 2:
        raise InvalidArgumentError("m_step needs at least two blocks")
    coeffs = np.array([getattr(m, "coeffs", m) for m in measurements])
    ys = stack_complex(coeffs)
    xs, ps = track.x_smooth, track.p_smooth
    F = transition_matrix(track.spec.t_bl)
    proc = process_residual_moment(xs, ps, track.cross, F)
    res = np.empty_like(ys)
    jacs = np.empty((xs.shape[0], ys.shape[1], 5))
    for k in range(xs.shape[0]):
        h, jacs[k] = h_and_jacobian(xs[k], track.win, track.spec)
        res[k] = ys[k] - h
    r = measurement_residual_moment(res, jacs, ps)
    base = track.hp if track.hp is not None else theta
    return base.replace(
        q_da=max(float(proc[IDA, IDA]), floor),
        q_ddf=max(float(proc[IDDF, IDDF]), floor),
        r=max(r, floor),
        a0=float(xs[0, IA]),
        phi0=float(xs[0, IPHI]),
        df0=float(xs[0, IDF]),
    )


def em_loop(e_step: Callable, m_step_fn: Callable, theta, cfg: EmConfig):
    """Generic EM iteration.

    ``e_step(theta)`` returns ``(loglik, stats)``; ``m_step_fn(stats, theta)``
    returns the next ``theta``. Stops once the relative log-likelihood gain
    drops below ``cfg.ll_tol``; the returned ``theta`` and ``stats`` belong
    to the same E-step.
    """
    report = EmReport(theta_final=theta)
    stats = None
    prev = None
    for it in range(cfg.max_iter):
        ll, stats = e_step(theta)
        if not np.isfinite(ll):
            raise NumericalError(f"log-likelihood is {ll} at EM iteration {it}", index=it)
        report.ll_history.append(float(ll))
        report.iterations_used = it + 1
        if prev is not None and (ll - prev) / abs(prev) < cfg.ll_tol:
            report.converged = True
            break
        if it == cfg.max_iter - 1:
            break
        prev = ll
        theta = m_step_fn(stats, theta)
    report.theta_final = theta
    if not report.converged:
        log.info("EM stopped after %d iterations without converging", report.iterations_used)
    return report, stats


def fit_em(ts: TimeSeries, t_bl, l_half, cfg: Optional[EmConfig] = None,
           win=None, search=None):
    """Tune the smoother parameters by EM and return ``(EmReport, TrackResult)``."""
    cfg = cfg or EmConfig()
    spec = segment(ts, t_bl)
    if spec.n_blocks < 2:
        raise InvalidArgumentError("EM needs a record of at least two blocks")
    if win is None:
        lo, hi = search if search is not None else (1.0, 0.5 * ts.f_s * (1 - 1e-9))
        win = select_center_bin(ts, spec.t_bl, lo, hi, l_half=l_half)
    coeffs = block_dfts(ts, spec, win)

    theta = cfg.theta_init
    if theta is None:
        a_seed = prior_mean(HyperParams(q_da=0, q_ddf=0, r=1), coeffs[0], win, spec)[IA]
        if a_seed == 0:
            raise NumericalError("first block has zero spectral amplitude", index=0)
        theta = default_theta(a_seed, spec.t_bl)
    floor = cfg.min_variance_floor

    def e_step(th):
        track = run_eks_blocks(coeffs, win, spec, th, t0=ts.t0)
        return track.loglik, track

    def m(track, th):
        return m_step(track, coeffs, th, floor=floor)

    report, track = em_loop(e_step, m, theta, cfg)
    report.theta_final = track.hp
    return report, track
