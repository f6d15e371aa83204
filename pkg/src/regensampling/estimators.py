"""Regenerative ratio estimators, the moment-based bias bound, TAVC
confidence intervals and bias-sweep experiments.

For cycle pairs ``V_n = h(X_n) W_n`` and ``W_n`` the estimand is
``q = E[V] / E[W]``, the target expectation of ``h``.  Including the cycle
that covers ``t`` (the fixed-time estimator) leaves an ``O(1/t^2)`` bias;
dropping it gives ``O(1/t)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import partial
from typing import Callable

import numpy as np
from scipy import integrate, special

from .dists import Proposal, TargetDensity
from .errors import SingleCycle
from .parallel import map_chunks
from .samplers import (RegenPath, eval_h, log_weights, rejection_sample_many,
                       run_cycle_moments, run_replicates)

# ---------------------------------------------------------------------------
# point estimators


def cycle_pairs(path: RegenPath, h: Callable):
    """``(v, w)`` arrays of a regeneration path."""
    w = np.asarray(path.weights, float)
    return eval_h(h, path.draws) * w, w


def ratio_fixed_cycles(v, w) -> float:
    """``sum(v) / sum(w)`` with compensated sums."""
    v, w = np.asarray(v, float), np.asarray(w, float)
    if v.size < 1:
        raise ValueError("need at least one cycle")
    return math.fsum(v) / math.fsum(w)


def ratio_fixed_time(path: RegenPath, h: Callable) -> float:
    """Ratio over cycles ``1..N(t)``, the covering cycle included."""
    return ratio_fixed_cycles(*cycle_pairs(path, h))


def ratio_drop_last(path: RegenPath, h: Callable) -> float:
    """Ratio over cycles ``1..N(t)-1``."""
    if path.stop_index < 2:
        raise SingleCycle("drop-last estimator needs N(t) >= 2")
    v, w = cycle_pairs(path, h)
    return ratio_fixed_cycles(v[:-1], w[:-1])


def tavc_estimate(v, w, q_hat: float):
    """Sample estimate of the time-average variance constant.

    Returns
    -------
    s2 : float
        ``s11 - 2 q s12 + q^2 s22`` from the (N-1)-divisor covariance of (v, w).
    eta2 : float
        ``s2 / mean(w)^2``, the per-cycle CLT variance.
    sigma2 : float
        ``s2 / mean(w)``, the per-unit-time CLT variance.
    """
    v, w = np.asarray(v, float), np.asarray(w, float)
    if v.size < 2:
        raise ValueError("need at least two cycles")
    # equals s11 - 2 q s12 + q^2 s22, without the cancellation
    s2 = float(np.var(v - q_hat * w, ddof=1))
    wbar = float(np.mean(w))
    return s2, s2 / wbar**2, s2 / wbar


def z_quantile(level: float) -> float:
    """Two-sided standard normal quantile ``Phi^{-1}((1 + level) / 2)``."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    return float(special.ndtri(0.5 * (1.0 + level)))


def confidence_interval(q_hat: float, sigma2: float, t: float, level: float = 0.95):
    """``q_hat +- z sqrt(sigma2 / t)``.

    Pass the time-scale constant with ``t`` the simulated time, or the
    per-cycle constant ``eta2`` with ``t`` the number of cycles.
    """
    if sigma2 < 0 or t <= 0:
        raise ValueError("need sigma2 >= 0 and t > 0")
    half = z_quantile(level) * math.sqrt(sigma2 / t)
    return q_hat - half, q_hat + half


def bias_bound(K: float, mu: float, mu2: float, mu3: float, t: float) -> float:
    """Non-asymptotic bound on ``|E[q_hat(t)] - q|`` for ``|h| <= K``:

        sqrt((16/3) K^2 mu3 mu2 (mu2/t + mu) / mu^3) / t^{3/2}
    """
    if min(K, mu, mu2, mu3, t) <= 0:
        raise ValueError("all arguments must be positive")
    return math.sqrt(16.0 / 3.0 * K**2 * mu3 * mu2 * (mu2 / t + mu) / mu**3) / t**1.5


@dataclass(frozen=True)
class RatioEstimate:
    """Ratio estimate with its variance constant and confidence interval.

    ``t`` is ``None`` for fixed-cycle estimates; ``tavc`` is then ``eta2``
    (per cycle), otherwise ``sigma2`` (per unit time).
    """

    value: float
    n_cycles: int
    t: float | None
    tavc: float
    ci: tuple
    bias_bound: float | None = None
    s2: float | None = None

    def as_dict(self):
        d = asdict(self)
        d["ci"] = dict(lo=self.ci[0], hi=self.ci[1], level=self.ci[2])
        return d


def estimate(path: RegenPath, h: Callable, level: float = 0.95, K: float | None = None,
             moments=None) -> RatioEstimate:
    """Fixed-time estimate from an RRS path with a time-scaled interval.

    ``moments`` (a :class:`CycleMoments` from an independent run) and ``K``
    enable the bias bound.
    """
    v, w = cycle_pairs(path, h)
    q = ratio_fixed_cycles(v, w)
    s2, _, sigma2 = tavc_estimate(v, w, q) if v.size > 1 else (0.0, 0.0, 0.0)
    lo, hi = confidence_interval(q, sigma2, path.threshold, level)
    bb = None
    if K is not None and moments is not None:
        bb = bias_bound(K, moments.mu, moments.mu2, moments.mu3, path.threshold)
    return RatioEstimate(q, int(v.size), float(path.threshold), sigma2, (lo, hi, level), bb, s2)


def estimate_fixed_cycles(v, w, level: float = 0.95) -> RatioEstimate:
    """Fixed-N estimate with the per-cycle scaling ``eta2 / N``."""
    q = ratio_fixed_cycles(v, w)
    s2, eta2, _ = tavc_estimate(v, w, q)
    lo, hi = confidence_interval(q, eta2, len(v), level)
    return RatioEstimate(q, len(v), None, eta2, (lo, hi, level), None, s2)


# ---------------------------------------------------------------------------
# reference values and test functions


def reference_value(density: Callable, h: Callable, lower: float = 0.0,
                    upper: float = np.inf) -> float:
    """``int h f / int f`` by adaptive quadrature (1-D)."""
    num = integrate.quad(lambda x: h(x) * density(x), lower, upper, limit=500,
                         epsabs=1e-14, epsrel=1e-13)[0]
    den = integrate.quad(density, lower, upper, limit=500, epsabs=1e-14, epsrel=1e-13)[0]
    return num / den


def _logistic(x):
    return special.expit(x)


def _tail1(x):
    return (np.asarray(x) > 1.0).astype(float)


TEST_FUNCTIONS = {
    "tanh": (np.tanh, 1.0),
    "logistic": (_logistic, 1.0),
    "tail1": (_tail1, 1.0),
}


def fit_slope(x, y) -> float:
    """Least-squares slope of ``log|y|`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.abs(np.asarray(y, float))), 1)[0])


# ---------------------------------------------------------------------------
# bias sweep


@dataclass(frozen=True)
class BiasRow:
    """One row of a bias sweep.

    ``bias_qt`` and ``bias_drop`` use the zero-mean control variate
    ``sum_{n <= N(t)} (h(X_n) - q) W_n / t`` (Wald's identity); the
    ``*_plain`` columns are the raw replicate means.  Drop-last values are
    conditional on ``N(t) >= 2``; ``n_single`` runs were excluded.
    """

    t: float
    bias_qt: float
    stderr: float
    bias_drop: float
    stderr_drop: float
    bias_qt_plain: float
    stderr_plain: float
    bias_drop_plain: float
    stderr_drop_plain: float
    bound: float
    n_single: int

    @property
    def passed(self) -> bool:
        return abs(self.bias_qt) <= self.bound


def _mean_se(x):
    x = np.asarray(x, float)
    return float(np.mean(x)), float(np.std(x, ddof=1) / np.sqrt(x.size))


def bias_row(batch, q: float, t: float, bound: float) -> BiasRow:
    """Reduce an :class:`RRSBatch` (with regenerative sums) to a bias row."""
    qt = batch.sum_hw / batch.sum_w
    zsum = batch.sum_hw - q * batch.sum_w
    cv = zsum / t
    multi = batch.n_draws >= 2
    qd = batch.sum_hw_prev[multi] / batch.sum_w_prev[multi]
    b_qt, se_qt = _mean_se(qt - q - cv)
    b_qtp, se_qtp = _mean_se(qt - q)
    if multi.sum() >= 2:
        b_d, se_d = _mean_se(qd - q - cv[multi])
        b_dp, se_dp = _mean_se(qd - q)
    else:
        b_d = se_d = b_dp = se_dp = float("nan")
    return BiasRow(float(t), b_qt, se_qt, b_d, se_d, b_qtp, se_qtp, b_dp, se_dp, float(bound),
                   int((~multi).sum()))


def bias_sweep(target: TargetDensity, prop: Proposal, h: Callable, K: float, q: float,
               t_grid, M: int, seed: int, workers: int = 1, moments=None,
               moment_draws: int = 10**6) -> list[BiasRow]:
    """Replicate bias of the fixed-time and drop-last estimators over ``t_grid``.

    ``q`` must come from quadrature.  Cycle moments for the bound are taken
    from ``moments`` or from an independent run on separate streams.
    """
    if moments is None:
        moments = run_cycle_moments(target, prop, moment_draws, seed, workers,
                                    stream_offset=1 << 40, keep_raw=False)
    rows = []
    for i, t in enumerate(t_grid):
        batch = run_replicates(target, prop, float(t), M, seed, h=h, workers=workers,
                               stream_offset=(i + 1) << 32)
        bound = bias_bound(K, moments.mu, moments.mu2, moments.mu3, float(t))
        rows.append(bias_row(batch, q, float(t), bound))
    return rows


# ---------------------------------------------------------------------------
# coverage


def _coverage_chunk(target, prop, h, t, q, level, rng, count):
    from .samplers import rrs_path
    hits = np.zeros(count, dtype=bool)
    for r in range(count):
        est = estimate(rrs_path(target, prop, t, rng), h, level)
        hits[r] = est.ci[0] <= q <= est.ci[1]
    return hits


def ci_coverage(target, prop, h, q, t, replicates, seed, level=0.95, workers=1,
                chunk_size=100) -> float:
    """Fraction of time-scaled intervals covering ``q``."""
    parts = map_chunks(partial(_coverage_chunk, target, prop, h, t, q, level),
                       replicates, seed, workers, chunk_size)
    return float(np.mean(np.concatenate(parts)))


# ---------------------------------------------------------------------------
# MCMC reference


@dataclass(frozen=True)
class ChainBiasRow:
    N: int
    bias: float
    stderr: float
    bias_plain: float
    stderr_plain: float


def mcmc_bias_reference(target: TargetDensity, prop: Proposal, h: Callable, q: float,
                        N_grid, M: int, rng, x0=0.1, C: float | None = None) -> list[ChainBiasRow]:
    """Bias of the ergodic average ``(1/N) sum h(X_n)`` of an independence sampler.

    Each of the ``M`` chains started at ``x0`` runs alongside a stationary
    copy (started from an exact rejection-sampling draw, which needs the
    ratio bound ``C``) driven by the same proposals and uniforms.  Once both
    accept the same proposal they coincide, so the difference of their
    averages estimates the bias with small variance.  ``bias_plain`` is the
    uncoupled average minus ``q``.

    ``x0="stationary"`` starts the chain itself from an exact draw.
    """
    N_grid = sorted(int(n) for n in N_grid)
    dim = target.dim
    if C is None:
        raise ValueError("C (bound on f_prop/g) is needed for the stationary copy")
    ref, _, _ = rejection_sample_many(target, prop, C, M, rng)
    if isinstance(x0, str) and x0 == "stationary":
        x, _, _ = rejection_sample_many(target, prop, C, M, rng)
    else:
        x = np.broadcast_to(np.asarray(x0, float).reshape(1, dim), (M, dim)).copy()
    lwx = log_weights(target, prop, x)
    lwr = log_weights(target, prop, ref)
    sx = np.zeros(M)
    sr = np.zeros(M)
    rows = []
    n = 0
    for stop in N_grid:
        while n < stop:
            if n > 0:
                y = prop.sample(rng, M)
                lwy = log_weights(target, prop, y)
                logu = np.log(rng.random(M))
                ax = logu <= lwy - lwx
                ar = logu <= lwy - lwr
                x[ax], lwx[ax] = y[ax], lwy[ax]
                ref[ar], lwr[ar] = y[ar], lwy[ar]
            sx += eval_h(h, x)
            sr += eval_h(h, ref)
            n += 1
        d = (sx - sr) / n
        p = sx / n - q
        b, se = _mean_se(d)
        bp, sep = _mean_se(p)
        rows.append(ChainBiasRow(stop, b, se, bp, sep))
    return rows
