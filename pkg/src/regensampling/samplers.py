"""Rejection sampling, regenerative rejection sampling (RRS), the
independence sampler, random-walk Metropolis, and cycle-length diagnostics.

RRS draws ``X_n ~ g`` and treats ``W_n = f_prop(X_n) / g(X_n)`` as the
length of the n-th regeneration cycle.  The draw covering a fixed time ``t``
(the first ``n`` with ``W_1 + ... + W_n > t``) is approximately distributed
according to the normalized target, exactly so as ``t -> inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from .dists import Proposal, TargetDensity, as_points
from .errors import RatioExceedsBound, TrialBudgetExceeded, ZeroVariance, ZeroWeight
from .parallel import map_chunks

# ---------------------------------------------------------------------------
# weights


def log_weights(target: TargetDensity, prop: Proposal, x) -> np.ndarray:
    """``log f_prop(x) - log g(x)`` for proposal draws ``x``."""
    x = as_points(x, target.dim)
    lf = target.log_f(x)
    lg = prop.log_g(x)
    if np.any(np.isneginf(lg) & np.isfinite(lf)):
        raise ValueError("proposal density vanishes where the target is positive")
    with np.errstate(invalid="ignore"):
        return lf - lg


def weights(target: TargetDensity, prop: Proposal, x) -> np.ndarray:
    """Likelihood ratios ``w = exp(log f_prop - log g)``.

    A draw where the target vanishes is an error.  A positive ratio below
    the smallest double (log weight under about -745) underflows to 0.0,
    which only drops a negligible cycle length.
    """
    lw = log_weights(target, prop, x)
    if not np.all(lw > -np.inf):
        raise ZeroWeight("proposal draw where the target vanishes (w = 0)")
    return np.exp(lw)


def eval_h(h: Callable, x: np.ndarray) -> np.ndarray:
    """Evaluate a test function on points; 1-D points are passed flat."""
    x = np.asarray(x)
    out = h(x[:, 0]) if x.ndim == 2 and x.shape[1] == 1 else h(x)
    return np.broadcast_to(np.asarray(out, float), (x.shape[0],)).copy()


def _two_sum(s, c, x):
    """Neumaier compensated update of the pair ``(s, c)`` by ``x``."""
    t = s + x
    c = c + np.where(np.abs(s) >= np.abs(x), (s - t) + x, (x - t) + s)
    return t, c


# ---------------------------------------------------------------------------
# result records


@dataclass(frozen=True)
class RegenPath:
    """Complete RRS output: draws, cycle lengths and the threshold."""

    draws: np.ndarray
    weights: np.ndarray
    threshold: float

    @property
    def partials(self) -> np.ndarray:
        return np.cumsum(self.weights)

    @property
    def stop_index(self) -> int:
        return int(self.weights.size)

    @property
    def total_weight(self) -> float:
        return math.fsum(self.weights)

    @property
    def terminal(self) -> np.ndarray:
        return self.draws[-1]


@dataclass(frozen=True)
class ChainTrace:
    """States of a Markov chain and the per-step acceptance indicators."""

    states: np.ndarray
    accepts: np.ndarray

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepts))

    def __len__(self):
        return self.accepts.size


@dataclass(frozen=True)
class CycleMoments:
    """Plug-in estimates of E[W], E[W^2], E[W^3] with standard errors."""

    mu: float
    mu2: float
    mu3: float
    n_samples: int
    stderr: tuple
    w: np.ndarray | None = field(default=None, repr=False)

    def as_dict(self):
        return dict(mu=self.mu, mu2=self.mu2, mu3=self.mu3, n_samples=self.n_samples,
                    stderr_mu=self.stderr[0], stderr_mu2=self.stderr[1],
                    stderr_mu3=self.stderr[2])


# ---------------------------------------------------------------------------
# rejection sampling


def rejection_sample(target: TargetDensity, prop: Proposal, C: float, rng,
                     trial_cap: int = 10**7):
    """One exact draw from the normalized target.

    ``C`` must bound ``f_prop / g``; an observed ratio above it raises
    :class:`RatioExceedsBound` rather than being clamped.

    Returns
    -------
    point : ndarray, shape (dim,)
    trials : int
    """
    if C <= 0:
        raise ValueError("C must be positive")
    for trials in range(1, trial_cap + 1):
        x = prop.sample(rng, 1)
        w = float(np.exp(log_weights(target, prop, x))[0])
        if w > C:
            raise RatioExceedsBound(f"w={w} > C={C}")
        if rng.random() * C < w:
            return x[0], trials
    raise TrialBudgetExceeded(f"no acceptance after {trial_cap} trials")


def rejection_sample_many(target: TargetDensity, prop: Proposal, C: float, n: int, rng,
                          batch: int = 65_536):
    """``n`` independent rejection-sampling outputs, vectorized.

    Returns
    -------
    points : ndarray, shape (n, dim)
    trials : ndarray of int, proposal draws consumed per output
    heights : ndarray
        ``U * C * g(Y)`` of each accepted pair; ``(Y, height)`` is uniform
        under the graph of ``f_prop``.
    """
    if C <= 0:
        raise ValueError("C must be positive")
    pts = np.empty((n, target.dim))
    trials = np.empty(n, dtype=np.int64)
    heights = np.empty(n)
    filled = 0
    carry = 0
    while filled < n:
        y = prop.sample(rng, batch)
        lg = prop.log_g(y)
        w = np.exp(log_weights(target, prop, y))
        if np.any(w > C):
            raise RatioExceedsBound(f"w={w.max()} > C={C}")
        u = rng.random(batch)
        acc = np.flatnonzero(u * C < w)[: n - filled]
        k = acc.size
        if k:
            steps = np.diff(np.concatenate(([-1], acc)))
            steps[0] += carry
            trials[filled:filled + k] = steps
            pts[filled:filled + k] = y[acc]
            heights[filled:filled + k] = u[acc] * C * np.exp(lg[acc])
            carry = batch - 1 - acc[-1]
        else:
            carry += batch
        filled += k
    return pts, trials, heights


# ---------------------------------------------------------------------------
# regenerative rejection sampling


def rrs_terminal(target: TargetDensity, prop: Proposal, t: float, rng):
    """Memory-light RRS: only the draw covering time ``t`` is kept.

    Returns
    -------
    point : ndarray, shape (dim,)
    n_draws : int
        N(t), the number of proposal draws.
    total_weight : float
        T_{N(t)} = W_1 + ... + W_{N(t)}.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    s, c = 0.0, 0.0
    n = 0
    while True:
        x = prop.sample(rng, 1)
        w = float(weights(target, prop, x)[0])
        n += 1
        s, c = _two_sum(s, c, w)
        if s + c > t:
            return x[0], n, float(s + c)


def rrs_path(target: TargetDensity, prop: Proposal, t: float, rng) -> RegenPath:
    """RRS keeping every draw and cycle length up to N(t)."""
    if t <= 0:
        raise ValueError("t must be positive")
    xs, ws = [], []
    s, c = 0.0, 0.0
    while True:
        x = prop.sample(rng, 1)
        w = float(weights(target, prop, x)[0])
        xs.append(x[0])
        ws.append(w)
        s, c = _two_sum(s, c, w)
        if s + c > t:
            return RegenPath(np.array(xs), np.array(ws), float(t))


@dataclass(frozen=True)
class RRSBatch:
    """Summaries of independent RRS runs (one entry per run).

    ``sum_hw_prev`` and ``sum_w_prev`` exclude the last (covering) cycle and
    feed the drop-last estimator.
    """

    point: np.ndarray
    n_draws: np.ndarray
    sum_w: np.ndarray
    sum_hw: np.ndarray | None = None
    sum_w_prev: np.ndarray | None = None
    sum_hw_prev: np.ndarray | None = None


def rrs_replicates(target: TargetDensity, prop: Proposal, t: float, n_runs: int, rng,
                   h: Callable | None = None) -> RRSBatch:
    """``n_runs`` independent RRS runs advanced in lockstep.

    Each round draws one proposal for every run that has not yet crossed
    ``t``.  With ``h`` the regenerative sums needed by the ratio estimators
    are accumulated along the way.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    dim = target.dim
    point = np.empty((n_runs, dim))
    n = np.zeros(n_runs, dtype=np.int64)
    s = np.zeros(n_runs)
    c = np.zeros(n_runs)
    track = h is not None
    if track:
        v = np.zeros(n_runs)
        vc = np.zeros(n_runs)
        s_prev = np.zeros(n_runs)
        v_prev = np.zeros(n_runs)
    live = np.arange(n_runs)
    while live.size:
        x = prop.sample(rng, live.size)
        w = weights(target, prop, x)
        if track:
            s_prev[live] = s[live] + c[live]
            v_prev[live] = v[live] + vc[live]
            v[live], vc[live] = _two_sum(v[live], vc[live], eval_h(h, x) * w)
        s[live], c[live] = _two_sum(s[live], c[live], w)
        n[live] += 1
        point[live] = x
        live = live[s[live] + c[live] <= t]
    if track:
        return RRSBatch(point, n, s + c, v + vc, s_prev, v_prev)
    return RRSBatch(point, n, s + c)


def _replicate_chunk(target, prop, t, h, rng, count):
    return rrs_replicates(target, prop, t, count, rng, h)


def run_replicates(target, prop, t, n_runs, seed, h=None, workers=1,
                   chunk_size=10_000, stream_offset=0) -> RRSBatch:
    """:func:`rrs_replicates` over fixed chunks on streams ``(seed, c)``."""
    parts = map_chunks(partial(_replicate_chunk, target, prop, t, h), n_runs, seed,
                       workers, chunk_size, stream_offset)
    cols = {}
    for name in RRSBatch.__dataclass_fields__:
        vals = [getattr(p, name) for p in parts]
        cols[name] = None if vals[0] is None else np.concatenate(vals)
    return RRSBatch(**cols)


SUBSAMPLE_BLOCK = 4096


def rrs_subsampled(target: TargetDensity, prop: Proposal, t: float, N: int, rng,
                   return_draws: bool = False, block: int = SUBSAMPLE_BLOCK):
    """Sub-sampled RRS: one long run, the i-th output is the draw at which
    the running weight sum first exceeds ``i * t``.

    A draw crossing several thresholds is emitted once per threshold.
    Proposals are generated in blocks of fixed size; within a block the
    running sum is a cumulative sum on top of a compensated carry.

    Returns
    -------
    samples : ndarray, shape (N, dim)
    n_draws : int, only with ``return_draws``
        Proposal draws up to and including the last emitted one.
    """
    if t <= 0 or N < 1:
        raise ValueError("need t > 0 and N >= 1")
    out = np.empty((N, target.dim))
    filled = 0
    draws = 0
    s_hi, s_lo = 0.0, 0.0
    while filled < N:
        x = prop.sample(rng, block)
        w = weights(target, prop, x)
        run = s_hi + (s_lo + np.cumsum(w))
        th = t * np.arange(filled + 1, N + 1, dtype=float)
        th = th[th < run[-1]]
        if th.size:
            j = np.searchsorted(run, th, side="right")
            out[filled:filled + j.size] = x[j]
            filled += j.size
            if filled == N:
                draws += int(j[-1]) + 1
                break
        draws += block
        s_hi, s_lo = _two_sum(s_hi, s_lo, math.fsum(w))
        s_hi, s_lo = float(s_hi), float(s_lo)
    return (out, draws) if return_draws else out


# ---------------------------------------------------------------------------
# Markov chain baselines


def imh_chain(target: TargetDensity, prop: Proposal, n_steps: int, x0, rng) -> ChainTrace:
    """Independence Metropolis-Hastings with acceptance ``min(1, w(y)/w(x))``."""
    x = as_points(x0, target.dim)[0].copy()
    lwx = float(log_weights(target, prop, x[None, :])[0])
    if not np.isfinite(lwx):
        raise ValueError("f_prop(x0) must be positive")
    ys = prop.sample(rng, n_steps)
    lwy = log_weights(target, prop, ys)
    logu = np.log(rng.random(n_steps))
    states = np.empty((n_steps, target.dim))
    accepts = np.zeros(n_steps, dtype=bool)
    idx = -1
    for i in range(n_steps):
        if logu[i] <= lwy[i] - lwx:
            lwx = lwy[i]
            idx = i
            accepts[i] = True
        states[i] = x if idx < 0 else ys[idx]
    return ChainTrace(states, accepts)


def rwm_chain(target: TargetDensity, step_sampler: Callable, n_steps: int, x0, rng) -> ChainTrace:
    """Random-walk Metropolis with symmetric steps ``step_sampler(rng, size)``."""
    x = as_points(x0, target.dim)[0].copy()
    lfx = float(target.log_f(x[None, :])[0])
    if not np.isfinite(lfx):
        raise ValueError("f_prop(x0) must be positive")
    steps = as_points(step_sampler(rng, n_steps), target.dim)
    logu = np.log(rng.random(n_steps))
    states = np.empty((n_steps, target.dim))
    accepts = np.zeros(n_steps, dtype=bool)
    lower, upper = target.lower, target.upper
    for i in range(n_steps):
        y = x + steps[i]
        if np.all((y >= lower) & (y <= upper)):
            lfy = float(target.log_f_prop(y[None, :])[0])
            if logu[i] <= lfy - lfx:
                x, lfx = y, lfy
                accepts[i] = True
        states[i] = x
    return ChainTrace(states, accepts)


# ---------------------------------------------------------------------------
# diagnostics


def acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelations ``rho(0..max_lag)`` with divide-by-n covariances."""
    x = np.asarray(series, float).ravel()
    n = x.size
    if max_lag >= n / 4:
        raise ValueError("max_lag must be below len(series)/4")
    x = x - x.mean()
    denom = np.dot(x, x)
    if denom == 0:
        raise ZeroVariance("series has zero variance")
    return np.array([np.dot(x[: n - k], x[k:]) for k in range(max_lag + 1)]) / denom


def _acf_fft(x):
    x = np.asarray(x, float) - np.mean(x)
    n = x.size
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    r = np.fft.irfft(f * np.conj(f), m)[:n]
    if r[0] == 0:
        raise ZeroVariance("series has zero variance")
    return r / r[0]


def integrated_time(series, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's automatic window."""
    rho = _acf_fft(series)
    taus = 2.0 * np.cumsum(rho) - 1.0
    m = np.arange(taus.size) < c * taus
    window = int(np.argmin(m)) if not m.all() else taus.size - 1
    return float(max(taus[window], 1.0))


def mcse(series) -> float:
    """Monte Carlo standard error of the mean of a correlated series."""
    x = np.asarray(series, float)
    return float(np.std(x, ddof=1) * np.sqrt(integrated_time(x) / x.size))


def cycle_moments(target: TargetDensity, prop: Proposal, M: int, rng,
                  keep_raw: bool = True) -> CycleMoments:
    """Moments of the cycle length ``W`` from ``M`` i.i.d. proposal draws."""
    if M < 1000:
        raise ValueError("need M >= 1000")
    w = weights(target, prop, prop.sample(rng, M))
    return moments_from_weights(w, keep_raw)


def moments_from_weights(w, keep_raw: bool = True) -> CycleMoments:
    w = np.asarray(w, float)
    m = w.size
    pw = [w, w * w, w * w * w]
    est = [math.fsum(p) / m for p in pw]
    se = tuple(float(np.std(p, ddof=1) / np.sqrt(m)) for p in pw)
    return CycleMoments(est[0], est[1], est[2], m, se, w if keep_raw else None)


def _weights_chunk(target, prop, rng, count):
    return weights(target, prop, prop.sample(rng, count))


def run_cycle_moments(target, prop, M, seed, workers=1, chunk_size=100_000,
                      stream_offset=0, keep_raw=True) -> CycleMoments:
    """:func:`cycle_moments` over fixed chunks on streams ``(seed, c)``."""
    if M < 1000:
        raise ValueError("need M >= 1000")
    parts = map_chunks(partial(_weights_chunk, target, prop), M, seed, workers,
                       chunk_size, stream_offset)
    return moments_from_weights(np.concatenate(parts), keep_raw)


def threshold_select(n_target: int, burnin: int, n_sub: int, mu_W: float) -> float:
    """Per-sample time ``((n_target + burnin) / n_sub) * mu_W``.

    A run of total length ``(n_target + burnin) * mu_W`` is spent on
    ``n_sub`` sub-sampled outputs, matching the proposal budget of an MCMC
    run of ``n_target`` kept steps after ``burnin``.
    """
    if min(n_target, n_sub, mu_W) <= 0 or burnin < 0:
        raise ValueError("inputs must be positive")
    return (n_target + burnin) / n_sub * mu_W


def moment_stability(w, n_batches: int = 20, limit: float = 5.0):
    """Heuristic check that the first three moments of ``W`` are estimable.

    Splits the sample into batches and compares the spread of the batch
    estimates with the median within-batch squared standard error.  Ratios
    far above one indicate heavy tails (moment of order ``2k`` infinite).

    Returns
    -------
    dict with keys ``ratios`` (per moment) and ``stable`` (bool).
    """
    w = np.asarray(w, float)
    b = np.array_split(w, n_batches)
    ratios = []
    for k in (1, 2, 3):
        est = np.array([np.mean(x**k) for x in b])
        within = np.array([np.var(x**k, ddof=1) / x.size for x in b])
        ratios.append(float(np.var(est, ddof=1) / np.median(within)))
    return dict(ratios=ratios, stable=bool(max(ratios) < limit))
