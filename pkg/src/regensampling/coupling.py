"""Uniform components of densities and the checkpoint coupling of a
zero-delayed renewal process with its stationary version.

At checkpoint ``t_k`` both forward recurrence times are known.  With
``L_k = max(R, R')`` the next checkpoint is ``t_{k+1} = t_k + L_k + A``;
since both processes renew before ``t_k + L_k``, the recurrence time of each
at ``t_{k+1}`` is that of a fresh zero-delayed process after ``s_k >= A``
units.  All those laws share a uniform component ``alpha * 1_(0,b)``, so a
shared Bernoulli(delta) coin with a shared Unif(0, b) value lets the two
recurrence times coincide, after which the processes agree forever.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np
from scipy import optimize, stats

from .errors import DegenerateComponent, RatioExceedsBound, TrialBudgetExceeded
from .parallel import map_chunks
from .renewal import gamma2_oracle, poisson_oracle

FAMILIES = ("exp", "gamma2")


@dataclass(frozen=True)
class UniformComponent:
    """Decomposition ``f = eps * Unif(a, a+b) + (1 - eps) * h``."""

    density: Callable
    a: float
    b: float
    alpha: float

    @property
    def eps(self) -> float:
        return min(self.alpha * self.b, 1.0)

    def _box(self, x):
        x = np.asarray(x, float)
        return ((x > self.a) & (x < self.a + self.b)).astype(float)

    def residual(self, x):
        """Residual density h; identically zero when eps = 1."""
        x = np.asarray(x, float)
        if self.eps >= 1.0:
            return np.zeros_like(x)
        return (self.density(x) - self.alpha * self._box(x)) / (1.0 - self.eps)

    def mixture(self, x):
        """``eps/b * 1_(a,a+b) + (1 - eps) h``, equal to the input density."""
        return self.eps / self.b * self._box(x) + (1.0 - self.eps) * self.residual(x)


def uniform_component(density: Callable, a: float, b: float, alpha: float | None = None,
                      n_grid: int = 10_001) -> UniformComponent:
    """Largest uniform component of ``density`` on (a, a+b).

    The infimum is the minimum over a grid, refined by a bounded scalar
    minimization around the best grid point.  An explicit ``alpha`` (a known
    analytic lower bound) is accepted if it does not exceed that minimum.
    """
    if b <= 0:
        raise ValueError("b must be positive")
    grid = np.linspace(a, a + b, n_grid)
    vals = np.asarray(density(grid), float)
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    res = optimize.minimize_scalar(lambda x: float(density(np.array([x]))[0]),
                                   bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    inf_est = min(vals.min(), res.fun)
    if alpha is None:
        alpha = inf_est
    elif alpha > inf_est * (1 + 1e-12):
        raise ValueError(f"alpha={alpha} exceeds the density minimum {inf_est}")
    if not alpha > 0:
        raise DegenerateComponent(f"density infimum on ({a}, {a + b}) is {alpha}")
    if alpha * b > 1.0 + 1e-9:
        raise ValueError("alpha*b > 1: input is not a probability density")
    return UniformComponent(density, float(a), float(b), float(alpha))


@dataclass(frozen=True)
class Envelope:
    """Rejection envelope with ``(1 - eps) h(x) <= bound * exp(log_density(x))``."""

    sample: Callable
    log_density: Callable
    bound: float = 1.0


def residual_draw(comp: UniformComponent, envelope: Envelope, rng: np.random.Generator,
                  trial_cap: int = 10**6) -> float:
    """Exact draw from the residual law of ``comp`` by rejection."""
    if comp.eps >= 1.0:
        raise DegenerateComponent("residual law is empty when eps = 1")
    for _ in range(trial_cap):
        x = float(np.ravel(envelope.sample(rng, 1))[0])
        num = (1.0 - comp.eps) * float(comp.residual(np.array([x]))[0])
        den = envelope.bound * float(np.exp(envelope.log_density(np.array([x]))[0]))
        ratio = num / den if den > 0 else np.inf
        if ratio > 1.0 + 1e-9:
            raise RatioExceedsBound(f"envelope does not dominate at x={x}")
        if rng.random() < ratio:
            return x
    raise TrialBudgetExceeded(f"no residual draw after {trial_cap} trials")


# ---------------------------------------------------------------------------
# recurrence-time families


def common_component(family: str, A: float, b: float, lam: float = 1.0):
    """``(alpha, delta)`` shared by every recurrence law after time ``A``.

    Gamma(2, lam): ``alpha = (lam/2) e^{-lam b} (1 - e^{-2 lam A})``.
    Exp(lam): ``alpha = lam e^{-lam b}``.
    """
    if family == "gamma2":
        alpha = 0.5 * lam * np.exp(-lam * b) * -np.expm1(-2.0 * lam * A)
    elif family == "exp":
        alpha = lam * np.exp(-lam * b)
    else:
        raise ValueError(f"unknown family {family!r}")
    return float(alpha), float(alpha * b)


def gamma2_common_component(lam: float, A: float, b: float):
    return common_component("gamma2", A, b, lam)


def _oracle(family, lam):
    return gamma2_oracle(lam) if family == "gamma2" else poisson_oracle(lam)


def _recurrence_pdf(family, o, x, s):
    return o.residual_pdf(x, s)


def _recurrence_sample(family, o, rng, s):
    s = np.asarray(s, float)
    if family == "gamma2":
        return o.sample_residual(rng, s, s.shape)
    return rng.exponential(1.0 / o.lam, s.shape)


def _stationary_sample(family, o, rng, size):
    if family == "gamma2":
        return o.sample_f0(rng, size)
    return rng.exponential(1.0 / o.lam, size)


def _residual_batch(family, o, alpha, b, s, rng, trial_cap=10**4):
    """Residual draws for each lane's recurrence law ``f_R^{s}``.

    The envelope is the recurrence law itself (an Exp/Gamma(2) mixture for
    Gamma(2, lam)); a draw ``x`` is kept with probability
    ``1 - alpha 1_(0,b)(x) / f_R^s(x)``.
    """
    s = np.asarray(s, float)
    out = np.empty(s.shape)
    todo = np.arange(s.size)
    for _ in range(trial_cap):
        if todo.size == 0:
            return out
        x = _recurrence_sample(family, o, rng, s[todo])
        f = _recurrence_pdf(family, o, x, s[todo])
        acc = 1.0 - alpha * ((x > 0) & (x < b)) / f
        if np.any(acc < -1e-12):
            raise RatioExceedsBound("alpha exceeds the recurrence density")
        ok = rng.random(todo.size) < acc
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    raise TrialBudgetExceeded("residual draws did not finish")


@dataclass
class CouplingRun:
    """Checkpoint chain of one coupled pair of renewal processes."""

    A: float
    b: float
    delta: float
    sigma: int
    T: float
    checkpoints: list = field(default_factory=list)


def coupled_simulation(family: str, A: float, b: float, rng: np.random.Generator,
                       lam: float = 1.0, extra_steps: int = 0,
                       max_steps: int = 10**6) -> CouplingRun:
    """Run the coupling construction once.

    Parameters
    ----------
    family : {"exp", "gamma2"}
        Interarrival law Exp(lam) or Gamma(2, lam).
    A, b : float
        Warm-up offset and width of the shared uniform component.
    extra_steps : int
        Checkpoints to keep simulating after coupling (both processes then
        use the same draws, so they stay equal).
    """
    o = _oracle(family, lam)
    alpha, delta = common_component(family, A, b, lam)
    t = 0.0
    R = 0.0
    Rp = float(_stationary_sample(family, o, rng, None))
    cps = [(t, R, Rp)]
    sigma = None
    k = 0
    while True:
        L = max(R, Rp)
        s, sp = L + A - R, L + A - Rp
        t += L + A
        if sigma is None:
            u = rng.random() < delta
            v = rng.uniform(0.0, b)
            if u:
                R = Rp = v
                sigma = k
            else:
                R = float(_residual_batch(family, o, alpha, b, np.array([s]), rng)[0])
                Rp = float(_residual_batch(family, o, alpha, b, np.array([sp]), rng)[0])
        else:
            R = Rp = float(_recurrence_sample(family, o, rng, np.array([s]))[0])
        cps.append((t, R, Rp))
        if sigma is not None and k >= sigma + extra_steps:
            break
        k += 1
        if k > max_steps:
            raise TrialBudgetExceeded("coupling did not occur within max_steps")
    t_c, R_c, _ = cps[sigma + 1]
    return CouplingRun(float(A), float(b), delta, int(sigma), t_c + R_c, cps)


@dataclass(frozen=True)
class CouplingBatch:
    """Per-run summaries from :func:`coupling_batch`."""

    sigma: np.ndarray
    T: np.ndarray
    v_sigma: np.ndarray
    s0: np.ndarray
    R1: np.ndarray
    Rp1: np.ndarray


def coupling_batch(family: str, A: float, b: float, n_runs: int, rng: np.random.Generator,
                   lam: float = 1.0) -> CouplingBatch:
    """Vectorized :func:`coupled_simulation` over ``n_runs`` independent pairs.

    Also records ``s_0`` and the recurrence times at the first checkpoint
    for marginal-law checks.
    """
    o = _oracle(family, lam)
    alpha, delta = common_component(family, A, b, lam)
    t = np.zeros(n_runs)
    R = np.zeros(n_runs)
    Rp = np.asarray(_stationary_sample(family, o, rng, n_runs), float)
    sigma = np.full(n_runs, -1, dtype=np.int64)
    T = np.full(n_runs, np.nan)
    vsig = np.full(n_runs, np.nan)
    s0 = Rp + A - R
    R1 = np.empty(n_runs)
    Rp1 = np.empty(n_runs)
    live = np.arange(n_runs)
    k = 0
    while live.size:
        r, rp = R[live], Rp[live]
        L = np.maximum(r, rp)
        s, sp = L + A - r, L + A - rp
        t[live] += L + A
        u = rng.random(live.size) < delta
        v = rng.uniform(0.0, b, live.size)
        nr = np.where(u, v, 0.0)
        nrp = nr.copy()
        miss = ~u
        if miss.any():
            nr[miss] = _residual_batch(family, o, alpha, b, s[miss], rng)
            nrp[miss] = _residual_batch(family, o, alpha, b, sp[miss], rng)
        R[live], Rp[live] = nr, nrp
        if k == 0:
            R1[:], Rp1[:] = nr, nrp
        done = live[u]
        sigma[done] = k
        vsig[done] = v[u]
        T[done] = t[done] + v[u]
        live = live[~u]
        k += 1
    return CouplingBatch(sigma, T, vsig, s0, R1, Rp1)


def _batch_chunk(family, A, b, lam, rng, count):
    return coupling_batch(family, A, b, count, rng, lam)


def run_coupling(family: str, A: float, b: float, runs: int, seed: int, lam: float = 1.0,
                 workers: int = 1, chunk_size: int = 10_000) -> CouplingBatch:
    """:func:`coupling_batch` over fixed chunks on streams ``(seed, c)``."""
    parts = map_chunks(partial(_batch_chunk, family, A, b, lam), runs, seed, workers, chunk_size)
    return CouplingBatch(*(np.concatenate([getattr(p, f) for p in parts])
                           for f in CouplingBatch.__dataclass_fields__))


def coupling_inequality_check(family: str, A: float, b: float, t_grid, runs: int, seed: int,
                              lam: float = 1.0, workers: int = 1, batch=None):
    """Tabulate ``P(T > t)`` against the exact TV distance at each ``t``.

    Returns a list of dicts with keys ``t, p_tail, p_tail_stderr,
    tv_oracle, pass``; ``pass`` asserts ``tv <= P(T > t) + 3 stderr``.
    """
    if batch is None:
        batch = run_coupling(family, A, b, runs, seed, lam, workers)
    o = _oracle(family, lam)
    n = batch.T.size
    rows = []
    for t in t_grid:
        p = float(np.mean(batch.T > t))
        se = float(np.sqrt(p * (1.0 - p) / n))
        tv = float(o.tv(t))
        rows.append(dict(t=float(t), p_tail=p, p_tail_stderr=se, tv_oracle=tv,
                         **{"pass": bool(tv <= p + 3.0 * se)}))
    return rows


def geometric_chisquare(sigma, delta: float, min_expected: float = 5.0):
    """Chi-square test of ``sigma`` against P(sigma = n) = delta (1-delta)^n.

    Cells with small expected counts are pooled into a tail cell.

    Returns
    -------
    statistic, pvalue : float
    """
    sigma = np.asarray(sigma)
    n = sigma.size
    kmax = 0
    while n * delta * (1 - delta) ** (kmax + 1) >= min_expected:
        kmax += 1
    obs = np.array([np.sum(sigma == k) for k in range(kmax)] + [np.sum(sigma >= kmax)], float)
    pk = delta * (1 - delta) ** np.arange(kmax)
    exp = n * np.append(pk, (1 - delta) ** kmax)
    res = stats.chisquare(obs, exp)
    return float(res.statistic), float(res.pvalue)


def tail_slope(T, t_lo: float, t_hi: float, n_points: int = 20) -> float:
    """Least-squares slope of ``log P(T > t)`` over ``[t_lo, t_hi]``."""
    T = np.asarray(T)
    grid = np.linspace(t_lo, t_hi, n_points)
    p = np.array([np.mean(T > t) for t in grid])
    keep = p > 0
    if keep.sum() < 2:
        raise ValueError("empirical tail is empty on the requested range")
    return float(np.polyfit(grid[keep], np.log(p[keep]), 1)[0])


def exponential_moment(T, eps: float = 0.01) -> float:
    """Plug-in estimate of E[exp(eps T)]."""
    return float(np.mean(np.exp(eps * np.asarray(T))))
