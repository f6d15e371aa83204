"""Distribution primitives: seeded streams, unnormalized targets and proposals.

Points are handled as arrays of shape ``(n, dim)``.  One-dimensional
callers may pass flat arrays; they are reshaped to ``(n, 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from .errors import TrialBudgetExceeded

_MASK64 = (1 << 64) - 1

DEFAULT_TRIAL_CAP = 10**6


class RandomStream(np.random.Generator):
    """Counter-based generator keyed by ``(seed, stream_id)``.

    The Philox key is the 128-bit integer ``stream_id << 64 | seed``, so
    every stream id gives an independent sequence and replicate ``r`` of an
    experiment can be reproduced in isolation.

    Parameters
    ----------
    seed : int
        Experiment seed, reduced modulo 2**64.
    stream_id : int
        Stream index, reduced modulo 2**64.
    """

    def __init__(self, seed: int = 0, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = (self.stream_id << 64) | self.seed
        super().__init__(np.random.Philox(key=key))

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"

    def __reduce__(self):
        state = self.bit_generator.state
        return (_restore_stream, (self.seed, self.stream_id, state))


def _restore_stream(seed, stream_id, state):
    rs = RandomStream(seed, stream_id)
    rs.bit_generator.state = state
    return rs


def as_points(x, dim: int) -> np.ndarray:
    """Return ``x`` as a float array of shape ``(n, dim)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1) if dim == 1 else x.reshape(1, -1)
    if x.ndim == 1:
        return x.reshape(-1, 1) if dim == 1 else x.reshape(1, -1)
    return x


def _box(lower, upper, dim):
    lo = np.full(dim, -np.inf) if lower is None else np.broadcast_to(np.asarray(lower, float), (dim,)).copy()
    hi = np.full(dim, np.inf) if upper is None else np.broadcast_to(np.asarray(upper, float), (dim,)).copy()
    if np.any(lo >= hi):
        raise ValueError("empty support box")
    return lo, hi


@dataclass(frozen=True)
class TargetDensity:
    """Unnormalized target density ``f_prop`` on a box in R^dim.

    Parameters
    ----------
    dim : int
        Dimension of the state space.
    log_f_prop : callable
        Vectorized map from ``(n, dim)`` points to log f_prop values.  It is
        only called on points inside the support box.
    lower, upper : array_like, optional
        Box bounds (closed, possibly infinite).
    name : str
        Label used in CLI output.
    """

    dim: int
    log_f_prop: Callable[[np.ndarray], np.ndarray]
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    name: str = "target"

    def __post_init__(self):
        lo, hi = _box(self.lower, self.upper, self.dim)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def contains(self, x) -> np.ndarray:
        x = as_points(x, self.dim)
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)

    def log_f(self, x) -> np.ndarray:
        """log f_prop at each point, ``-inf`` outside the support."""
        x = as_points(x, self.dim)
        out = np.full(x.shape[0], -np.inf)
        inside = self.contains(x)
        if inside.any():
            with np.errstate(divide="ignore"):
                out[inside] = self.log_f_prop(x[inside])
        return out

    def f(self, x) -> np.ndarray:
        return np.exp(self.log_f(x))


class Proposal:
    """Proposal law: a sampler paired with its exact normalized log-density.

    Subclasses implement ``sample(rng, size)`` returning ``(size, dim)``
    points and ``log_g(x)``.
    """

    dim: int = 1

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def log_g(self, x) -> np.ndarray:
        raise NotImplementedError

    def box_probability(self, lower, upper) -> float:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form box mass")

    def g(self, x) -> np.ndarray:
        return np.exp(self.log_g(x))


@dataclass
class ExponentialProposal(Proposal):
    """Exp(rate) on (0, inf)."""

    rate: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")

    def sample(self, rng, size):
        return rng.exponential(1.0 / self.rate, size=(size, 1))

    def log_g(self, x):
        x = as_points(x, 1)[:, 0]
        out = np.full(x.shape, -np.inf)
        pos = x >= 0
        out[pos] = np.log(self.rate) - self.rate * x[pos]
        return out

    def cdf(self, x):
        x = np.asarray(x, float)
        return np.where(x > 0, -np.expm1(-self.rate * np.maximum(x, 0.0)), 0.0)

    def box_probability(self, lower, upper):
        lo, hi = float(np.ravel(lower)[0]), float(np.ravel(upper)[0])
        return float(self.cdf(hi) - self.cdf(lo))


def laplace_draw(rng: np.random.Generator, scale: float, size=None):
    """Symmetric Laplace(0, scale) by inversion: ``scale*sign(U)*log(1-2|U|)``.

    ``U`` is uniform on (-1/2, 1/2).  This is the mirror image of the usual
    inverse-CDF map, which does not matter since the law is symmetric.
    ``U = +-1/2`` would give an infinite value and is resampled.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    u = rng.random(size) - 0.5
    edge = np.abs(u) >= 0.5
    while np.any(edge):
        if np.ndim(u) == 0:
            u = rng.random() - 0.5
            edge = abs(u) >= 0.5
        else:
            u[edge] = rng.random(int(edge.sum())) - 0.5
            edge = np.abs(u) >= 0.5
    return scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def laplace_cdf(x, scale):
    x = np.asarray(x, float)
    return np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0) / scale),
                    1.0 - 0.5 * np.exp(-np.maximum(x, 0) / scale))


@dataclass
class ProductLaplace(Proposal):
    """Independent Laplace(0, scale) coordinates."""

    scale: float = 4.0
    dim: int = 2

    def sample(self, rng, size):
        return laplace_draw(rng, self.scale, size=(size, self.dim))

    def log_g(self, x):
        x = as_points(x, self.dim)
        return -self.dim * np.log(2.0 * self.scale) - np.abs(x).sum(axis=1) / self.scale

    def box_probability(self, lower, upper):
        lo, hi = _box(lower, upper, self.dim)
        return float(np.prod(laplace_cdf(hi, self.scale) - laplace_cdf(lo, self.scale)))


@dataclass
class TruncatedProposal(Proposal):
    """A base proposal conditioned on a box, sampled by naive rejection.

    ``trials`` accumulates the number of base draws consumed, which is what
    throughput counters report.
    """

    base: Proposal
    lower: np.ndarray
    upper: np.ndarray
    trial_cap: int = DEFAULT_TRIAL_CAP
    trials: int = field(default=0, init=False)

    def __post_init__(self):
        self.dim = self.base.dim
        self.lower, self.upper = _box(self.lower, self.upper, self.dim)
        self.mass = self.base.box_probability(self.lower, self.upper)
        if not self.mass > 0:
            raise ValueError("truncation box has zero probability")
        self._log_mass = np.log(self.mass)

    def _inside(self, x):
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)

    def sample(self, rng, size):
        out = np.empty((size, self.dim))
        filled = 0
        spent = 0
        while filled < size:
            need = size - filled
            batch = int(np.ceil(need / self.mass * 1.1)) + 8
            x = self.base.sample(rng, batch)
            ok = np.flatnonzero(self._inside(x))
            if ok.size > need:
                # only the draws up to the last one used count as consumed
                spent += ok[need - 1] + 1
                ok = ok[:need]
            else:
                spent += batch
            out[filled:filled + ok.size] = x[ok]
            filled += ok.size
            if filled == 0 and spent > self.trial_cap:
                raise TrialBudgetExceeded(f"no draw inside the box after {spent} trials")
        self.trials += int(spent)
        return out

    def log_g(self, x):
        x = as_points(x, self.dim)
        out = np.full(x.shape[0], -np.inf)
        inside = self._inside(x)
        out[inside] = self.base.log_g(x[inside]) - self._log_mass
        return out


def truncated_sample(prop: Proposal, lower, upper, rng, trial_cap: int = DEFAULT_TRIAL_CAP):
    """One draw from ``prop`` conditioned on a box, by naive rejection.

    Returns
    -------
    point : ndarray, shape (dim,)
    trials : int
        Number of proposal draws consumed (>= 1).
    """
    lo, hi = _box(lower, upper, prop.dim)
    for trials in range(1, trial_cap + 1):
        x = prop.sample(rng, 1)[0]
        if np.all((x >= lo) & (x <= hi)):
            return x, trials
    raise TrialBudgetExceeded(f"no draw inside the box after {trial_cap} trials")


# switch to the exponential proposal once the standardized truncation point
# is nonnegative; below that naive acceptance is already above 1/2
_NAIVE_CUTOFF = 0.0


def truncated_normal_lower(mean, rng: np.random.Generator):
    """Draw from N(mean, 1) conditioned on (0, inf), elementwise.

    Uses naive resampling while the standardized truncation point
    ``a = -mean`` is negative, and the exponential-proposal rejection
    sampler with the optimal rate ``(a + sqrt(a^2 + 4)) / 2`` otherwise.
    """
    m = np.asarray(mean, dtype=float)
    flat = m.ravel()
    a = -flat
    z = np.empty_like(flat)

    todo = np.flatnonzero(a < _NAIVE_CUTOFF)
    while todo.size:
        d = rng.standard_normal(todo.size)
        ok = d > a[todo]
        z[todo[ok]] = d[ok]
        todo = todo[~ok]

    todo = np.flatnonzero(a >= _NAIVE_CUTOFF)
    while todo.size:
        at = a[todo]
        lam = 0.5 * (at + np.sqrt(at * at + 4.0))
        d = at + rng.exponential(1.0, todo.size) / lam
        ok = rng.random(todo.size) <= np.exp(-0.5 * (d - lam) ** 2)
        z[todo[ok]] = d[ok]
        todo = todo[~ok]

    out = (flat + z).reshape(m.shape)
    # guard against the rounding of flat + z for huge negative means
    out = np.maximum(out, np.nextafter(0.0, 1.0))
    return out[()] if out.ndim == 0 else out


def _synthetic_log(x):
    r = np.hypot(x[:, 0], x[:, 1])
    with np.errstate(divide="ignore"):
        return -0.25 * r + np.log1p(np.sin(2.0 * r))


def synthetic_target(bounded: bool = True) -> TargetDensity:
    """Radial 2-D target ``exp(-r/4) * (sin(2r) + 1)``.

    With ``bounded`` the support is the square [-2pi, 2pi]^2, otherwise R^2.
    """
    if bounded:
        b = 2.0 * np.pi
        return TargetDensity(2, _synthetic_log, [-b, -b], [b, b], name="synthetic-bounded")
    return TargetDensity(2, _synthetic_log, name="synthetic-unbounded")


def synthetic_proposal(bounded: bool = True, scale: float = 4.0) -> Proposal:
    """Product Laplace proposal, truncated to the square in the bounded case."""
    base = ProductLaplace(scale=scale, dim=2)
    if bounded:
        b = 2.0 * np.pi
        return TruncatedProposal(base, [-b, -b], [b, b])
    return base


def _gamma_log(x, shape):
    x = x[:, 0]
    with np.errstate(divide="ignore"):
        return (shape - 1.0) * np.log(x) - x


def _exponential_log(x, rate):
    return np.log(rate) - rate * x[:, 0]


def gamma_target(shape: float = 2.0) -> TargetDensity:
    """Unnormalized Gamma(shape, 1): ``x^(shape-1) exp(-x)`` on (0, inf).

    The normalizing constant is ``Gamma(shape)``; it equals 1 for shape 2.
    """
    return TargetDensity(1, partial(_gamma_log, shape=float(shape)), [0.0], [np.inf],
                         name=f"gamma{shape:g}")


def exponential_target(rate: float = 1.0) -> TargetDensity:
    """Normalized Exp(rate) as a target (useful when target equals proposal)."""
    return TargetDensity(1, partial(_exponential_log, rate=float(rate)), [0.0], [np.inf],
                         name=f"exp{rate:g}")
