"""Bayesian probit regression: posterior, derivatives, Newton MAP, the
Laplace-approximation proposal for RRS, and the Albert-Chib Gibbs sampler.

Responses are folded into the design: row i of ``X_signed`` is
``(2 y_i - 1) x_i``, so the likelihood is ``prod Phi(X_signed @ beta)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import partial
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import linalg, special

from .dists import Proposal, TargetDensity, as_points, truncated_normal_lower
from .errors import DataIntegrity, IndefiniteHessian, NoConvergence, SingularDesign
from .samplers import ChainTrace

_LOG_2PI = np.log(2.0 * np.pi)

# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class LupusData:
    """Binary outcomes with the two covariates (IgG3 - IgG4, IgA)."""

    y: np.ndarray
    igg_diff: np.ndarray
    iga: np.ndarray

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def positives(self) -> int:
        return int(self.y.sum())

    def covariates(self) -> np.ndarray:
        return np.column_stack([self.igg_diff, self.iga])


def parse_cell_grid(text: str) -> LupusData:
    """Expand a cell-grid table into one record per patient.

    The first non-comment line holds the column covariate values (after a
    corner label); each further line is a row value followed by ``a/b``
    cells or ``-``.  An optional ``# expect: n=.. positives=..`` comment is
    checked against the expanded totals.
    """
    expect = None
    lines = []
    for raw in text.splitlines():
        s = raw.strip()
        if not s:
            continue
        if s.startswith("#"):
            m = re.search(r"expect:\s*n\s*=\s*(\d+)\s+positives\s*=\s*(\d+)", s)
            if m:
                expect = (int(m.group(1)), int(m.group(2)))
            continue
        lines.append(s.split())
    if not lines:
        raise DataIntegrity("empty table")
    cols = [float(c) for c in lines[0][1:]]
    y, g, a = [], [], []
    for parts in lines[1:]:
        if len(parts) != len(cols) + 1:
            raise DataIntegrity(f"row {parts[0]!r} has {len(parts) - 1} cells, expected {len(cols)}")
        row = float(parts[0])
        for col, cell in zip(cols, parts[1:]):
            if cell in ("-", "---"):
                continue
            m = re.fullmatch(r"(\d+)/(\d+)", cell)
            if not m:
                raise DataIntegrity(f"bad cell {cell!r}")
            pos, tot = int(m.group(1)), int(m.group(2))
            if pos > tot or tot == 0:
                raise DataIntegrity(f"bad cell {cell!r}")
            y += [1] * pos + [0] * (tot - pos)
            g += [row] * tot
            a += [col] * tot
    data = LupusData(np.array(y, float), np.array(g, float), np.array(a, float))
    if expect is not None and (data.n, data.positives) != expect:
        raise DataIntegrity(f"totals {(data.n, data.positives)} differ from declared {expect}")
    return data


def load_lupus(path: str | Path | None = None) -> LupusData:
    """The embedded 55-patient table, or a user table in the same format."""
    if path is None:
        text = resources.files("regensampling").joinpath("data/lupus.txt").read_text()
        data = parse_cell_grid(text)
        if (data.n, data.positives) != (55, 18):
            raise DataIntegrity("embedded table does not total 55/18")
        return data
    return parse_cell_grid(Path(path).read_text())


# ---------------------------------------------------------------------------
# model


def log_ndtr(u):
    """Stable ``log Phi(u)``."""
    return special.log_ndtr(u)


def inverse_mills(u):
    """``phi(u) / Phi(u)`` computed in log space."""
    u = np.asarray(u, float)
    return np.exp(-0.5 * u * u - 0.5 * _LOG_2PI - special.log_ndtr(u))


@dataclass(frozen=True)
class ProbitModel:
    """Probit posterior with a flat (``prior_var=None``) or N(0, s2 I) prior."""

    X_signed: np.ndarray
    prior_var: float | None = None

    @classmethod
    def from_data(cls, y, covariates, intercept: bool = True, prior_var: float | None = None):
        X = np.atleast_2d(np.asarray(covariates, float))
        if X.shape[0] != np.size(y):
            X = X.T
        if intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
        s = 2.0 * np.asarray(y, float) - 1.0
        return cls(s[:, None] * X, prior_var)

    @classmethod
    def lupus(cls, data: LupusData | None = None, prior_var: float | None = None):
        data = load_lupus() if data is None else data
        return cls.from_data(data.y, data.covariates(), True, prior_var)

    @property
    def n(self) -> int:
        return self.X_signed.shape[0]

    @property
    def k(self) -> int:
        return self.X_signed.shape[1]

    def log_posterior(self, beta) -> np.ndarray | float:
        """Unnormalized log posterior; vectorized over rows of ``beta``."""
        b = np.asarray(beta, float)
        lp = log_ndtr(b @ self.X_signed.T).sum(axis=-1)
        if self.prior_var is not None:
            lp = lp - 0.5 * (b * b).sum(axis=-1) / self.prior_var
        return lp

    def gradient(self, beta) -> np.ndarray:
        b = np.asarray(beta, float)
        g = inverse_mills(self.X_signed @ b) @ self.X_signed
        if self.prior_var is not None:
            g = g - b / self.prior_var
        return g

    def hessian(self, beta) -> np.ndarray:
        b = np.asarray(beta, float)
        u = self.X_signed @ b
        eta = inverse_mills(u)
        d = -u * eta - eta * eta
        H = (self.X_signed * d[:, None]).T @ self.X_signed
        if self.prior_var is not None:
            H = H - np.eye(self.k) / self.prior_var
        return H


def log_posterior(model: ProbitModel, beta):
    return model.log_posterior(beta)


def gradient(model: ProbitModel, beta):
    return model.gradient(beta)


def hessian(model: ProbitModel, beta):
    return model.hessian(beta)


@dataclass(frozen=True)
class MapResult:
    mode: np.ndarray
    hessian: np.ndarray
    iterations: int
    grad_norm: float
    log_posterior: float


def map_newton(model: ProbitModel, beta0=None, tol: float = 1e-10, max_iter: int = 50,
               max_norm: float = 1e3) -> MapResult:
    """Posterior mode by damped Newton with Armijo backtracking.

    Converged when ``max|grad| <= tol`` and the Newton step is below
    ``sqrt(tol) * (1 + max|beta|)``; the second condition keeps a likelihood
    that keeps increasing along a ray (separable data) from passing once its
    gradient underflows.
    """
    beta = np.zeros(model.k) if beta0 is None else np.array(beta0, float)
    f = float(model.log_posterior(beta))
    for it in range(1, max_iter + 1):
        g = model.gradient(beta)
        H = model.hessian(beta)
        try:
            c = linalg.cho_factor(-H)
            step = linalg.cho_solve(c, g)
        except linalg.LinAlgError:
            step = g
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= tol and np.max(np.abs(step)) <= np.sqrt(tol) * (1 + np.max(np.abs(beta))):
            return _finish(model, beta, it - 1)
        slope = float(g @ step)
        s = 1.0
        while True:
            cand = beta + s * step
            fc = float(model.log_posterior(cand))
            if fc >= f + 1e-4 * s * slope or s < 1e-12:
                break
            s *= 0.5
        beta, f = cand, fc
        if np.max(np.abs(beta)) > max_norm:
            raise NoConvergence(f"iterate norm exceeded {max_norm} (separable data?)")
    g = model.gradient(beta)
    step_ok = False
    try:
        step = linalg.cho_solve(linalg.cho_factor(-model.hessian(beta)), g)
        step_ok = np.max(np.abs(step)) <= np.sqrt(tol) * (1 + np.max(np.abs(beta)))
    except linalg.LinAlgError:
        pass
    if np.max(np.abs(g)) <= tol and step_ok:
        return _finish(model, beta, max_iter)
    raise NoConvergence(f"no convergence in {max_iter} iterations")


def _finish(model, beta, iters):
    H = model.hessian(beta)
    try:
        linalg.cholesky(-H, lower=True)
    except linalg.LinAlgError as exc:
        raise IndefiniteHessian("negative Hessian at the mode is not positive definite") from exc
    g = model.gradient(beta)
    return MapResult(beta, H, iters, float(np.max(np.abs(g))), float(model.log_posterior(beta)))


# ---------------------------------------------------------------------------
# Laplace proposal and RRS weights


class LaplaceProposal(Proposal):
    """Gaussian proposal ``N(mode, alpha2 (-H)^{-1})`` with weight shift ``xi``.

    Parameters
    ----------
    mode, hessian : ndarray
        Posterior mode and log-posterior Hessian there.
    alpha2 : float
        Covariance inflation.
    xi : float
        Constant added to the log target, so that ``W = exp(xi) f_prop / g``.
    """

    def __init__(self, mode, hessian, alpha2: float = 5.0, xi: float = 2.0):
        self.mode = np.asarray(mode, float)
        self.hessian = np.asarray(hessian, float)
        self.alpha2 = float(alpha2)
        self.xi = float(xi)
        self.dim = self.mode.size
        try:
            prec_chol = linalg.cholesky(-self.hessian, lower=True)
        except linalg.LinAlgError as exc:
            raise IndefiniteHessian("-H is not positive definite") from exc
        cov = self.alpha2 * linalg.cho_solve((prec_chol, True), np.eye(self.dim))
        self.cov = 0.5 * (cov + cov.T)
        self.chol = linalg.cholesky(self.cov, lower=True)
        self._logdet = 2.0 * np.log(np.diag(self.chol)).sum()

    def sample(self, rng, size):
        z = rng.standard_normal((size, self.dim))
        return self.mode + z @ self.chol.T

    def log_g(self, x):
        x = as_points(x, self.dim)
        r = linalg.solve_triangular(self.chol, (x - self.mode).T, lower=True)
        return -0.5 * (r * r).sum(axis=0) - 0.5 * self._logdet - 0.5 * self.dim * _LOG_2PI


def laplace_proposal(model: ProbitModel, alpha2: float = 5.0, xi: float = 2.0,
                     mode: MapResult | None = None) -> LaplaceProposal:
    m = map_newton(model) if mode is None else mode
    return LaplaceProposal(m.mode, m.hessian, alpha2, xi)


def _shifted_log_posterior(x, model, xi):
    return xi + model.log_posterior(x)


def probit_target(model: ProbitModel, xi: float = 0.0) -> TargetDensity:
    """The posterior (times ``e^xi``) as an unbounded :class:`TargetDensity`."""
    return TargetDensity(model.k, partial(_shifted_log_posterior, model=model, xi=float(xi)),
                         name="probit")


def rrs_weight_probit(model: ProbitModel, prop: LaplaceProposal, beta):
    """``W(beta) = exp(xi + log posterior(beta) - log g(beta))``."""
    b = as_points(beta, model.k)
    w = np.exp(prop.xi + model.log_posterior(b) - prop.log_g(b))
    return w if np.ndim(beta) > 1 else w[0]


# ---------------------------------------------------------------------------
# Gibbs sampler


def gibbs_probit(model: ProbitModel, beta0, n_steps: int, rng) -> ChainTrace:
    """Albert-Chib data augmentation.

    ``z | beta``: independent N(x_i beta, 1) truncated to (0, inf).
    ``beta | z``: N(Sigma X^T z, Sigma), ``Sigma = (X^T X + I/s2)^{-1}``.
    """
    X = model.X_signed
    P = X.T @ X
    if model.prior_var is not None:
        P = P + np.eye(model.k) / model.prior_var
    try:
        L = linalg.cholesky(P, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularDesign("X^T X is singular") from exc
    if np.min(np.abs(np.diag(L))) < 1e-12 * np.max(np.abs(np.diag(L))):
        raise SingularDesign("X^T X is numerically singular")
    beta = np.array(beta0, float)
    states = np.empty((n_steps, model.k))
    noise = rng.standard_normal((n_steps, model.k))
    for i in range(n_steps):
        z = truncated_normal_lower(X @ beta, rng)
        mean = linalg.cho_solve((L, True), X.T @ z)
        beta = mean + linalg.solve_triangular(L.T, noise[i], lower=False)
        states[i] = beta
    return ChainTrace(states, np.ones(n_steps, dtype=bool))


def beta_given_z(model: ProbitModel, z, rng):
    """One draw of ``beta | z`` (exposed for checks of the conditional)."""
    X = model.X_signed
    P = X.T @ X
    if model.prior_var is not None:
        P = P + np.eye(model.k) / model.prior_var
    L = linalg.cholesky(P, lower=True)
    mean = linalg.cho_solve((L, True), X.T @ np.asarray(z, float))
    return mean + linalg.solve_triangular(L.T, rng.standard_normal(model.k), lower=False)


# ---------------------------------------------------------------------------
# summaries


def posterior_summary(samples) -> list[dict]:
    """Per-component mean, sd and Tukey boxplot statistics."""
    s = np.asarray(samples, float)
    if s.ndim == 1:
        s = s[:, None]
    if s.shape[0] < 2:
        raise ValueError("need at least two samples")
    out = []
    for j in range(s.shape[1]):
        x = s[:, j]
        q1, med, q3 = np.percentile(x, [25, 50, 75])
        iqr = q3 - q1
        lo_f, hi_f = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        inside = x[(x >= lo_f) & (x <= hi_f)]
        out.append(dict(mean=float(x.mean()), sd=float(x.std(ddof=1)), q1=float(q1),
                        median=float(med), q3=float(q3), whisker_lo=float(inside.min()),
                        whisker_hi=float(inside.max()),
                        n_outliers=int(x.size - inside.size)))
    return out
