import math

import mpmath
import numpy as np
import pytest
from scipy import optimize, stats

from regensampling.dists import RandomStream, truncated_normal_lower
from regensampling.errors import DataIntegrity, IndefiniteHessian, NoConvergence, SingularDesign
from regensampling.probit import (LaplaceProposal, ProbitModel, beta_given_z, gibbs_probit,
                                  inverse_mills, laplace_proposal, load_lupus, log_ndtr,
                                  map_newton, parse_cell_grid, posterior_summary,
                                  rrs_weight_probit)
from regensampling.samplers import mcse

# regression fixture: flat-prior mode of the embedded table, cross-checked
# below against a quasi-Newton optimizer
MAP_FIXTURE = np.array([-1.7774886296084833, 4.373882005542138, 2.428321469024335])


@pytest.fixture(scope="module")
def lupus():
    return ProbitModel.lupus()


@pytest.fixture(scope="module")
def lupus_map(lupus):
    return map_newton(lupus)


def random_betas(n, seed, radius=3.0):
    rng = RandomStream(seed, 0)
    b = rng.standard_normal((n, 3))
    return b / np.linalg.norm(b, axis=1, keepdims=True) * radius * rng.random((n, 1))


def fd_gradient(f, x, h=1e-5):
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(f, x, h=1e-5):
    return np.column_stack([fd_gradient(lambda z, j=j: f(z)[j], x, h) for j in range(x.size)])


# ---------------------------------------------------------------------------
# data


def test_lupus_totals_and_cells():
    d = load_lupus()
    assert (d.n, d.positives) == (55, 18)
    cell = (d.igg_diff == -2.0) & (d.iga == 0.0)
    assert cell.sum() == 7 and d.y[cell].sum() == 0
    cell = (d.igg_diff == 1.0) & (d.iga == 2.0)
    assert cell.sum() == 4 and d.y[cell].sum() == 4
    assert set(d.iga) <= {0.0, 0.5, 1.0, 1.5, 2.0}
    assert set(d.igg_diff) <= set(np.arange(-3.0, 1.75, 0.5))


def test_signed_design_rows(lupus):
    d = load_lupus()
    X = np.column_stack([np.ones(d.n), d.covariates()])
    np.testing.assert_array_equal(np.abs(lupus.X_signed), np.abs(X))
    np.testing.assert_array_equal(lupus.X_signed[:, 0], 2 * d.y - 1)
    assert (lupus.n, lupus.k) == (55, 3)


def test_parse_custom_grid(tmp_path):
    text = "# expect: n=5 positives=2\nr/c 0 1\n0.5 1/2 -\n1.0 0/1 1/2\n"
    d = parse_cell_grid(text)
    assert (d.n, d.positives) == (5, 2)
    p = tmp_path / "grid.txt"
    p.write_text(text)
    assert load_lupus(p).n == 5


@pytest.mark.parametrize("text", [
    "",
    "# expect: n=4 positives=2\nr/c 0 1\n0.5 1/2 -\n1.0 0/1 1/2\n",
    "r/c 0 1\n0.5 1/2\n",
    "r/c 0 1\n0.5 3/2 -\n",
    "r/c 0 1\n0.5 x -\n",
])
def test_parse_rejects_bad_tables(text):
    with pytest.raises(DataIntegrity):
        parse_cell_grid(text)


# ---------------------------------------------------------------------------
# posterior and derivatives


def test_log_posterior_at_zero(lupus):
    assert lupus.log_posterior(np.zeros(3)) == pytest.approx(-55 * math.log(2), rel=1e-14)


def test_log_posterior_vectorized(lupus):
    b = random_betas(7, 60)
    np.testing.assert_allclose(lupus.log_posterior(b), [lupus.log_posterior(x) for x in b],
                               rtol=1e-14)


def test_log_ndtr_deep_tail():
    mp = float(mpmath.log(mpmath.ncdf(-40)))
    assert log_ndtr(-40.0) == pytest.approx(mp, rel=1e-13)
    mills = -800.0 - math.log(40.0 * math.sqrt(2 * math.pi)) + math.log1p(-1 / 1600 + 3 / 1600**2)
    assert log_ndtr(-40.0) == pytest.approx(mills, rel=1e-9)
    one = ProbitModel(np.array([[1.0]]))
    assert np.isfinite(one.log_posterior(np.array([-40.0])))


@pytest.mark.parametrize("u", [-60.0, -30.0, -8.0, -1.0, 0.0, 2.0, 9.0])
def test_inverse_mills_against_high_precision(u):
    mp = mpmath.npdf(u) / mpmath.ncdf(u)
    assert inverse_mills(u) == pytest.approx(float(mp), rel=1e-10)


def test_single_observation_gradient():
    one = ProbitModel(np.array([[1.0]]))
    for b in (-35.0, -3.0, 0.0, 1.7):
        exact = float(mpmath.npdf(b) / mpmath.ncdf(b))
        assert one.gradient(np.array([b]))[0] == pytest.approx(exact, rel=1e-10)


def test_closed_forms_at_zero(lupus):
    X = lupus.X_signed
    np.testing.assert_allclose(lupus.gradient(np.zeros(3)), math.sqrt(2 / math.pi) * X.sum(0),
                               rtol=1e-14)
    np.testing.assert_allclose(lupus.hessian(np.zeros(3)), -(2 / math.pi) * X.T @ X, rtol=1e-13)


@pytest.mark.parametrize("prior_var", [None, 2.0])
def test_derivatives_match_finite_differences(prior_var):
    model = ProbitModel.lupus(prior_var=prior_var)
    for b in np.vstack([np.zeros(3), random_betas(10, 61)]):
        g = model.gradient(b)
        assert np.max(np.abs(g - fd_gradient(model.log_posterior, b))) <= 1e-6
        H = model.hessian(b)
        assert np.max(np.abs(H - fd_jacobian(model.gradient, b))) <= 1e-5
        np.testing.assert_allclose(H, H.T, atol=1e-12)
        np.linalg.cholesky(-H)


# ---------------------------------------------------------------------------
# mode


def test_map_fixture(lupus, lupus_map):
    assert lupus_map.grad_norm <= 1e-8
    assert lupus_map.iterations <= 50
    np.testing.assert_allclose(lupus_map.mode, MAP_FIXTURE, atol=1e-9)
    res = optimize.minimize(lambda b: -lupus.log_posterior(b), np.zeros(3),
                            jac=lambda b: -lupus.gradient(b), method="BFGS",
                            options=dict(gtol=1e-10))
    np.testing.assert_allclose(res.x, MAP_FIXTURE, atol=1e-6)
    assert lupus_map.log_posterior == pytest.approx(lupus.log_posterior(MAP_FIXTURE))


def test_map_separable_data_diverges():
    with pytest.raises(NoConvergence):
        map_newton(ProbitModel(np.array([[1.0]])))


def test_map_gaussian_prior_converges():
    m = map_newton(ProbitModel(np.array([[1.0]]), prior_var=1.0))
    assert m.grad_norm <= 1e-10
    # mode solves phi(b)/Phi(b) = b
    b = m.mode[0]
    assert stats.norm.pdf(b) / stats.norm.cdf(b) == pytest.approx(b, rel=1e-9)
    assert map_newton(ProbitModel.lupus(prior_var=1.0)).grad_norm <= 1e-10


# ---------------------------------------------------------------------------
# Laplace proposal and weights


def test_indefinite_hessian_rejected():
    with pytest.raises(IndefiniteHessian):
        LaplaceProposal(np.zeros(2), np.eye(2))


def test_laplace_density_and_covariance(lupus, lupus_map):
    prop = laplace_proposal(lupus, 5.0, 2.0, lupus_map)
    cov = 5.0 * np.linalg.inv(-lupus_map.hessian)
    np.testing.assert_allclose(prop.cov, cov, rtol=1e-12)
    x = random_betas(5, 62)
    mvn = stats.multivariate_normal(lupus_map.mode, cov)
    np.testing.assert_allclose(prop.log_g(x), mvn.logpdf(x), rtol=1e-12)
    draws = prop.sample(RandomStream(63, 0), 100_000)
    emp = np.cov(draws.T)
    assert np.max(np.abs(emp / cov - 1)) <= 0.03


def test_weight_shift_and_mode_value(lupus, lupus_map):
    p0 = LaplaceProposal(lupus_map.mode, lupus_map.hessian, 5.0, 0.0)
    p2 = LaplaceProposal(lupus_map.mode, lupus_map.hessian, 5.0, 2.0)
    b = np.vstack([lupus_map.mode, random_betas(6, 64)])
    lw0 = np.log(rrs_weight_probit(lupus, p0, b))
    lw2 = np.log(rrs_weight_probit(lupus, p2, b))
    np.testing.assert_allclose(lw2 - lw0, 2.0, rtol=1e-12)
    cov = 5.0 * np.linalg.inv(-lupus_map.hessian)
    expect = 2.0 + lupus_map.log_posterior + 0.5 * np.linalg.slogdet(2 * np.pi * cov)[1]
    assert math.log(rrs_weight_probit(lupus, p2, lupus_map.mode)) == pytest.approx(expect,
                                                                                   rel=1e-12)


# ---------------------------------------------------------------------------
# Gibbs sampler


def test_beta_given_z_single_observation():
    one = ProbitModel(np.array([[1.0]]))
    rng = RandomStream(65, 0)
    b = np.array([beta_given_z(one, [2.0], rng)[0] for _ in range(20_000)])
    assert stats.kstest(b, stats.norm(2.0, 1.0).cdf).pvalue > 0.01


def test_latent_draws_positive(lupus, lupus_map):
    z = truncated_normal_lower(np.tile(lupus.X_signed @ lupus_map.mode, 200), RandomStream(66, 0))
    assert np.all(z > 0)


def test_data_augmentation_marginal():
    # P(all signed latents positive) = prod Phi(X_signed beta)
    X = np.array([[1.0, 0.3], [-1.0, 1.2], [1.0, -0.7]])
    model = ProbitModel(X)
    beta = np.array([0.4, -0.9])
    rng = RandomStream(67, 0)
    n = 100_000
    z = X @ beta + rng.standard_normal((n, 3))
    hit = np.all(z > 0, axis=1)
    p = math.exp(model.log_posterior(beta))
    assert abs(hit.mean() - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_gibbs_skew_normal_posterior():
    # one observation and a N(0,1) prior: posterior 2 phi(b) Phi(b) has mean 1/sqrt(pi)
    model = ProbitModel(np.array([[1.0]]), prior_var=1.0)
    tr = gibbs_probit(model, [0.0], 40_000, RandomStream(68, 0))
    x = tr.states[1000:, 0]
    assert abs(x.mean() - 1 / math.sqrt(math.pi)) <= 3 * mcse(x)
    assert tr.acceptance_rate == 1.0


def test_gibbs_singular_design():
    X = np.array([[1.0, 2.0], [-1.0, -2.0], [1.0, 2.0]])
    with pytest.raises(SingularDesign):
        gibbs_probit(ProbitModel(X), [0.0, 0.0], 10, RandomStream(0, 0))


def test_gibbs_reproducible(lupus):
    a = gibbs_probit(lupus, np.zeros(3), 200, RandomStream(69, 0))
    b = gibbs_probit(lupus, np.zeros(3), 200, RandomStream(69, 0))
    np.testing.assert_array_equal(a.states, b.states)
    assert a.states.shape == (200, 3)


# ---------------------------------------------------------------------------
# summaries


def test_posterior_summary_cases():
    s = posterior_summary(np.full((10, 2), 3.0))
    assert s[0]["sd"] == 0.0 and s[0]["q1"] == s[0]["q3"] == 3.0
    alt = np.tile([1.0, -1.0], 50)
    assert posterior_summary(alt)[0]["median"] == 0.0
    x = np.append(np.arange(1.0, 11.0), 100.0)
    r = posterior_summary(x)[0]
    assert r["n_outliers"] == 1 and r["whisker_hi"] == 10.0 and r["whisker_lo"] == 1.0
    with pytest.raises(ValueError):
        posterior_summary(np.ones((1, 2)))
