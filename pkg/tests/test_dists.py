import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from regensampling.dists import (ExponentialProposal, ProductLaplace, RandomStream, TargetDensity,
                                 TruncatedProposal, as_points, gamma_target, laplace_cdf,
                                 laplace_draw, synthetic_proposal, synthetic_target,
                                 truncated_normal_lower, truncated_sample)
from regensampling.errors import TrialBudgetExceeded

from conftest import ks_99


# ---------------------------------------------------------------- streams


def test_stream_reproducible():
    a = RandomStream(7, 3).random(1000)
    b = RandomStream(7, 3).random(1000)
    assert a.tobytes() == b.tobytes()


def test_streams_differ_by_id_and_seed():
    base = RandomStream(7, 3).random(100)
    assert not np.array_equal(base, RandomStream(7, 4).random(100))
    assert not np.array_equal(base, RandomStream(8, 3).random(100))


def test_streams_uncorrelated():
    a = RandomStream(1, 0).standard_normal(100_000)
    b = RandomStream(1, 1).standard_normal(100_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / np.sqrt(a.size)


def test_stream_pickle_roundtrip():
    import pickle
    r = RandomStream(5, 9)
    r.random(17)
    r2 = pickle.loads(pickle.dumps(r))
    assert r2.random(10).tobytes() == r.random(10).tobytes()


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
@settings(max_examples=25, deadline=None)
def test_stream_property_reproducible(seed, sid):
    assert RandomStream(seed, sid).integers(0, 2**63, 4).tolist() == \
        RandomStream(seed, sid).integers(0, 2**63, 4).tolist()


# ---------------------------------------------------------------- targets


def test_as_points_shapes():
    assert as_points(1.5, 1).shape == (1, 1)
    assert as_points([1.0, 2.0], 1).shape == (2, 1)
    assert as_points([1.0, 2.0], 2).shape == (1, 2)


def test_synthetic_target_values():
    tb = synthetic_target(True)
    assert tb.f([0.0, 0.0])[0] == pytest.approx(1.0)
    assert tb.log_f([7.0, 0.0])[0] == -np.inf
    tu = synthetic_target(False)
    r = 3.0
    assert tu.f([r, 0.0])[0] == pytest.approx(np.exp(-r / 4) * (np.sin(2 * r) + 1))


def test_synthetic_bounded_integral():
    # 2-D quadrature over the square, independent of any sampling
    f = lambda y, x: np.exp(-np.hypot(x, y) / 4) * (np.sin(2 * np.hypot(x, y)) + 1)
    b = 2 * np.pi
    val, err = integrate.dblquad(f, -b, b, -b, b, epsabs=1e-7)
    assert val == pytest.approx(51.74, rel=1e-3)


def test_synthetic_unbounded_integral_closed_form():
    # 2 pi * int r e^{-r/4} (1 + sin 2r) dr = 2 pi (16 + Im 1/(1/4 - 2i)^2)
    closed = 2 * np.pi * (16 + 256 / 4225)
    radial = integrate.quad(lambda r: 2 * np.pi * r * np.exp(-r / 4) * (1 + np.sin(2 * r)),
                            0, np.inf, limit=400)[0]
    assert radial == pytest.approx(closed, rel=1e-8)
    assert closed == pytest.approx(100.91, abs=0.01)


def test_gamma_target_log():
    t = gamma_target(2.0)
    assert t.log_f([-1.0])[0] == -np.inf
    assert t.f([2.0])[0] == pytest.approx(2 * np.exp(-2))


# ---------------------------------------------------------------- proposals


@pytest.mark.parametrize("prop,lo,hi", [
    (ExponentialProposal(0.4), 0, np.inf),
    (ExponentialProposal(1.0), 0, np.inf),
])
def test_proposal_1d_normalized(prop, lo, hi):
    val = integrate.quad(lambda x: prop.g([x])[0], lo, hi)[0]
    assert val == pytest.approx(1.0, abs=1e-6)


def test_product_laplace_normalized():
    p = ProductLaplace(4.0, 2)
    val = integrate.dblquad(lambda y, x: p.g([[x, y]])[0], -np.inf, np.inf, -np.inf, np.inf)[0]
    assert val == pytest.approx(1.0, abs=1e-6)


def test_truncated_laplace_normalized():
    p = synthetic_proposal(True)
    b = 2 * np.pi
    val = integrate.dblquad(lambda y, x: p.g([[x, y]])[0], -b, b, -b, b)[0]
    assert val == pytest.approx(1.0, abs=1e-6)


def test_laplace_draw_zero_at_center():
    class Fixed:
        def random(self, size=None):
            return 0.5 if size is None else np.full(size, 0.5)
    assert laplace_draw(Fixed(), 4.0) == 0.0


def test_laplace_moments(rng):
    x = laplace_draw(rng, 4.0, 10**6)
    assert np.mean(np.abs(x)) == pytest.approx(4.0, abs=0.02)
    assert np.var(x) == pytest.approx(32.0, abs=0.5)


def test_laplace_cdf_ks(rng):
    x = laplace_draw(rng, 2.5, 10**5)
    assert stats.kstest(x, lambda v: laplace_cdf(v, 2.5)).statistic < ks_99(x.size)


def test_truncated_acceptance(rng):
    # acceptance (1 - e^{-pi/2})^2 of product Laplace(0,4) on [-2pi, 2pi]^2
    base = ProductLaplace(4.0, 2)
    b = 2 * np.pi
    trials = [truncated_sample(base, [-b, -b], [b, b], rng)[1] for _ in range(20_000)]
    acc = len(trials) / np.sum(trials)
    assert acc == pytest.approx((1 - np.exp(-np.pi / 2)) ** 2, abs=0.01)
    p = TruncatedProposal(base, [-b, -b], [b, b])
    p.sample(rng, 100_000)
    assert 100_000 / p.trials == pytest.approx(0.63, abs=0.01)


def test_truncated_full_box_single_trial(rng):
    for _ in range(20):
        _, k = truncated_sample(ExponentialProposal(1.0), [0.0], [np.inf], rng)
        assert k == 1


def test_truncated_exponential_memoryless(rng):
    p = TruncatedProposal(ExponentialProposal(1.0), [1.0], [np.inf])
    x = p.sample(rng, 100_000)[:, 0]
    assert x.min() >= 1.0
    assert x.mean() == pytest.approx(2.0, abs=0.02)
    assert stats.kstest(x - 1.0, "expon").statistic < 0.01


def test_truncated_laplace_ks(rng):
    p = TruncatedProposal(ProductLaplace(4.0, 1), [-1.0], [3.0])
    x = p.sample(rng, 100_000)[:, 0]
    F = lambda v: (laplace_cdf(v, 4.0) - laplace_cdf(-1.0, 4.0)) / p.mass
    assert stats.kstest(x, F).statistic < 0.01


def test_truncated_trial_cap(rng):
    with pytest.raises(TrialBudgetExceeded):
        truncated_sample(ExponentialProposal(1.0), [60.0], [61.0], rng, trial_cap=1000)


# ---------------------------------------------------------------- truncated normal


def _tn_mean(m):
    f = lambda z: z * stats.norm.pdf(z - m)
    return integrate.quad(f, 0, np.inf)[0] / stats.norm.sf(-m)


def test_truncated_normal_mean_zero(rng):
    z = truncated_normal_lower(np.zeros(10**6), rng)
    assert _tn_mean(0.0) == pytest.approx(np.sqrt(2 / np.pi), rel=1e-9)
    assert z.mean() == pytest.approx(np.sqrt(2 / np.pi), abs=0.002)


def test_truncated_normal_mean_ten(rng):
    z = truncated_normal_lower(np.full(10**5, 10.0), rng)
    assert z.mean() == pytest.approx(10.0, abs=0.01)


@pytest.mark.parametrize("m", [-8.0, -2.5, 1.0])
def test_truncated_normal_law(rng, m):
    z = truncated_normal_lower(np.full(50_000, m), rng)
    assert np.all(z > 0)
    cdf = lambda v: 1 - stats.norm.sf(v - m) / stats.norm.sf(-m)
    assert stats.kstest(z, cdf).statistic < ks_99(z.size)
    assert z.mean() == pytest.approx(_tn_mean(m), rel=0.01)


@given(st.floats(-40, 40))
@settings(max_examples=50, deadline=None)
def test_truncated_normal_positive(m):
    z = truncated_normal_lower(np.full(16, m), RandomStream(1, 0))
    assert np.all(z > 0) and np.all(np.isfinite(z))
