"""
Renewal processes and their closed-form checks
==============================================

A renewal process with Gamma(2, 1) interarrivals has an explicit law for the
residual time R(t) to the next epoch.  Its distance in total variation from
the stationary residual law decays like ``exp(-2t) / (2e)``.  This demo
simulates the process and compares it with these formulas.
"""

import numpy as np
from scipy import stats

from regensampling import RandomStream
from regensampling.renewal import (Exponential, Gamma2, gamma2_oracle, run_tv_estimate,
                                   sample_states, simulate_renewal, solve_renewal_equation,
                                   state_at)

rng = RandomStream(7, 0)

# %%
# One trace: epochs up to a horizon and the state at a fixed time.
trace = simulate_renewal(Gamma2(1.0), 10.0, rng)
print("epochs:", np.round(trace.epochs, 3))
print(state_at(trace, 6.0))

# %%
# Poisson case: the expected number of epochs in [0, 50], counting the one at
# zero, is 1 + 50.
s = sample_states(Exponential(1.0), 50.0, 10_000, rng)
print(f"E[N(50)] ~ {s.n.mean():.3f} (exact 51)")

# %%
# Gamma(2, 1): the residual law at t = 2 against its closed form.
o = gamma2_oracle(1.0)
s = sample_states(Gamma2(1.0), 2.0, 100_000, rng)
ks = stats.kstest(s.residual, lambda x: o.residual_cdf(x, 2.0)).statistic
print(f"KS distance of R(2) to the closed form: {ks:.4f}")

# %%
# Total variation between R(t) and the stationary law, three ways: closed form,
# quadrature of the two densities, and simulation (conditional Monte Carlo).
for t in (1.0, 2.0, 3.0):
    tv_mc, se = run_tv_estimate(t, 2_000_000, seed=8)
    print(f"t={t:g}: formula {o.tv(t):.3e}  quadrature {o.tv_quadrature(t):.3e}  "
          f"simulation {tv_mc:.3e} +- {se:.1e}")

# %%
# The renewal function U(t) = E[N(t)] solves a renewal equation; the
# trapezoid discretization reproduces the closed form.
grid, U = solve_renewal_equation(lambda x: np.ones_like(x), Gamma2(1.0).pdf, 0.01, 10.0)
print(f"max |U_numeric - U_exact| on [0, 10]: {np.max(np.abs(U - o.renewal_function(grid))):.2e}")
