"""
Regenerative ratio estimators and their bias
============================================

The cycles of an RRS run give the ratio estimator
``q_hat(t) = sum h(X_n) W_n / sum W_n`` of the target mean of ``h``.  Keeping
the last (covering) cycle leaves a bias of order 1/t^2; dropping it gives
order 1/t.  A bound on the bias depends only on the first three moments of W.
"""

import numpy as np

from regensampling import ExponentialProposal, RandomStream, bias_bound, estimate, gamma_target
from regensampling.estimators import bias_sweep, fit_slope, reference_value
from regensampling.samplers import cycle_moments, rrs_path

target, prop = gamma_target(2.0), ExponentialProposal(1.0)
q = reference_value(lambda x: x * np.exp(-x), np.tanh)
print(f"E[tanh X] by quadrature: {q:.10f}")

# %%
# One run with a confidence interval and the bias bound.
path = rrs_path(target, prop, 500.0, RandomStream(1, 0))
m = cycle_moments(target, prop, 100_000, RandomStream(1, 1))
est = estimate(path, np.tanh, 0.95, K=1.0, moments=m)
print(f"q_hat = {est.value:.4f} from {est.n_cycles} cycles, 95% CI "
      f"[{est.ci[0]:.4f}, {est.ci[1]:.4f}], bias bound {est.bias_bound:.1e}")

# %%
# Bias across t from independent replicates, against the bound.
rows = bias_sweep(target, prop, np.tanh, 1.0, q, [5, 10, 20, 50], 50_000, seed=2,
                  moment_draws=200_000)
for r in rows:
    print(f"t={r.t:5.1f}  fixed-time {r.bias_qt:+.2e}  drop-last {r.bias_drop:+.2e}  "
          f"bound {r.bound:.2e}")
ts = [r.t for r in rows if r.t >= 10]
print(f"slopes: fixed-time {fit_slope(ts, [r.bias_qt for r in rows if r.t >= 10]):.2f}, "
      f"drop-last {fit_slope(ts, [r.bias_drop for r in rows if r.t >= 10]):.2f}")
print(f"bias_bound(K=1, moments 1, 2, 6, t=100) = {bias_bound(1, 1, 2, 6, 100):.4e}")
