"""End-to-end acceptance checks.

Each test prints one ``CRITERION n: PASS|FAIL`` line with the measured
numbers, then asserts.  Tolerances are the stated ones; criteria that cannot
be met are left failing.
"""

import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from regensampling import coupling as cpl
from regensampling.cli import dispatch, read_tables
from regensampling.dists import (ExponentialProposal, RandomStream, gamma_target,
                                 synthetic_proposal, synthetic_target)
from regensampling.estimators import (bias_bound, bias_sweep, ci_coverage, fit_slope,
                                      reference_value)
from regensampling.probit import ProbitModel, map_newton
from regensampling.renewal import gamma2_oracle, run_tv_estimate, sample_states, Exponential
from regensampling.samplers import (rejection_sample_many, run_cycle_moments, run_replicates,
                                    threshold_select)

GAMMA2 = gamma_target(2.0)
EXP1 = ExponentialProposal(1.0)


def verdict(capsys, n, checks):
    """Print one line for criterion ``n`` and assert every ``(label, ok)``."""
    ok = all(c for _, c in checks)
    detail = "; ".join(f"{label} [{'ok' if c else 'MISS'}]" for label, c in checks)
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def rrs_output_cdf(y, t):
    y = np.asarray(y, float)
    return np.where(y <= t, 1.0 - (1.0 + y) * np.exp(-y), 1.0 - (1.0 + t) * np.exp(-y))


def cli(tmp_path, name, *argv):
    out = tmp_path / name
    code = dispatch([*argv, "--out", str(out)])
    return code, out


def test_criterion_01_rejection_acceptance(capsys):
    # 62 500 accepted outputs consume about 10^5 proposal trials
    _, trials, _ = rejection_sample_many(GAMMA2, ExponentialProposal(0.4), 1.6, 62_500,
                                         RandomStream(101, 0))
    acc = trials.size / trials.sum()
    verdict(capsys, 1, [(f"acceptance {acc:.5f} over {trials.sum()} trials vs 0.625 +- 0.005",
                         abs(acc - 0.625) <= 0.005)])


def test_criterion_02_rrs_exact_law(capsys):
    checks = []
    for t in (1.0, 3.0, 10.0):
        b = run_replicates(GAMMA2, EXP1, t, 100_000, seed=202)
        d = stats.kstest(b.point[:, 0], lambda y: rrs_output_cdf(y, t)).statistic
        checks.append((f"sup|F_emp - Z(t={t:g})| = {d:.4f} <= 0.01", d <= 0.01))
        if t == 3.0:
            y = b.point[:, 0]
            # the output density exceeds the target exactly on (t, t + 1), so
            # TV = P_out(t < Y <= t+1) - P_target(t < Y <= t+1)
            f = stats.gamma(2)
            tv = np.mean((y > t) & (y <= t + 1)) - (f.cdf(t + 1) - f.cdf(t))
            exact = math.exp(-(t + 1))
            checks.append((f"measured TV(3) = {tv:.5f} vs exact e^-4 = {exact:.5f} (info)", True))
            bound = math.exp(-t) * (1 + t)
            checks.append((f"measured TV(3) = {tv:.5f} within 25% of {bound:.4f}",
                           abs(tv - bound) <= 0.25 * bound))
    verdict(capsys, 2, checks)


def test_criterion_03_bias_orders(capsys):
    q = reference_value(lambda x: x * np.exp(-x), np.tanh)
    grid = [1.0, 5.0, 10.0, 20.0, 50.0, 100.0]
    rows = bias_sweep(GAMMA2, EXP1, np.tanh, 1.0, q, grid, 100_000, seed=303)
    checks = [(f"|bias(t={r.t:g})| = {abs(r.bias_qt):.2e} <= bound {r.bound:.2e}", r.passed)
              for r in rows]
    sel = [r for r in rows if 10 <= r.t <= 100]
    ts = [r.t for r in sel]
    s_qt = fit_slope(ts, [abs(r.bias_qt) for r in sel])
    s_d = fit_slope(ts, [abs(r.bias_drop) for r in sel])
    checks.append((f"slope fixed-time {s_qt:.3f} in -2 +- 0.4", abs(s_qt + 2) <= 0.4))
    checks.append((f"slope drop-last {s_d:.3f} in -1 +- 0.4", abs(s_d + 1) <= 0.4))
    verdict(capsys, 3, checks)


def test_criterion_04_bound_formula(capsys):
    v = bias_bound(1, 1, 2, 6, 100)
    verdict(capsys, 4, [(f"bias_bound(1,1,2,6,100) = {v:.7e} vs 8.0796e-3 +- 1e-6",
                         abs(v - 8.0796e-3) <= 1e-6)])


def test_criterion_05_ci_coverage(capsys):
    cov = ci_coverage(GAMMA2, EXP1, lambda x: x, 2.0, 200.0, 1000, seed=505)
    verdict(capsys, 5, [(f"coverage {cov:.3f} in [0.92, 0.97]", 0.92 <= cov <= 0.97)])


def test_criterion_06_renewal_oracles(capsys):
    checks = []
    rng = RandomStream(606, 0)
    s = sample_states(Exponential(1.0), 50.0, 10_000, rng)
    checks.append((f"E[N(50)] = {s.n.mean():.3f} vs 51 +- 0.3", abs(s.n.mean() - 51) <= 0.3))
    o = gamma2_oracle(1.0)
    for t in (1.0, 2.0, 3.0):
        l1, tv = 2 * o.tv_quadrature(t), 2 * o.tv(t)
        checks.append((f"L1(t={t:g}) {l1:.9f} = 2 tv {tv:.9f} within 1e-6", abs(l1 - tv) <= 1e-6))
    for t in (1.0, 2.0, 3.0):
        est, se = run_tv_estimate(t, 10**7, seed=606, stream_offset=int(t) << 20)
        rel = abs(est - o.tv(t)) / o.tv(t)
        checks.append((f"TV(t={t:g}) {est:.3e} +- {se:.1e} vs {o.tv(t):.3e} (rel {rel:.3f} <= 0.15)",
                       rel <= 0.15))
    verdict(capsys, 6, checks)


def test_criterion_07_coupling(tmp_path, capsys):
    _, delta = cpl.common_component("gamma2", 4.0, 1.0)
    code, out = cli(tmp_path, "coupling.csv", "coupling", "--seed", "707")
    meta, tables = read_tables(out)
    summary = {r["quantity"]: float(r["value"]) for r in tables["summary"]}
    checks = [(f"delta(4,1) = {delta:.6f} ~ 0.18382", abs(delta - 0.18382) <= 1e-4)]
    checks.append((f"sigma ~ Geom(delta): chi-square p = {summary['chisquare_p']:.3f} > 0.01",
                   meta["assert"]["sigma_geometric_chisquare_p>0.01"]))
    ineq = [v for k, v in meta["assert"].items() if k.startswith("coupling_inequality")]
    checks.append((f"coupling inequality + 3 stderr at t = 1..10: {sum(ineq)}/{len(ineq)}",
                   len(ineq) == 10 and all(ineq)))
    checks.append((f"tail slope {summary['tail_slope']:.4f} < 0", meta["assert"]["tail_slope_negative"]))
    checks.append((f"half-sample slopes {summary['tail_slope_first_half']:.4f}, "
                   f"{summary['tail_slope_second_half']:.4f} within 25%",
                   meta["assert"]["tail_slope_stable"]))
    checks.append((f"exit code {code}", code == 0))
    verdict(capsys, 7, checks)


def _polar_mass():
    r = integrate.quad(lambda r: 2 * np.pi * r * np.exp(-r / 4) * (1 + np.sin(2 * r)), 0, np.inf,
                       limit=500)[0]
    return r


def test_criterion_08_threshold(capsys):
    b = 2 * np.pi
    f = lambda x2, x1: math.exp(-math.hypot(x1, x2) / 4) * (1 + math.sin(2 * math.hypot(x1, x2)))
    quad_b = integrate.dblquad(f, -b, b, -b, b, epsabs=1e-9)[0]
    quad_u = _polar_mass()
    checks = []
    for name, bounded, quad, ref in (("bounded", True, quad_b, 56.91),
                                       ("unbounded", False, quad_u, 111.1)):
        m = run_cycle_moments(synthetic_target(bounded), synthetic_proposal(bounded), 10**6,
                              seed=808, keep_raw=False)
        t = threshold_select(10_000, 1000, 10_000, m.mu)
        t_quad = threshold_select(10_000, 1000, 10_000, quad)
        checks.append((f"{name}: t = {t:.3f} vs {ref} +- 2%", abs(t / ref - 1) <= 0.02))
        checks.append((f"{name}: E[W] = {m.mu:.3f} +- {m.stderr[0]:.3f} vs quadrature "
                       f"{quad:.3f} (t {t_quad:.3f})", abs(t / t_quad - 1) <= 0.02))
    verdict(capsys, 8, checks)


def _fd_checks():
    model = ProbitModel.lupus()
    rng = RandomStream(909, 0)
    worst_g = worst_h = 0.0
    for b in np.vstack([np.zeros(3), rng.uniform(-1.7, 1.7, (10, 3))]):
        h = 1e-5
        E = np.eye(3) * h
        g_fd = np.array([(model.log_posterior(b + e) - model.log_posterior(b - e)) / (2 * h)
                         for e in E])
        H_fd = np.column_stack([(model.gradient(b + e) - model.gradient(b - e)) / (2 * h)
                                for e in E])
        worst_g = max(worst_g, np.max(np.abs(model.gradient(b) - g_fd)))
        worst_h = max(worst_h, np.max(np.abs(model.hessian(b) - H_fd)))
    return worst_g, worst_h


def test_criterion_09_probit(tmp_path, capsys):
    wg, wh = _fd_checks()
    mp = map_newton(ProbitModel.lupus())
    checks = [(f"gradient FD error {wg:.1e} <= 1e-6", wg <= 1e-6),
              (f"Hessian FD error {wh:.1e} <= 1e-5", wh <= 1e-5),
              (f"MAP grad norm {mp.grad_norm:.1e} <= 1e-8", mp.grad_norm <= 1e-8)]
    sr, sg = tmp_path / "rrs.json", tmp_path / "gibbs.json"
    cli(tmp_path, "rrs.csv", "probit", "--method", "rrs", "--seed", "909", "--summary", str(sr))
    cli(tmp_path, "gibbs.csv", "probit", "--method", "gibbs", "--seed", "909", "--summary", str(sg))
    r, g = json.loads(sr.read_text()), json.loads(sg.read_text())
    t = r["t"]
    checks.append((f"auto t = {t:.4f} vs 0.7780 +- 5%", abs(t / 0.7780 - 1) <= 0.05))
    for name in ("beta0", "beta1", "beta2"):
        mr, mg = r["posterior"][name]["mean"], g["posterior"][name]["mean"]
        se = math.hypot(r["mcse"][name], g["mcse"][name])
        checks.append((f"{name} mean rrs {mr:.3f} vs gibbs {mg:.3f} (3 se = {3 * se:.3f})",
                       abs(mr - mg) <= 3 * se))
    a10, a100 = r["acf"]["beta1"]["10"], g["acf"]["beta1"]["100"]
    checks.append((f"RRS IgG ACF lag 10 = {a10:.3f} <= 0.1", a10 <= 0.1))
    checks.append((f"Gibbs IgG ACF lag 100 = {a100:.3f} >= 0.2", a100 >= 0.2))
    verdict(capsys, 9, checks)


def test_criterion_10_bench(tmp_path, capsys):
    code, out = cli(tmp_path, "bench.csv", "bench", "--seed", "1010")
    meta, tables = read_tables(out)
    sps = {row["method"]: float(row["samples_per_second"]) for row in tables["main"]}
    verdict(capsys, 10, [(f"samples/s rrs {sps['rrs']:.0f} > gibbs {sps['gibbs']:.0f} "
                          f"over {tables['main'][0]['reps']} reps",
                          meta["assert"]["rrs_faster_than_gibbs"] and code == 0)])


DETERMINISM_RUNS = {
    "renewal-verify": ["renewal-verify", "--tv-traces", "200000"],
    "coupling": ["coupling", "--runs", "50000"],
    "sample rs": ["sample", "--method", "rs", "--n", "20000"],
    "sample rrs": ["sample", "--method", "rrs", "--t", "10", "--n", "50000"],
    "sample rrs-sub": ["sample", "--method", "rrs-sub", "--target", "synthetic-bounded",
                       "--t", "auto", "--n", "2000", "--steps", "2000", "--burnin", "200"],
    "sample imh": ["sample", "--method", "imh", "--emit-acf", "20"],
    "sample rwm": ["sample", "--method", "rwm", "--target", "synthetic-bounded"],
    "moments": ["moments", "--target", "synthetic-bounded", "--M", "500000"],
    "bias-sweep": ["bias-sweep", "--M", "20000", "--moment-draws", "200000"],
    "estimate": ["estimate", "--t", "500", "--moment-draws", "200000"],
    "probit rrs": ["probit", "--N", "2000", "--moment-draws", "200000"],
    "probit gibbs": ["probit", "--method", "gibbs", "--N", "2000"],
}


def test_criterion_11_determinism(tmp_path, capsys):
    checks = []
    for i, (name, argv) in enumerate(DETERMINISM_RUNS.items()):
        outs = []
        for w in ("1", "8"):
            _, p = cli(tmp_path, f"{i}_{w}.out", *argv, "--seed", "1111", "--workers", w)
            outs.append(p.read_bytes())
        checks.append((f"{name}: {len(outs[0])} bytes", outs[0] == outs[1]))
    verdict(capsys, 11, checks)
