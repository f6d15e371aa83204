"""Command-line experiment runner.

Every subcommand computes its tables and assertions first and writes a
single output (CSV or JSON) atomically afterwards.  Output files start with
``#`` metadata lines holding the tool version, the resolved configuration,
the seed and one pass/fail line per assertion.  Worker count and output
paths are execution settings; they never change the numbers and are left out
of the recorded configuration, so runs with different ``--workers`` produce
byte-identical files.

Exit codes: 0 when every assertion passes, 1 when one fails (or the
experiment raises a library error), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, stats

from . import __version__
from . import coupling as cpl
from . import dists, estimators, probit, renewal, samplers
from .errors import RegenError, SchemaMismatch

TOOL = f"regensampling {__version__}"
# settings that affect how a run executes but not what it computes
EXECUTION_KEYS = ("out", "workers", "config", "summary", "dump", "timings")
KS_99 = 1.628  # asymptotic 99% point of sqrt(n) * KS statistic


class UsageError(Exception):
    """Bad flag values or an inconsistent combination of flags."""


# ---------------------------------------------------------------------------
# tables


def _is_float(v):
    return isinstance(v, (float, int, np.floating, np.integer)) and not isinstance(v, (bool, np.bool_))


def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, (bool, np.bool_))


_CHECKS = {float: _is_float, int: _is_int, bool: lambda v: isinstance(v, (bool, np.bool_)),
           str: lambda v: isinstance(v, str)}


def format_value(v, kind) -> str:
    """Text form of a cell: 17 significant digits for floats."""
    if kind is float:
        return format(float(v), ".17g")
    if kind is bool:
        return "true" if v else "false"
    return str(int(v)) if kind is int else str(v)


def parse_value(s: str, kind):
    if kind is float:
        return float(s)
    if kind is int:
        return int(s)
    if kind is bool:
        if s not in ("true", "false"):
            raise ValueError(f"not a boolean: {s!r}")
        return s == "true"
    return s


def check_rows(rows, schema) -> None:
    """Raise :class:`SchemaMismatch` unless every row matches ``schema``.

    ``schema`` is a sequence of ``(column, type)`` with type in
    ``float, int, bool, str``.
    """
    names = [n for n, _ in schema]
    if len(set(names)) != len(names):
        raise SchemaMismatch("duplicate column names")
    for k, kind in schema:
        if kind not in _CHECKS:
            raise SchemaMismatch(f"unsupported column type for {k!r}")
    for i, row in enumerate(rows):
        if not isinstance(row, dict) or set(row) != set(names):
            raise SchemaMismatch(f"row {i} keys do not match the schema")
        for k, kind in schema:
            if not _CHECKS[kind](row[k]):
                raise SchemaMismatch(f"row {i} column {k!r}: {row[k]!r} is not {kind.__name__}")


def render_csv(rows, schema) -> str:
    check_rows(rows, schema)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([n for n, _ in schema])
    for row in rows:
        w.writerow([format_value(row[n], kind) for n, kind in schema])
    return buf.getvalue()


def atomic_write(path, data) -> None:
    """Write to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_table(rows, schema, path, header_lines=()) -> None:
    """Write ``rows`` as CSV with a header row; ``#`` lines go first.

    The schema is checked before anything is written.
    """
    body = render_csv(rows, schema)
    head = "".join(f"# {line}\n" for line in header_lines)
    atomic_write(path, head + body)


def read_tables(path_or_text, schemas=None) -> tuple[dict, dict]:
    """Parse a file written by this tool.

    Returns
    -------
    meta : dict
        ``key: value`` pairs from the ``#`` lines (assertions under
        ``"assert"``).
    tables : dict
        Table name to list of row dicts; the first table is ``"main"``.
        Cells are parsed with ``schemas[name]`` when given, else left as
        strings.
    """
    text = path_or_text
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str)
                                          and "\n" not in path_or_text):
        text = Path(path_or_text).read_text()
    meta = {"assert": {}}
    blocks = {"main": []}
    current = "main"
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(": ")
            if key == "table":
                current = value
                blocks[current] = []
            elif key.startswith("assert "):
                meta["assert"][key[7:]] = value == "pass"
            else:
                meta[key] = value
        elif line:
            blocks[current].append(line)
    tables = {}
    for name, lines in blocks.items():
        if not lines:
            continue
        reader = csv.reader(lines)
        header = next(reader)
        kinds = dict(schemas.get(name, ())) if schemas else {}
        tables[name] = [{h: parse_value(c, kinds[h]) if h in kinds else c
                         for h, c in zip(header, cells)} for cells in reader]
    return meta, tables


def read_table(path_or_text, schema=None) -> list[dict]:
    """Rows of the main table (see :func:`read_tables`)."""
    return read_tables(path_or_text, {"main": schema} if schema else None)[1].get("main", [])


# ---------------------------------------------------------------------------
# run results


@dataclass
class Outcome:
    """What a subcommand produced: tables, assertions and an optional record."""

    tables: dict = field(default_factory=dict)  # name -> (schema, rows)
    assertions: list = field(default_factory=list)  # (name, passed)
    record: dict | None = None
    side_files: list = field(default_factory=list)  # (path, text or bytes)
    default_format: str = "csv"
    stderr_text: str | None = None
    derived: dict = field(default_factory=dict)  # values resolved at run time

    def check(self, name, passed):
        self.assertions.append((name, bool(passed)))

    @property
    def passed(self):
        return all(p for _, p in self.assertions)


@dataclass(frozen=True)
class RunReport:
    """Throughput counters of one sampling run."""

    wall_seconds: float
    proposal_draws: int
    samples_emitted: int

    @property
    def samples_per_second(self) -> float:
        return self.samples_emitted / self.wall_seconds


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def resolved_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in EXECUTION_KEYS and k != "func"}
    return json.loads(json.dumps(cfg, sort_keys=True, default=_json_default))


def render(outcome: Outcome, args) -> str:
    fmt = args.format or outcome.default_format
    cfg = resolved_config(args)
    if fmt == "json":
        doc = dict(tool=TOOL, command=args.command, seed=args.seed, config=cfg,
                   assertions={n: ("pass" if p else "fail") for n, p in outcome.assertions},
                   tables={})
        for name, (schema, rows) in outcome.tables.items():
            check_rows(rows, schema)
            doc["tables"][name] = [{n: (float(r[n]) if kind is float else
                                        int(r[n]) if kind is int else
                                        bool(r[n]) if kind is bool else r[n])
                                    for n, kind in schema} for r in rows]
        if outcome.derived:
            doc["derived"] = outcome.derived
        if outcome.record is not None:
            doc["result"] = outcome.record
        return dumps(doc)
    lines = [f"tool: {TOOL}", f"command: {args.command}", f"seed: {args.seed}",
             "config: " + json.dumps(cfg, sort_keys=True)]
    if outcome.derived:
        lines.append("derived: " + json.dumps(outcome.derived, sort_keys=True,
                                              default=_json_default))
    lines += [f"assert {n}: {'pass' if p else 'fail'}" for n, p in outcome.assertions]
    out = "".join(f"# {line}\n" for line in lines)
    for i, (name, (schema, rows)) in enumerate(outcome.tables.items()):
        if i:
            out += f"# table: {name}\n"
        out += render_csv(rows, schema)
    return out


# ---------------------------------------------------------------------------
# argument types


def _seed(s):
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _positive_int(s):
    v = int(float(s)) if "e" in s.lower() else int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _positive_float(s):
    v = float(s)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError("must be a positive number")
    return v


def _float_list(s):
    try:
        vals = [float(x) for x in s.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _t_value(s):
    return "auto" if s == "auto" else _positive_float(s)


def _prior(s):
    if s == "flat":
        return s
    if s.startswith("gauss:"):
        _positive_float(s[6:])
        return s
    raise argparse.ArgumentTypeError("prior must be 'flat' or 'gauss:<variance>'")


def _bool(s):
    if isinstance(s, bool):
        return s
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


# ---------------------------------------------------------------------------
# shared experiment set-up


TARGETS = ("gamma-exp", "synthetic-bounded", "synthetic-unbounded")


def synthetic_bound(prop: dists.TruncatedProposal) -> float:
    """Bound on ``f_prop / g`` for the bounded synthetic pair.

    ``f_prop <= 2 exp(-r/4)``, ``|x1| + |x2| <= sqrt(2) r`` and
    ``r <= 2 pi sqrt 2`` on the square.
    """
    s = prop.base.scale
    r_max = 2.0 * np.pi * np.sqrt(2.0)
    rate = max(np.sqrt(2.0) / s - 0.25, 0.0)
    return 2.0 * (2.0 * s) ** 2 * prop.mass * np.exp(rate * r_max)


def target_pair(name: str, method: str, rate: float | None = None):
    """``(target, proposal, C)`` for a named target; ``C`` is None when unbounded."""
    if name == "gamma-exp":
        if method == "rs":
            r = 0.4 if rate is None else rate
            # sup x e^{-x} / (r e^{-r x}) = 1 / (r (1 - r) e) for r < 1
            C = 1.6 if rate is None else (1.0 / (r * (1.0 - r) * np.e) if r < 1 else None)
            return dists.gamma_target(2.0), dists.ExponentialProposal(r), C
        return dists.gamma_target(2.0), dists.ExponentialProposal(1.0 if rate is None else rate), None
    bounded = name == "synthetic-bounded"
    prop = dists.synthetic_proposal(bounded)
    C = synthetic_bound(prop) if bounded else None
    return dists.synthetic_target(bounded), prop, C


def default_x0(name):
    return [1.0] if name == "gamma-exp" else [0.1, 0.1]


def auto_threshold(target, prop, n_sub, steps, burnin, draws, seed, workers, offset):
    m = samplers.run_cycle_moments(target, prop, draws, seed, workers,
                                   stream_offset=offset + (1 << 40), keep_raw=False)
    return samplers.threshold_select(steps, burnin, n_sub, m.mu), m


def _point_schema(dim):
    return [(f"x{j + 1}", float) for j in range(dim)]


def _point_rows(pts):
    pts = np.asarray(pts, float)
    return [{f"x{j + 1}": float(v) for j, v in enumerate(p)} for p in pts]


def _acf_table(pts, K):
    pts = np.asarray(pts, float)
    if pts.shape[0] <= 4 * K:
        raise UsageError("--emit-acf needs more than 4*K samples")
    cols = [samplers.acf(pts[:, j], K) for j in range(pts.shape[1])]
    schema = [("lag", int)] + [(f"acf_x{j + 1}", float) for j in range(pts.shape[1])]
    rows = [dict(lag=k, **{f"acf_x{j + 1}": float(c[k]) for j, c in enumerate(cols)})
            for k in range(K + 1)]
    return schema, rows


# ---------------------------------------------------------------------------
# subcommands


RENEWAL_SCHEMA = [("check_name", str), ("t", float), ("empirical", float), ("oracle", float),
                  ("abs_error", float), ("tolerance", float), ("pass", bool)]


def _check_row(name, t, emp, oracle, tol):
    err = abs(emp - oracle)
    return dict(check_name=name, t=float(t), empirical=float(emp), oracle=float(oracle),
                abs_error=float(err), tolerance=float(tol), **{"pass": bool(err <= tol)})


def _states(args, law, t, n, offset, delay=None):
    parts = _map(args, lambda rng, c: renewal.sample_states(law, t, c, rng, delay), n, offset)
    return renewal.RenewalStates(float(t), np.concatenate([p.n for p in parts]),
                                 np.concatenate([p.elapsed for p in parts]),
                                 np.concatenate([p.residual for p in parts]))


def _map(args, func, n, offset, chunk=10_000):
    from .parallel import map_chunks
    return map_chunks(func, n, args.seed, args.workers, chunk, args.streams + offset)


def cmd_renewal_verify(args) -> Outcome:
    out = Outcome()
    rows = []
    lam = args.lam
    po, go = renewal.poisson_oracle(lam), renewal.gamma2_oracle(lam)
    exp_law, g2_law = renewal.Exponential(lam), renewal.Gamma2(lam)

    s = _states(args, exp_law, 50.0, args.traces, 1 << 36)
    rows.append(_check_row("poisson_mean_count", 50.0, s.n.mean(), po.renewal_function(50.0),
                           args.count_tol))

    T = args.lln_horizon
    s = _states(args, g2_law, T, args.lln_traces, 2 << 36)
    # 3-sigma CLT envelope for the mean of N(T)/T
    tol = 3.0 * math.sqrt(g2_law.var / (g2_law.mean**3 * T) / args.lln_traces)
    rows.append(_check_row("gamma2_rate_lln", T, (s.n / T).mean(), 1.0 / g2_law.mean, tol))

    s = _states(args, exp_law, 17.0, args.ks_traces, 3 << 36)
    ks = stats.kstest(s.residual, lambda x: -np.expm1(-lam * x)).statistic
    rows.append(_check_row("poisson_residual_ks", 17.0, ks, 0.0, KS_99 / math.sqrt(s.n.size)))

    s = _states(args, g2_law, 2.0, args.ks_traces, 4 << 36)
    ks = stats.kstest(s.residual, lambda x: go.residual_cdf(x, 2.0)).statistic
    rows.append(_check_row("gamma2_residual_ks", 2.0, ks, 0.0, KS_99 / math.sqrt(s.n.size)))

    s = _states(args, g2_law, 5.0, args.ks_traces, 5 << 36, delay=go.sample_f0)
    ks = stats.kstest(s.residual, go.F0).statistic
    rows.append(_check_row("stationary_delay_ks", 5.0, ks, 0.0, KS_99 / math.sqrt(s.n.size)))

    for t in args.tv_grid:
        rows.append(_check_row("gamma2_l1_quadrature", t, 2.0 * go.tv_quadrature(t),
                               2.0 * go.tv(t), 1e-6))
    for i, t in enumerate(args.tv_grid):
        tv, _ = renewal.run_tv_estimate(t, args.tv_traces, args.seed, lam, args.workers,
                                        stream_offset=args.streams + ((6 + i) << 36))
        rows.append(_check_row("gamma2_tv", t, tv, go.tv(t), args.tv_rel_tol * go.tv(t)))

    grid, Z = renewal.solve_renewal_equation(lambda x: np.exp(-lam * x), exp_law.pdf, 0.01, 10.0)
    rows.append(_check_row("poisson_renewal_equation", 10.0, np.max(np.abs(Z - 1.0)), 0.0, 1e-3))
    grid, Z = renewal.solve_renewal_equation(lambda x: np.ones_like(x), g2_law.pdf, 0.01, 10.0)
    rows.append(_check_row("gamma2_renewal_function", 10.0,
                           np.max(np.abs(Z - go.renewal_function(grid))), 0.0, 1e-3))
    z = lambda x: np.ones_like(x)
    rows.append(_check_row("trapezoid_order", 5.0,
                           renewal.richardson_ratio(z, g2_law.pdf, 0.02, 5.0, "trapezoid"), 4.0, 0.4))
    rows.append(_check_row("rectangle_order", 5.0,
                           renewal.richardson_ratio(z, g2_law.pdf, 0.02, 5.0, "rectangle"), 2.0, 0.2))

    out.tables["renewal"] = (RENEWAL_SCHEMA, rows)
    for r in rows:
        out.check(f"{r['check_name']}@t={r['t']:g}", r["pass"])
    return out


COUPLING_SCHEMA = [("t", float), ("p_tail", float), ("p_tail_stderr", float),
                   ("tv_oracle", float), ("pass", bool)]


def cmd_coupling(args) -> Outcome:
    out = Outcome()
    batch = _coupling_batch(args)
    rows = cpl.coupling_inequality_check(args.family, args.A, args.b, args.t_grid, args.runs,
                                         args.seed, args.lam, args.workers, batch=batch)
    out.tables["coupling"] = (COUPLING_SCHEMA, rows)
    for r in rows:
        out.check(f"coupling_inequality@t={r['t']:g}", r["pass"])
    _, delta = cpl.common_component(args.family, args.A, args.b, args.lam)
    _, pval = cpl.geometric_chisquare(batch.sigma, delta)
    out.check("sigma_geometric_chisquare_p>0.01", pval > 0.01)
    lo, hi = args.slope_window
    half = batch.T.size // 2
    s_all = cpl.tail_slope(batch.T, lo, hi)
    s1, s2 = cpl.tail_slope(batch.T[:half], lo, hi), cpl.tail_slope(batch.T[half:], lo, hi)
    out.check("tail_slope_negative", s_all < 0)
    out.check("tail_slope_stable", abs(s1 - s2) <= args.slope_rel_tol * abs(s_all))
    rows2 = [dict(quantity="delta", value=float(delta)),
             dict(quantity="mean_sigma", value=float(np.mean(batch.sigma))),
             dict(quantity="chisquare_p", value=float(pval)),
             dict(quantity="tail_slope", value=float(s_all)),
             dict(quantity="tail_slope_first_half", value=float(s1)),
             dict(quantity="tail_slope_second_half", value=float(s2))]
    out.tables["summary"] = ([("quantity", str), ("value", float)], rows2)
    return out


def _coupling_batch(args):
    from .parallel import map_chunks
    parts = map_chunks(lambda rng, c: cpl.coupling_batch(args.family, args.A, args.b, c, rng,
                                                         args.lam),
                       args.runs, args.seed, args.workers, 10_000, args.streams)
    return cpl.CouplingBatch(*(np.concatenate([getattr(p, f) for p in parts])
                               for f in cpl.CouplingBatch.__dataclass_fields__))


def cmd_sample(args) -> Outcome:
    out = Outcome()
    target, prop, C = target_pair(args.target, args.method, args.rate)
    if args.C is not None:
        C = args.C
    from .dists import RandomStream
    rng = RandomStream(args.seed, args.streams)
    t = args.t
    if args.method in ("rrs", "rrs-sub"):
        if t is None:
            raise UsageError(f"--t is required for --method {args.method}")
        if t == "auto":
            t, m = auto_threshold(target, prop, args.n, args.steps, args.burnin,
                                  args.moment_draws, args.seed, args.workers, args.streams)
            out.derived.update(t=t, mean_W=m.mu)
    if args.method == "rs":
        if C is None:
            raise UsageError(f"no ratio bound for target {args.target}; rs needs --C")
        pts, trials, _ = samplers.rejection_sample_many(target, prop, C, args.n, rng)
    elif args.method == "rrs":
        batch = _map(args, lambda r, c: samplers.rrs_replicates(target, prop, t, c, r), args.n, 0)
        pts = np.concatenate([b.point for b in batch])
    elif args.method == "rrs-sub":
        pts = samplers.rrs_subsampled(target, prop, t, args.n, rng)
    else:
        x0 = args.x0 if args.x0 is not None else default_x0(args.target)
        if len(x0) != target.dim:
            raise UsageError(f"--x0 needs {target.dim} coordinates")
        n_steps = args.steps + args.burnin
        if args.method == "imh":
            chain = samplers.imh_chain(target, prop, n_steps, x0, rng)
        else:
            scale = args.step_scale
            chain = samplers.rwm_chain(
                target, lambda r, n: dists.laplace_draw(r, scale, (n, target.dim)),
                n_steps, x0, rng)
        pts = chain.states[args.burnin:]
    out.tables["samples"] = (_point_schema(target.dim), _point_rows(pts))
    if args.emit_acf:
        out.tables["acf"] = _acf_table(pts, args.emit_acf)
    return out


def cmd_moments(args) -> Outcome:
    out = Outcome(default_format="json")
    target, prop, _ = target_pair(args.target, "rrs", args.rate)
    m = samplers.run_cycle_moments(target, prop, args.M, args.seed, args.workers,
                                   stream_offset=args.streams, keep_raw=True)
    stab = samplers.moment_stability(m.w)
    rec = m.as_dict()
    rec["stderr_mu"], rec["stderr_mu2"], rec["stderr_mu3"] = m.stderr
    rec["stability_ratios"] = [float(r) for r in stab["ratios"]]
    rec["moments_stable"] = bool(stab["stable"])
    if args.n_target:
        rec["threshold"] = samplers.threshold_select(args.n_target, args.burnin, args.n_target, m.mu)
    out.record = rec
    schema = [(k, float) for k in ("mu", "mu2", "mu3", "stderr_mu", "stderr_mu2", "stderr_mu3")]
    schema.insert(3, ("n_samples", int))
    out.tables["moments"] = (schema, [{k: rec[k] for k, _ in schema}])
    out.check("moments_stable", stab["stable"])
    if args.dump:
        if str(args.dump).endswith(".npy"):
            buf = io.BytesIO()
            np.save(buf, m.w)
            out.side_files.append((args.dump, buf.getvalue()))
        else:
            out.side_files.append((args.dump, "w\n" + "".join(
                format(float(v), ".17g") + "\n" for v in m.w)))
    return out


BIAS_SCHEMA = [("t", float), ("bias_qt", float), ("bias_drop", float), ("bound", float),
               ("stderr", float), ("stderr_drop", float), ("n_single", int), ("pass", bool)]


def _gamma_exp_setup(h_name):
    target, prop, _ = target_pair("gamma-exp", "rrs")
    h, K = estimators.TEST_FUNCTIONS[h_name]
    q = estimators.reference_value(lambda x: x * np.exp(-x), h)
    return target, prop, h, K, q


def cmd_bias_sweep(args) -> Outcome:
    out = Outcome()
    target, prop, h, K, q = _gamma_exp_setup(args.h)
    rows = estimators.bias_sweep(target, prop, h, K, q, args.t_grid, args.M, args.seed,
                                 args.workers, moment_draws=args.moment_draws)
    table = [dict(t=r.t, bias_qt=r.bias_qt, bias_drop=r.bias_drop, bound=r.bound,
                  stderr=r.stderr, stderr_drop=r.stderr_drop, n_single=r.n_single,
                  **{"pass": r.passed}) for r in rows]
    out.tables["bias"] = (BIAS_SCHEMA, table)
    for r in table:
        out.check(f"bias_within_bound@t={r['t']:g}", r["pass"])
    lo, hi = args.slope_range
    sel = [r for r in rows if lo <= r.t <= hi]
    if len(sel) >= 2:
        ts = [r.t for r in sel]
        s_qt = estimators.fit_slope(ts, [abs(r.bias_qt) for r in sel])
        s_d = estimators.fit_slope(ts, [abs(r.bias_drop) for r in sel])
        out.check("slope_qt=-2+-0.4", abs(s_qt + 2.0) <= 0.4)
        out.check("slope_drop=-1+-0.4", abs(s_d + 1.0) <= 0.4)
        out.tables["slopes"] = ([("estimator", str), ("slope", float)],
                                [dict(estimator="qt", slope=float(s_qt)),
                                 dict(estimator="drop_last", slope=float(s_d))])
    return out


def cmd_estimate(args) -> Outcome:
    out = Outcome(default_format="json")
    if args.h == "id":
        target, prop, _ = target_pair("gamma-exp", "rrs")
        h, K, q = (lambda x: x), None, 2.0
    else:
        target, prop, h, K, q = _gamma_exp_setup(args.h)
    from .dists import RandomStream
    rng = RandomStream(args.seed, args.streams)
    path = samplers.rrs_path(target, prop, args.t, rng)
    moments = None
    if K is not None:
        moments = samplers.run_cycle_moments(target, prop, args.moment_draws, args.seed,
                                             args.workers, stream_offset=args.streams + (1 << 40),
                                             keep_raw=False)
    est = estimators.estimate(path, h, args.level, K, moments)
    rec = est.as_dict()
    rec["h"] = args.h
    rec["reference_value"] = q
    out.record = rec
    out.tables["estimate"] = ([("value", float), ("n_cycles", int), ("tavc", float),
                               ("ci_lo", float), ("ci_hi", float), ("level", float)],
                              [dict(value=est.value, n_cycles=est.n_cycles, tavc=est.tavc,
                                    ci_lo=est.ci[0], ci_hi=est.ci[1], level=est.ci[2])])
    return out


def _probit_model(args):
    data = probit.load_lupus(args.data)
    pv = None if args.prior == "flat" else float(args.prior[6:])
    return probit.ProbitModel.lupus(data, prior_var=pv)


def _probit_setup(args, model):
    mp = probit.map_newton(model)
    prop = probit.LaplaceProposal(mp.mode, mp.hessian, args.alpha2, args.xi)
    target = probit.probit_target(model, args.xi)
    return mp, prop, target


def _probit_threshold(args, target, prop):
    if args.t is not None and args.t != "auto":
        return args.t, None
    return auto_threshold(target, prop, args.N, args.N, args.burnin, args.moment_draws,
                          args.seed, args.workers, args.streams)


def cmd_probit(args) -> Outcome:
    out = Outcome()
    model = _probit_model(args)
    mp, prop, target = _probit_setup(args, model)
    from .dists import RandomStream
    rng = RandomStream(args.seed, args.streams)
    summary = dict(map=mp.mode.tolist(), grad_norm=mp.grad_norm, map_iterations=mp.iterations,
                   log_posterior_at_map=mp.log_posterior, method=args.method)
    out.check("map_grad_norm<=1e-8", mp.grad_norm <= 1e-8)
    t0 = time.perf_counter()
    if args.method == "rrs":
        t, m = _probit_threshold(args, target, prop)
        t0 = time.perf_counter()
        pts, draws = samplers.rrs_subsampled(target, prop, t, args.N, rng, return_draws=True)
        summary.update(t=t, proposal_draws=int(draws))
        if m is not None:
            summary["mean_W"] = m.mu
            out.derived.update(t=t, mean_W=m.mu)
    else:
        chain = probit.gibbs_probit(model, mp.mode, args.N + args.burnin, rng)
        pts = chain.states[args.burnin:]
        draws = args.N + args.burnin
        summary.update(t=None, proposal_draws=int(draws))
    wall = time.perf_counter() - t0
    names = [f"beta{j}" for j in range(model.k)]
    summary["posterior"] = {n: s for n, s in zip(names, probit.posterior_summary(pts))}
    summary["mcse"] = {n: samplers.mcse(pts[:, j]) for j, n in enumerate(names)}
    lags = [k for k in (1, 10, 100) if 4 * k < len(pts)]
    summary["acf"] = {n: {str(k): float(v) for k, v in
                          zip(lags, samplers.acf(pts[:, j], max(lags))[lags])}
                      for j, n in enumerate(names)} if lags else {}
    if args.timings:
        rep = RunReport(wall, int(draws), len(pts))
        summary["timings"] = dict(wall_seconds=rep.wall_seconds, samples_per_second=rep.samples_per_second)
    out.record = summary
    out.tables["samples"] = ([(n, float) for n in names],
                             [{n: float(v) for n, v in zip(names, p)} for p in pts])
    if args.emit_acf:
        schema, rows = _acf_table(pts, args.emit_acf)
        rename = {f"acf_x{j + 1}": f"acf_{n}" for j, n in enumerate(names)}
        out.tables["acf"] = ([(rename.get(k, k), v) for k, v in schema],
                             [{rename.get(k, k): v for k, v in r.items()} for r in rows])
    if args.summary:
        out.side_files.append((args.summary, dumps(summary)))
    elif args.out not in (None, "-") and (args.format or "csv") == "csv":
        out.side_files.append((str(args.out) + ".summary.json", dumps(summary)))
    else:
        out.stderr_text = dumps(summary)
    return out


BENCH_SCHEMA = [("method", str), ("reps", int), ("samples_per_rep", int),
                ("proposal_draws", int), ("samples_emitted", int), ("wall_seconds", float),
                ("samples_per_second", float)]


def cmd_bench(args) -> Outcome:
    out = Outcome()
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    bad = set(methods) - {"rrs", "gibbs"}
    if bad or not methods:
        raise UsageError(f"unknown bench method(s): {sorted(bad)}")
    if args.task != "probit":
        raise UsageError("only --task probit is available")
    model = _probit_model(args)
    mp, prop, target = _probit_setup(args, model)
    t, _ = _probit_threshold(args, target, prop)
    from .dists import RandomStream
    reports = {}
    for mi, method in enumerate(methods):
        wall, draws, emitted = 0.0, 0, 0
        for rep in range(args.reps):
            rng = RandomStream(args.seed, args.streams + (mi << 32) + rep)
            t0 = time.perf_counter()
            if method == "rrs":
                pts, d = samplers.rrs_subsampled(target, prop, t, args.N, rng, return_draws=True)
            else:
                pts = probit.gibbs_probit(model, mp.mode, args.N + args.burnin, rng).states[args.burnin:]
                d = args.N + args.burnin
            wall += time.perf_counter() - t0
            draws += int(d)
            emitted += len(pts)
        reports[method] = RunReport(wall, draws, emitted)
    rows = [dict(method=m, reps=args.reps, samples_per_rep=args.N, proposal_draws=r.proposal_draws,
                 samples_emitted=r.samples_emitted, wall_seconds=r.wall_seconds,
                 samples_per_second=r.samples_per_second) for m, r in reports.items()]
    out.tables["bench"] = (BENCH_SCHEMA, rows)
    if {"rrs", "gibbs"} <= set(reports):
        out.check("rrs_faster_than_gibbs",
                  reports["rrs"].samples_per_second > reports["gibbs"].samples_per_second)
    return out


# ---------------------------------------------------------------------------
# parser


def _probit_options(n_default):
    # a fresh parent per subcommand: argparse shares parent actions, so
    # defaults set on one subcommand would leak into the other
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--prior", type=_prior, default="flat")
    p.add_argument("--xi", type=float, default=2.0)
    p.add_argument("--alpha2", type=_positive_float, default=5.0)
    p.add_argument("--N", type=_positive_int, default=n_default)
    p.add_argument("--t", type=_t_value, default="auto", help="threshold or 'auto'")
    p.add_argument("--auto-t", dest="t", action="store_const", const="auto",
                   help="same as --t auto")
    p.add_argument("--burnin", type=_nonneg_int, default=1000)
    p.add_argument("--moment-draws", type=_positive_int, default=1_000_000)
    p.add_argument("--data", default=None, help="dataset in cell-grid text format")
    return p


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=_seed, default=0, help="64-bit seed (default 0)")
    g.add_argument("--streams", type=_nonneg_int, default=0,
                   help="first random stream id (default 0)")
    g.add_argument("--workers", type=_positive_int, default=1, help="worker processes")
    g.add_argument("--out", default="-", help="output path, '-' for standard output")
    g.add_argument("--format", choices=("csv", "json"), default=None)
    g.add_argument("--config", default=None, help="file of 'key = value' lines")

    parser = argparse.ArgumentParser(prog="regensampling",
                                     description="Regenerative rejection sampling experiments.")
    parser.add_argument("--version", action="version", version=TOOL)
    sub = parser.add_subparsers(dest="command", metavar="command")
    subs = {}

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("renewal-verify", cmd_renewal_verify, "check renewal simulations against closed forms")
    p.add_argument("--lam", type=_positive_float, default=1.0)
    p.add_argument("--traces", type=_positive_int, default=10_000)
    p.add_argument("--count-tol", type=_positive_float, default=0.3)
    p.add_argument("--lln-horizon", type=_positive_float, default=10_000.0)
    p.add_argument("--lln-traces", type=_positive_int, default=100)
    p.add_argument("--ks-traces", type=_positive_int, default=100_000)
    p.add_argument("--tv-grid", type=_float_list, default=[1.0, 2.0, 3.0])
    p.add_argument("--tv-traces", type=_positive_int, default=10_000_000)
    p.add_argument("--tv-rel-tol", type=_positive_float, default=0.15)

    p = add("coupling", cmd_coupling, "coupling of a delayed and a stationary renewal process")
    p.add_argument("--family", choices=("gamma2", "exp"), default="gamma2")
    p.add_argument("--A", type=_positive_float, default=4.0)
    p.add_argument("--b", type=_positive_float, default=1.0)
    p.add_argument("--lam", type=_positive_float, default=1.0)
    p.add_argument("--runs", type=_positive_int, default=100_000)
    p.add_argument("--t-grid", type=_float_list, default=[float(k) for k in range(1, 11)])
    p.add_argument("--slope-window", type=_float_list, default=[30.0, 80.0])
    p.add_argument("--slope-rel-tol", type=_positive_float, default=0.25)

    p = add("sample", cmd_sample, "draw samples with one of the samplers")
    p.add_argument("--method", choices=("rs", "rrs", "rrs-sub", "imh", "rwm"), required=True)
    p.add_argument("--target", choices=TARGETS, default="gamma-exp")
    p.add_argument("--t", type=_t_value, default=None, help="threshold or 'auto'")
    p.add_argument("--n", type=_positive_int, default=1000, help="number of samples (rs, rrs)")
    p.add_argument("--steps", type=_positive_int, default=10_000,
                   help="kept chain steps (imh, rwm; also sets the budget for --t auto)")
    p.add_argument("--burnin", type=_nonneg_int, default=1000)
    p.add_argument("--x0", type=_float_list, default=None)
    p.add_argument("--rate", type=_positive_float, default=None,
                   help="Exp proposal rate for gamma-exp")
    p.add_argument("--C", type=_positive_float, default=None, help="ratio bound for rs")
    p.add_argument("--step-scale", type=_positive_float, default=4.0)
    p.add_argument("--moment-draws", type=_positive_int, default=1_000_000)
    p.add_argument("--emit-acf", type=_nonneg_int, default=0, metavar="K")

    p = add("moments", cmd_moments, "moments of the cycle length W")
    p.add_argument("--target", choices=TARGETS, default="gamma-exp")
    p.add_argument("--rate", type=_positive_float, default=None)
    p.add_argument("--M", type=_positive_int, default=1_000_000)
    p.add_argument("--n-target", type=_nonneg_int, default=10_000)
    p.add_argument("--burnin", type=_nonneg_int, default=1000)
    p.add_argument("--dump", default=None, help="raw W dump (.npy or CSV)")

    p = add("bias-sweep", cmd_bias_sweep, "bias of the ratio estimators against t")
    p.add_argument("--h", choices=tuple(estimators.TEST_FUNCTIONS), default="tanh")
    p.add_argument("--t-grid", type=_float_list, default=[1.0, 5.0, 10.0, 20.0, 50.0, 100.0])
    p.add_argument("--M", type=_positive_int, default=100_000)
    p.add_argument("--moment-draws", type=_positive_int, default=1_000_000)
    p.add_argument("--slope-range", type=_float_list, default=[10.0, 100.0])

    p = add("estimate", cmd_estimate, "ratio estimate with confidence interval from one RRS run")
    p.add_argument("--h", choices=("id",) + tuple(estimators.TEST_FUNCTIONS), default="tanh")
    p.add_argument("--t", type=_positive_float, required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--moment-draws", type=_positive_int, default=1_000_000)

    p = sub.add_parser("probit", parents=[common, _probit_options(10_000)],
                       help="Bayesian probit regression on the lupus data")
    p.set_defaults(func=cmd_probit)
    subs["probit"] = p
    p.add_argument("--method", choices=("gibbs", "rrs"), default="rrs")
    p.add_argument("--summary", default=None, help="path of the JSON summary")
    p.add_argument("--emit-acf", type=_nonneg_int, default=0, metavar="K")
    p.add_argument("--timings", action="store_true", help="add samples/sec to the summary")

    p = sub.add_parser("bench", parents=[common, _probit_options(1000)],
                       help="throughput of RRS against Gibbs")
    p.set_defaults(func=cmd_bench)
    subs["bench"] = p
    p.add_argument("--method", default="rrs,gibbs")
    p.add_argument("--task", default="probit")
    p.add_argument("--reps", type=_positive_int, default=100)
    return parser, subs


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment line."""
    cfg = {}
    for i, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{i}: expected 'key = value'")
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _apply_config(subparser, cfg) -> dict:
    actions = {a.dest: a for a in subparser._actions if a.dest != "help"}
    converted = {}
    for key, value in cfg.items():
        if key in ("config", "func") or key not in actions:
            raise UsageError(f"unknown config key {key!r}")
        a = actions[key]
        try:
            if isinstance(a, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                v = _bool(value)
            else:
                v = a.type(value) if a.type else value
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"config key {key!r}: {exc}") from exc
        if a.choices is not None and v not in a.choices:
            raise UsageError(f"config key {key!r}: {v!r} not in {list(a.choices)}")
        converted[key] = v
    return converted


def _parse(argv):
    parser, subs = build_parser()
    argv = list(argv)
    # the config file has to be read before the full parse so that it can
    # supply required flags
    command = next((a for a in argv if not a.startswith("-")), None)
    if command in subs:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config", default=None)
        config = pre.parse_known_args(argv)[0].config
        if config:
            sp = subs[command]
            sp.set_defaults(**_apply_config(sp, read_config(config)))
            for a in sp._actions:
                if a.required and a.dest in sp._defaults:
                    a.required = False
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise UsageError("a subcommand is required")
    return args


def dispatch(argv=None) -> int:
    """Run one subcommand; returns the process exit code."""
    try:
        args = _parse(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except (UsageError, OSError) as exc:
        print(f"regensampling: error: {exc}", file=sys.stderr)
        return 2
    try:
        outcome = args.func(args)
        text = render(outcome, args)
    except UsageError as exc:
        print(f"regensampling: error: {exc}", file=sys.stderr)
        return 2
    except RegenError as exc:
        print(f"regensampling: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if args.out in (None, "-"):
        try:
            sys.stdout.write(text)
            sys.stdout.flush()
        except BrokenPipeError:
            sys.stderr.close()
            return 0 if outcome.passed else 1
    else:
        atomic_write(args.out, text)
    for path, data in outcome.side_files:
        atomic_write(path, data)
    if outcome.stderr_text:
        sys.stderr.write(outcome.stderr_text)
    for name, ok in outcome.assertions:
        if not ok:
            print(f"regensampling: assertion failed: {name}", file=sys.stderr)
    return 0 if outcome.passed else 1


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)
