"""Seeded, replicated experiments: rate fits, coverage of explicit bounds, audits.

Every (n, replicate) cell draws its data and algorithm randomness from
``mix_seed(base_seed, n, replicate, tag)``, so cells are independent of each
other and of the number of worker processes.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache, partial
from typing import Optional

import numpy as np

from . import bounds, concentration
from .optimizers import (AlgorithmConfig, StepRule, empirical_risk_and_grad,
                         empirical_suboptimality, pgd_horizon, run_pgd, run_sgd, solve_erm)
from .problems import NoiseRule, make_quadratic_spec, population_oracle, sample_dataset
from .seeding import mix_seed
from .stability import estimate_grad_stability, stability_budget

METRICS = ("excess_risk", "grad_gap", "pop_grad_norm", "weighted_grad_avg")
_DATA_TAG, _ALGO_TAG = 0, 1


def quantile(samples, q):
    """Nearest-rank quantile: the ceil(q N)-th order statistic."""
    xs = sorted(samples)
    if not xs:
        raise ValueError("quantile of an empty sample")
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    # rounding guards q*N values like 190.00000000000003
    rank = max(1, math.ceil(round(q * len(xs), 9)))
    return xs[rank - 1]


def fit_loglog(points):
    """Least-squares line through (log x, log y): {slope, intercept, r_squared}."""
    pts = list(points)
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    if any(not (x > 0 and y > 0) for x, y in pts):
        raise ValueError("log-log fit needs strictly positive points")
    lx = np.log([float(x) for x, _ in pts])
    ly = np.log([float(y) for _, y in pts])
    if float(np.ptp(ly)) == 0:
        return {"slope": 0.0, "intercept": float(ly[0]), "r_squared": 1.0}
    xc = lx - lx.mean()
    yc = ly - ly.mean()
    slope = float(xc @ yc / (xc @ xc))
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    r2 = 1.0 - float(resid @ resid) / float(yc @ yc)
    return {"slope": slope, "intercept": intercept, "r_squared": min(1.0, max(0.0, r2))}


@dataclass(frozen=True)
class ProblemTemplate:
    d: int = 1
    kappa: float = 1.0
    noise: str = "inverse_n"
    noise_value: float = 1.0
    b_mean_norm: float = 1.0
    seed: int = 0

    def build(self):
        rule = NoiseRule(self.noise, float(self.noise_value))
        return make_quadratic_spec(self.d, self.kappa, rule, self.seed, self.b_mean_norm)


@lru_cache(maxsize=32)
def _spec_for(template):
    return template.build()


@dataclass(frozen=True)
class ExperimentAlgorithm:
    """Algorithm choice with an n-dependent horizon.

    ``T=None`` picks the horizon from n: PGD uses ``pgd_horizon``; SGD with the
    strongly convex rule uses ceil(T_scale n^2); SGD with the polynomial rule
    uses ceil(T_scale n^e) with e from ``sgd_polynomial_horizon_exponent``.
    Automatic horizons are capped at ``T_cap``.
    """

    kind: str = "erm"
    step_rule: StepRule = field(default_factory=StepRule.constant)
    T: Optional[int] = None
    T_scale: float = 1.0
    T_cap: int = 10_000_000
    erm_tolerance: float = 1e-12

    def horizon(self, spec, n):
        if self.kind == "erm":
            return 0
        if self.T is not None:
            return int(self.T)
        if self.kind == "pgd":
            return pgd_horizon(spec.mu, spec.gamma, n)
        if self.step_rule.kind == "polynomial":
            e = bounds.sgd_polynomial_horizon_exponent(self.step_rule.theta)
        else:
            e = 2.0
        return int(min(self.T_cap, math.ceil(self.T_scale * n**e)))

    def config(self, spec, n, algo_seed, track_population=False):
        cfg = AlgorithmConfig(self.kind, T=self.horizon(spec, n), step_rule=self.step_rule,
                              algo_seed=algo_seed, erm_tolerance=self.erm_tolerance,
                              track_population=track_population)
        cfg.validate(spec)
        return cfg


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemTemplate = field(default_factory=ProblemTemplate)
    algorithm: ExperimentAlgorithm = field(default_factory=ExperimentAlgorithm)
    n_grid: tuple = (32, 64, 128, 256, 512, 1024)
    replicates: int = 200
    delta: float = 0.05
    metric: str = "excess_risk"
    base_seed: int = 0
    require_threshold: bool = False

    def validate(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.replicates < 50:
            raise ValueError(f"replicates must be >= 50, got {self.replicates}")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.n_grid or any(int(n) < 1 for n in self.n_grid):
            raise ValueError("n_grid must be a nonempty list of positive integers")
        if self.metric == "weighted_grad_avg" and self.algorithm.kind == "erm":
            raise ValueError("weighted_grad_avg needs an iterative algorithm")
        spec = _spec_for(self.problem)
        threshold = bounds.sample_size_threshold(spec.gamma, spec.mu, self.delta)
        if self.require_threshold and min(self.n_grid) < threshold:
            raise ValueError(
                f"n_grid contains n = {min(self.n_grid)} below the sample-size threshold {threshold:.6g}"
            )
        return spec


def _cell(config, task):
    """One replicate at one n: metric plus the inputs the bound curves need."""
    n, rep = task
    spec = _spec_for(config.problem)
    data_seed = mix_seed(config.base_seed, n, rep, _DATA_TAG)
    algo_seed = mix_seed(config.base_seed, n, rep, _ALGO_TAG)
    ds = sample_dataset(spec, n, data_seed)
    track = config.metric == "weighted_grad_avg"
    cfg = config.algorithm.config(spec, n, algo_seed, track_population=track)
    weighted = None
    if cfg.kind == "erm":
        w = solve_erm(spec, ds, cfg.erm_tolerance).w_hat
    else:
        traj = (run_pgd if cfg.kind == "pgd" else run_sgd)(spec, ds, cfg, store_iterates=False)
        w, weighted = traj.final, traj.weighted_grad_avg
    oracle = population_oracle(spec, n)
    _, grad_S = empirical_risk_and_grad(spec, ds, w)
    grad_F = oracle.grad_F(w)
    if config.metric == "excess_risk":
        value = oracle.excess(w)
    elif config.metric == "grad_gap":
        value = float(np.linalg.norm(grad_F - grad_S))
    elif config.metric == "pop_grad_norm":
        value = float(np.linalg.norm(grad_F))
    else:
        value = weighted
    eps = empirical_suboptimality(spec, ds, w) if cfg.kind == "sgd" else None
    return {
        "n": n, "replicate": rep, "data_seed": data_seed, "algo_seed": algo_seed,
        "T": cfg.T, "metric": float(value), "V": float(oracle.V(w)),
        "eps_opt": None if eps is None else float(eps),
        "opt_grad_sq": float(grad_S @ grad_S),
    }


def pool_map(fn, tasks, workers=1):
    """Ordered map; identical results for any worker count."""
    tasks = list(tasks)
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=chunk))


@dataclass
class ExperimentResult:
    kind: str
    config: dict
    records: list
    slope_fit: Optional[dict]
    degenerate_metric: bool
    bound_curve: list
    bound_slope: Optional[dict]
    dominance_fraction: Optional[dict]
    raw: list

    def summary(self):
        d = asdict(self)
        d.pop("raw")
        return d


def _records(raw, n_grid, delta):
    out = []
    for n in n_grid:
        vals = [r["metric"] for r in raw if r["n"] == n]
        arr = np.array(vals)
        out.append({
            "n": n,
            "quantile_value": float(quantile(vals, 1 - delta)),
            "mean": float(arr.mean()),
            "sd": float(arr.std(ddof=1)) if len(vals) > 1 else 0.0,
            "replicates": len(vals),
        })
    return out


def _fit(records, key="quantile_value"):
    pts = [(r["n"], r[key]) for r in records]
    if len(pts) < 3 or any(y <= 0 for _, y in pts):
        return None
    return fit_loglog(pts)


def _config_dict(config):
    return json.loads(json.dumps(asdict(config)))


def _order_bound(config, spec, n, T):
    F_star = population_oracle(spec, n).F_star
    kind, rule = config.algorithm.kind, config.algorithm.step_rule
    if kind == "erm":
        return bounds.erm_order_bound(F_star, n, config.delta)
    if kind == "pgd":
        return bounds.pgd_order_bound(spec.mu, spec.gamma, T, F_star, n, config.delta)
    if rule.kind == "polynomial":
        return bounds.sgd_polynomial_order_bound(rule.theta, T, F_star, n, config.delta)
    return bounds.sgd_strongly_convex_order_bound(F_star, n, config.delta)


def run_scaling_experiment(config, workers=1):
    """Excess-risk (or other metric) quantiles versus n with a log-log slope fit.

    The bound curve is the order-level bound (unit constants); compare its slope,
    not its magnitude.
    """
    spec = config.validate()
    tasks = [(int(n), r) for n in config.n_grid for r in range(config.replicates)]
    raw = pool_map(partial(_cell, config), tasks, workers)
    records = _records(raw, config.n_grid, config.delta)
    fit = _fit(records)
    curve = []
    for n in config.n_grid:
        T = next(r["T"] for r in raw if r["n"] == n)
        rep = _order_bound(config, spec, int(n), T)
        curve.append({"n": int(n), "order_bound": float(rep.total), "constants_explicit": False})
    bound_fit = _fit([{"n": c["n"], "v": c["order_bound"]} for c in curve], "v")
    return ExperimentResult("scaling", _config_dict(config), records, fit, fit is None,
                            curve, bound_fit, None, raw)


def _beta(spec, config, n, row):
    cfg = AlgorithmConfig(config.algorithm.kind, T=max(row["T"], 1),
                          step_rule=config.algorithm.step_rule)
    eps = row["eps_opt"] if cfg.kind == "sgd" else None
    return stability_budget(spec.constants(n), n, cfg, eps)


def run_gradient_gap_experiment(config, workers=1):
    """Gradient generalization gap versus n, checked against both explicit bounds.

    Each replicate is compared with thm2 and thm3 evaluated at the lemma
    stability budget; thm3 uses that replicate's own V = E||grad f(A(S); Z)||^2.
    The reported thm3 curve value is the median over replicates.
    """
    if config.metric == "excess_risk":
        config = ExperimentConfig(**{**config.__dict__, "metric": "grad_gap"})
    spec = config.validate()
    tasks = [(int(n), r) for n in config.n_grid for r in range(config.replicates)]
    raw = pool_map(partial(_cell, config), tasks, workers)
    records = _records(raw, config.n_grid, config.delta)
    fit = _fit(records)
    curve = []
    dominance = None
    if config.metric == "weighted_grad_avg":
        for n in config.n_grid:
            T = next(r["T"] for r in raw if r["n"] == n)
            rep = _order_bound(config, spec, int(n), T)
            curve.append({"n": int(n), "order_bound": float(rep.total), "constants_explicit": False})
    else:
        under2 = under3 = 0
        for n in config.n_grid:
            n = int(n)
            M = spec.constants(n).M
            rows = [r for r in raw if r["n"] == n]
            t2, t3 = [], []
            for r in rows:
                beta = _beta(spec, config, n, r)
                b2 = float(bounds.thm2_bound(M, beta, n, config.delta).total)
                b3 = float(bounds.thm3_bound(r["V"], beta, M, n, config.delta).total)
                r["thm2"], r["thm3"] = b2, b3
                under2 += int(r["metric"] <= b2)
                under3 += int(r["metric"] <= b3)
                t2.append(b2)
                t3.append(b3)
            curve.append({
                "n": n, "thm2": float(np.median(t2)), "thm3": float(np.median(t3)),
                "thm2_dominance": sum(int(r["metric"] <= r["thm2"]) for r in rows) / len(rows),
                "thm3_dominance": sum(int(r["metric"] <= r["thm3"]) for r in rows) / len(rows),
                "constants_explicit": True,
            })
        dominance = {"thm2": under2 / len(raw), "thm3": under3 / len(raw)}
    bound_fit = None
    key = "order_bound" if config.metric == "weighted_grad_avg" else "thm3"
    bound_fit = _fit([{"n": c["n"], "v": c[key]} for c in curve], "v")
    return ExperimentResult("gradient_gap", _config_dict(config), records, fit, fit is None,
                            curve, bound_fit, dominance, raw)


def dominance_slack(delta, replicates):
    """Lowest acceptable coverage: 1 - delta - 3 sqrt(delta (1 - delta) / replicates)."""
    return 1 - delta - 3 * math.sqrt(delta * (1 - delta) / replicates)


# ---------------------------------------------------------------- audits

AUDIT_FAMILIES = ("centered_product", "mz_rademacher", "mz_truncated_gaussian",
                  "mcdiarmid_vector")


@dataclass(frozen=True)
class AuditConfig:
    families: tuple = AUDIT_FAMILIES
    n_grid: tuple = (8, 16, 32, 64, 128, 256)
    p_grid: tuple = (2.0, 4.0, 8.0)
    trials: int = 10_000
    resamples: int = 1000
    c: float = 1.0
    d: int = 3
    sigma: float = 1.0
    support_factor: float = 6.0
    base_seed: int = 0

    def validate(self):
        if self.trials < 100:
            raise ValueError(f"trials must be >= 100, got {self.trials}")
        unknown = set(self.families) - set(AUDIT_FAMILIES)
        if unknown:
            raise ValueError(f"unknown audit families {sorted(unknown)}")
        if any(int(n) < 2 for n in self.n_grid):
            raise ValueError("audit n values must be >= 2")
        if any(p < 2 for p in self.p_grid):
            raise ValueError("audit p values must be >= 2")


def _unit(d):
    return np.ones(d) / math.sqrt(d)


def _audit_cell(config, task):
    family, n, p = task
    seed = mix_seed(config.base_seed, AUDIT_FAMILIES.index(family), n, int(round(p * 1000)))
    d, c, sigma, k = config.d, config.c, config.sigma, config.support_factor
    if family == "centered_product":
        fam = concentration.centered_product_family(n, c, _unit(d), seed)
        sampler = fam.sum_sampler()
        bound = concentration.theorem1_moment_bound(
            concentration.MomentBoundInputs(n, p, fam.G, fam.beta))
        params = {"G": fam.G, "beta": fam.beta}
    elif family == "mz_rademacher":
        sampler = concentration.rademacher_sum_sampler(n, c, _unit(d))
        bound = concentration.mz_coefficient(n, p) * c
        params = {"term_pnorm": c}
    elif family == "mz_truncated_gaussian":
        sampler = concentration.truncated_gaussian_sum_sampler(n, d, sigma, k)
        term = concentration.truncated_gaussian_pnorm(d, sigma, p, k)
        bound = concentration.mz_coefficient(n, p) * term
        params = {"term_pnorm": term}
    else:
        sampler = concentration.truncated_gaussian_mean_sampler(n, d, sigma, k)
        beta = 2 * k * sigma / n
        bound = concentration.mcdiarmid_pnorm_bound(n, p, beta, "vector_valued")
        params = {"beta": beta}
    est = concentration.mc_pnorm(sampler, p, config.trials, seed, config.resamples)
    bound = float(bound)
    params = {k: float(v) for k, v in params.items()}
    return {
        "family": family, "n": n, "p": p, "trials": config.trials, "bound": bound,
        "estimate": float(est.point_estimate), "ci_low": float(est.ci_low),
        "ci_high": float(est.ci_high),
        "params": params, "verdict": "pass" if est.ci_high <= bound else "violation",
    }


def run_concentration_audit(config=None, workers=1):
    """Monte-Carlo p-norms against the matching moment bounds, one record per cell."""
    config = config or AuditConfig()
    config.validate()
    tasks = [(f, int(n), float(p)) for f in config.families for n in config.n_grid
             for p in config.p_grid]
    cells = pool_map(partial(_audit_cell, config), tasks, workers)
    violations = sum(int(c["verdict"] != "pass") for c in cells)
    return {
        "format": "riskbound_lab.ConcentrationAudit",
        "version": 1,
        "config": json.loads(json.dumps(asdict(config))),
        "cells": cells,
        "violations": violations,
        "pass": violations == 0,
    }


@dataclass(frozen=True)
class StabilityAuditConfig:
    """Randomized gradient-stability audits.

    Each audit draws its own problem (dimension, condition number, noise level,
    mean norm), sample size, replaced index and seeds from ``base_seed``.
    """

    kind: str = "erm"
    audits: int = 500
    n_min: int = 8
    n_max: int = 256
    d_max: int = 6
    kappa_max: float = 20.0
    step_rule: StepRule = field(default_factory=StepRule.constant)
    base_seed: int = 0


def _random_spec(rng, config):
    d = int(rng.integers(1, config.d_max + 1))
    kappa = 1.0 if d == 1 else float(np.exp(rng.uniform(0, math.log(config.kappa_max))))
    if rng.random() < 0.5:
        noise = NoiseRule.constant(float(rng.uniform(0.0, 2.0)))
    else:
        noise = NoiseRule.inverse_n(float(rng.uniform(0.0, 4.0)))
    return make_quadratic_spec(d, kappa, noise, int(rng.integers(0, 2**31)),
                               float(rng.uniform(0.0, 3.0)))


def _stability_cell(config, k):
    rng = np.random.default_rng(mix_seed(config.base_seed, k))
    spec = _random_spec(rng, config)
    n = int(rng.integers(config.n_min, config.n_max + 1))
    i = int(rng.integers(0, n))
    data_seed, repl_seed, algo_seed = (int(x) for x in rng.integers(0, 2**63, size=3))
    if config.kind == "erm":
        cfg = AlgorithmConfig("erm", algo_seed=algo_seed)
    elif config.kind == "pgd":
        cfg = AlgorithmConfig("pgd", T=pgd_horizon(spec.mu, spec.gamma, n), algo_seed=algo_seed)
    else:
        rule = config.step_rule
        if rule.kind == "constant":
            rule = StepRule.strongly_convex(max(4 * spec.gamma / spec.mu, 1.0))
        cfg = AlgorithmConfig("sgd", T=n * n, step_rule=rule, algo_seed=algo_seed)
    m = estimate_grad_stability(spec, cfg, n, i, data_seed, repl_seed)
    return {"algorithm": m.algorithm, "n": m.n, "i": m.i,
            "measured_beta": float(m.measured_beta), "theoretical_beta": float(m.theoretical_beta),
            "ratio": float(m.ratio), "d": spec.d, "kappa": float(spec.gamma / spec.mu),
            "eps_opt": None if m.eps_opt is None else float(m.eps_opt),
            "ok": bool(m.measured_beta <= m.theoretical_beta)}


def run_stability_audit(config=None, workers=1):
    config = config or StabilityAuditConfig()
    rows = pool_map(partial(_stability_cell, config), range(config.audits), workers)
    violations = sum(int(not r["ok"]) for r in rows)
    return {"format": "riskbound_lab.StabilityAudit", "version": 1,
            "config": json.loads(json.dumps(asdict(config))), "rows": rows,
            "violations": violations, "pass": violations == 0}


# ---------------------------------------------------------------- output files

def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _write_xy(path, xs, ys):
    with open(path, "w") as fh:
        for x, y in zip(xs, ys):
            fh.write(f"{x!r} {float(y)!r}\n")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_experiment_outputs(result, outdir):
    """raw.csv, summary.csv, summary.json and two-column plot-data files."""
    os.makedirs(outdir, exist_ok=True)
    cols = ["n", "replicate", "data_seed", "algo_seed", "T", "metric", "V", "opt_grad_sq"]
    if result.raw and "thm2" in result.raw[0]:
        cols += ["thm2", "thm3"]
    write_csv(os.path.join(outdir, "raw.csv"), cols,
               ([r[c] for c in cols] for r in result.raw))
    scols = ["n", "quantile_value", "mean", "sd", "replicates"]
    write_csv(os.path.join(outdir, "summary.csv"), scols,
               ([r[c] for c in scols] for r in result.records))
    write_json(os.path.join(outdir, "summary.json"), result.summary())
    ns = [r["n"] for r in result.records]
    _write_xy(os.path.join(outdir, "quantile.dat"), ns, [r["quantile_value"] for r in result.records])
    for key in ("order_bound", "thm2", "thm3"):
        if result.bound_curve and key in result.bound_curve[0]:
            _write_xy(os.path.join(outdir, f"bound_{key}.dat"), ns,
                      [c[key] for c in result.bound_curve])
    if result.slope_fit is not None:
        f = result.slope_fit
        _write_xy(os.path.join(outdir, "slope_fit.dat"), ns,
                  [math.exp(f["intercept"]) * n ** f["slope"] for n in ns])
