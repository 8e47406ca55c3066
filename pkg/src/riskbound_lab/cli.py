"""Command-line front end.

Every subcommand writes ``manifest.txt`` into its output directory. The manifest
is itself a valid config file, so ``riskbound-lab replay DIR/manifest.txt --out
OTHER`` (or ``--config DIR/manifest.txt``) regenerates identical files.

Exit status: 0 success, 1 audit violation, 2 configuration error,
3 numeric failure during a run.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__, bounds, config as cfgmod, experiments
from .errors import NumericFailure
from .optimizers import StepRule, pgd_horizon, run_pgd, run_sgd, solve_erm
from .problems import NoiseRule, make_quadratic_spec, population_oracle, sample_dataset, spec_to_json
from .seeding import mix_seed

COMMANDS = {
    "verify-concentration": "Monte-Carlo audit of the moment bounds",
    "stability": "randomized gradient-stability audit against the budgets",
    "scaling": "quantile of a metric versus n with a log-log slope fit",
    "gradient-gap": "gradient generalization gap versus n against the explicit bounds",
    "bounds-table": "bound summary table for one problem at (n, delta)",
    "run": "one algorithm run on one dataset with trajectory export",
}
EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _template(v):
    return experiments.ProblemTemplate(
        d=v["problem.d"], kappa=v["problem.kappa"], noise=v["problem.noise"],
        noise_value=v["problem.noise_value"], b_mean_norm=v["problem.b_mean_norm"],
        seed=v["problem.seed"])


def _spec(v):
    return make_quadratic_spec(v["problem.d"], v["problem.kappa"],
                               NoiseRule(v["problem.noise"], v["problem.noise_value"]),
                               v["problem.seed"], v["problem.b_mean_norm"])


def _step_rule(v, spec):
    kind = v["algorithm.step_rule"]
    if v["algorithm.kind"] == "pgd" or kind == "constant":
        return StepRule.constant(v["algorithm.eta"])
    if kind == "polynomial":
        eta1 = v["algorithm.eta1"]
        return StepRule.polynomial(1 / (4 * spec.gamma) if eta1 is None else eta1,
                                   v["algorithm.theta"])
    t0 = v["algorithm.t0"]
    return StepRule.strongly_convex(max(4 * spec.gamma / spec.mu, 1.0) if t0 is None else t0)


def _experiment_config(v, command):
    spec = _spec(v)
    algo = experiments.ExperimentAlgorithm(
        kind=v["algorithm.kind"], step_rule=_step_rule(v, spec), T=v["algorithm.T"],
        T_scale=v["algorithm.T_scale"], T_cap=v["algorithm.T_cap"],
        erm_tolerance=v["algorithm.erm_tolerance"])
    metric = v["experiment.metric"]
    if metric is None:
        metric = "excess_risk" if command == "scaling" else "grad_gap"
    return experiments.ExperimentConfig(
        problem=_template(v), algorithm=algo, n_grid=v["experiment.n_grid"],
        replicates=v["experiment.replicates"], delta=v["experiment.delta"], metric=metric,
        base_seed=v["seed"], require_threshold=v["experiment.require_threshold"])


def _cmd_experiment(v, out, workers, command):
    config = _experiment_config(v, command)
    runner = (experiments.run_scaling_experiment if command == "scaling"
              else experiments.run_gradient_gap_experiment)
    result = runner(config, workers=workers)
    experiments.write_experiment_outputs(result, out)
    if result.degenerate_metric:
        print("metric is zero at some n: slope undefined (degenerate_metric = true)")
    else:
        print(f"slope {result.slope_fit['slope']:.4f}  r^2 {result.slope_fit['r_squared']:.4f}")
    if result.dominance_fraction is not None:
        print("dominance " + "  ".join(f"{k} {x:.4f}" for k, x in result.dominance_fraction.items()))
    return EXIT_OK


def _cmd_concentration(v, out, workers):
    config = experiments.AuditConfig(
        families=v["audit.families"], n_grid=v["audit.n_grid"], p_grid=v["audit.p_grid"],
        trials=v["audit.trials"], resamples=v["audit.resamples"], c=v["audit.c"],
        d=v["audit.d"], sigma=v["audit.sigma"], base_seed=v["seed"])
    report = experiments.run_concentration_audit(config, workers=workers)
    experiments.write_json(os.path.join(out, "audit.json"), report)
    print(f"{len(report['cells'])} cells, {report['violations']} violations")
    return EXIT_OK if report["pass"] else EXIT_VIOLATION


def _cmd_stability(v, out, workers):
    config = experiments.StabilityAuditConfig(
        kind=v["stability.kind"], audits=v["stability.audits"], n_min=v["stability.n_min"],
        n_max=v["stability.n_max"], d_max=v["stability.d_max"],
        kappa_max=v["stability.kappa_max"], base_seed=v["seed"])
    if not 2 <= config.n_min <= config.n_max:
        raise cfgmod.ConfigError("need 2 <= stability.n_min <= stability.n_max", "stability.n_min")
    report = experiments.run_stability_audit(config, workers=workers)
    experiments.write_json(os.path.join(out, "stability.json"), report)
    cols = ["algorithm", "n", "i", "d", "kappa", "measured_beta", "theoretical_beta", "ratio"]
    experiments.write_csv(os.path.join(out, "stability.csv"), cols,
                           ([r[c] for c in cols] for r in report["rows"]))
    worst = max(r["ratio"] for r in report["rows"])
    print(f"{len(report['rows'])} audits, {report['violations']} violations, max ratio {worst:.4f}")
    return EXIT_OK if report["pass"] else EXIT_VIOLATION


def _cmd_bounds_table(v, out, workers):
    spec = _spec(v)
    n, delta = v["bounds.n"], v["bounds.delta"]
    c = spec.constants(n)
    oracle = population_oracle(spec, n)
    V = float(oracle.V(oracle.w_star))
    rows = bounds.table_rows(c, n, delta, oracle.F_star, V, pgd_horizon(spec.mu, spec.gamma, n),
                             v["bounds.eps_opt"])
    text = bounds.render_table(rows)
    with open(os.path.join(out, "table.txt"), "w") as fh:
        fh.write(text + "\n")
    experiments.write_json(os.path.join(out, "table.json"),
                           {"n": n, "delta": delta, "V_at_w_star": V, "F_star": float(oracle.F_star),
                            "rows": rows})
    print(text)
    return EXIT_OK


def _cmd_run(v, out, workers):
    spec = _spec(v)
    n = v["run.n"]
    algo = experiments.ExperimentAlgorithm(
        kind=v["algorithm.kind"], step_rule=_step_rule(v, spec), T=v["algorithm.T"],
        T_scale=v["algorithm.T_scale"], T_cap=v["algorithm.T_cap"],
        erm_tolerance=v["algorithm.erm_tolerance"])
    data_seed = mix_seed(v["seed"], n, 0, 0)
    algo_seed = mix_seed(v["seed"], n, 0, 1)
    ds = sample_dataset(spec, n, data_seed)
    config = algo.config(spec, n, algo_seed, track_population=v["run.track_population"])
    oracle = population_oracle(spec, n)
    summary = {"n": n, "data_seed": data_seed, "algo_seed": algo_seed, "algorithm": config.kind,
               "T": config.T, "step_rule": config.step_rule.to_dict()}
    if config.kind == "erm":
        sol = solve_erm(spec, ds, config.erm_tolerance)
        w = sol.w_hat
        summary.update(closed_form=sol.closed_form, empirical_risk=float(sol.risk))
    else:
        traj = (run_pgd if config.kind == "pgd" else run_sgd)(spec, ds, config)
        traj.to_csv(os.path.join(out, "trajectory.csv"))
        w = traj.final
        summary.update(empirical_risk=float(traj.F_S[-1]), stride=traj.stride)
        if traj.weighted_grad_avg is not None:
            summary["weighted_grad_avg"] = float(traj.weighted_grad_avg)
    summary.update(w=[float(x) for x in w], excess_risk=float(oracle.excess(w)),
                   pop_grad_norm=float(np.linalg.norm(oracle.grad_F(w))))
    with open(os.path.join(out, "spec.json"), "w") as fh:
        fh.write(spec_to_json(spec) + "\n")
    experiments.write_json(os.path.join(out, "run.json"), summary)
    print(f"{config.kind}: excess risk {summary['excess_risk']:.6g}")
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="riskbound-lab",
        description="Stability-based risk bound experiments on strongly convex quadratics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text,
                           epilog=cfgmod.describe_keys(name),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        _common(p)
    p = sub.add_parser("replay", help="re-run the subcommand recorded in a manifest",
                       description="re-run the subcommand recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=None)
    return parser


def _common(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", default=None, help="output directory (default: out/<command>)")
    p.add_argument("--seed", type=cfgmod._seed, default=None, help="base seed (u64)")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: machine parallelism)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


_HANDLERS = {
    "verify-concentration": _cmd_concentration,
    "stability": _cmd_stability,
    "bounds-table": _cmd_bounds_table,
    "run": _cmd_run,
}


def execute(command, values, out, workers=None):
    """Run one resolved subcommand, writing its manifest first."""
    if workers is None:
        workers = os.cpu_count() or 1
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "manifest.txt"), "w") as fh:
        fh.write(cfgmod.manifest_text(command, values, __version__))
    if command in ("scaling", "gradient-gap"):
        return _cmd_experiment(values, out, workers, command)
    return _HANDLERS[command](values, out, workers)


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            pairs = cfgmod.read_config_file(args.manifest)
            command = pairs.get("subcommand")
            if command not in COMMANDS:
                raise cfgmod.ConfigError(f"manifest names no known subcommand: {command!r}",
                                         "subcommand")
            values = cfgmod.resolve(command, pairs)
        else:
            command = args.command
            pairs = cfgmod.read_config_file(args.config) if args.config else {}
            values = cfgmod.resolve(command, pairs, args.set, args.seed)
        out = args.out or os.path.join("out", command)
        return execute(command, values, out, args.workers)
    except ValueError as exc:
        print(f"riskbound-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"riskbound-lab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
