"""End-to-end acceptance checks, one test per criterion, each at its stated tolerance.

Every test prints a single PASS/FAIL line; the lines are repeated in the
terminal summary so they survive output capture.
"""
import filecmp
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from riskbound_lab import cli, experiments as ex
from riskbound_lab.concentration import (MomentBoundInputs, eq2_terms, khintchine_constant,
                                         khintchine_sandwich, theorem1_terms)
from riskbound_lab.optimizers import AlgorithmConfig, StepRule, run_pgd, solve_erm
from riskbound_lab.problems import NoiseRule, loss_and_grad, make_quadratic_spec, sample_dataset
from riskbound_lab.stability import estimate_grad_stability


def report(label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_moment_bound_constant_ratios():
    G1 = MomentBoundInputs(16, 2, 1.0, 0.0)
    B1 = MomentBoundInputs(16, 2, 0.0, 1.0)
    first = theorem1_terms(G1)[0] / eq2_terms(G1)[0]
    second = theorem1_terms(B1)[1] / eq2_terms(B1)[1]
    ok = abs(first - 0.879) <= 1e-3 and abs(second - 0.634) <= 1e-3
    report("moment-bound term ratios at p=2", ok,
           f"first {first:.5f} (0.879 +- 0.001), second {second:.5f} (0.634 +- 0.001)")


def test_khintchine_anchor():
    c2 = khintchine_constant(2)
    sandwich = all(lo < v < hi for lo, v, hi in map(khintchine_sandwich, range(2, 65)))
    report("Khintchine constant and Gamma sandwich", abs(c2 - 1) <= 1e-12 and sandwich,
           f"C_2 - 1 = {c2 - 1:.1e}, sandwich strict for p=2..64: {sandwich}")


def test_concentration_dominance_audit():
    start = time.perf_counter()
    rep = ex.run_concentration_audit(ex.AuditConfig())
    elapsed = time.perf_counter() - start
    cells = rep["cells"]
    worst = max(c["ci_high"] / c["bound"] for c in cells)
    ok = rep["violations"] == 0 and min(c["trials"] for c in cells) >= 10_000 and elapsed < 120
    report("Monte-Carlo p-norm dominance audit", ok,
           f"{len(cells)} cells, {rep['violations']} violations, max ci_high/bound {worst:.3f}, "
           f"{elapsed:.1f}s (< 120s)")


def test_stability_soundness():
    start = time.perf_counter()
    erm = ex.run_stability_audit(ex.StabilityAuditConfig(kind="erm", audits=500, base_seed=1))
    pgd = ex.run_stability_audit(ex.StabilityAuditConfig(kind="pgd", audits=500, base_seed=2))
    spec = make_quadratic_spec(3, 5.0, NoiseRule.constant(1.0), seed=7)

    def worst(n):
        return max(estimate_grad_stability(spec, AlgorithmConfig("erm"), n, s % n, 100 + s, 900 + s)
                   .measured_beta for s in range(50))

    ratios = [worst(2 * n) / worst(n) for n in (16, 64, 256)]
    elapsed = time.perf_counter() - start
    ok = (erm["violations"] == 0 and pgd["violations"] == 0 and len(erm["rows"]) >= 500
          and len(pgd["rows"]) >= 500 and all(0.3 <= r <= 0.7 for r in ratios) and elapsed < 60)
    report("gradient-stability budgets", ok,
           f"ERM {500 - erm['violations']}/500, PGD {500 - pgd['violations']}/500 within budget; "
           f"max beta ratio at 2n/n {', '.join(f'{r:.3f}' for r in ratios)} in [0.3, 0.7]; "
           f"{elapsed:.1f}s (< 60s)")


def _slope(kind, noise, kappa=1.0, d=3, grid=(32, 64, 128, 256, 512, 1024), rule=None):
    alg = ex.ExperimentAlgorithm(kind, step_rule=rule or StepRule.constant())
    cfg = ex.ExperimentConfig(
        problem=ex.ProblemTemplate(d=d, kappa=kappa, noise=noise, noise_value=1.0, seed=3),
        algorithm=alg, n_grid=grid, replicates=200, delta=0.05, base_seed=11)
    return ex.run_scaling_experiment(cfg).slope_fit["slope"]


def test_fast_rate_erm_pgd():
    start = time.perf_counter()
    erm = _slope("erm", "inverse_n")
    pgd = _slope("pgd", "inverse_n")
    control = _slope("erm", "constant")
    elapsed = time.perf_counter() - start
    ok = -2.3 <= erm <= -1.7 and -2.3 <= pgd <= -1.7 and -1.25 <= control <= -0.8 and elapsed < 300
    report("excess-risk rate, ERM and PGD, variance c/n", ok,
           f"ERM slope {erm:.3f}, PGD slope {pgd:.3f} (in [-2.3, -1.7]); constant-noise control "
           f"{control:.3f} (in [-1.25, -0.8]); {elapsed:.1f}s (< 300s)")


def test_fast_rate_sgd():
    start = time.perf_counter()
    slope = _slope("sgd", "inverse_n", grid=(32, 64, 128), rule=StepRule.strongly_convex(4.0))
    elapsed = time.perf_counter() - start
    report("excess-risk rate, SGD with 2/(mu(t+t0)) steps and T = n^2",
           -2.4 <= slope <= -1.5 and elapsed < 600,
           f"slope {slope:.3f} (in [-2.4, -1.5]); {elapsed:.1f}s (< 600s)")


def test_gradient_gap_coverage():
    start = time.perf_counter()
    cfg = ex.ExperimentConfig(
        problem=ex.ProblemTemplate(d=3, kappa=5.0, noise="constant", noise_value=1.0, seed=4),
        algorithm=ex.ExperimentAlgorithm("erm"), n_grid=(32, 64, 128, 256, 512, 1024),
        replicates=200, delta=0.05, metric="grad_gap", base_seed=12)
    res = ex.run_gradient_gap_experiment(cfg)
    elapsed = time.perf_counter() - start
    cover = [c["thm2_dominance"] for c in res.bound_curve]
    ok = all(c >= 0.95 for c in cover) and elapsed < 120
    report("gradient-gap coverage by the M/sqrt(n) bound", ok,
           f"per-n coverage min {min(cover):.3f} (>= 0.95) over n = 32..1024; {elapsed:.1f}s (< 120s)")


def test_pgd_contraction():
    rng = np.random.default_rng(2024)
    worst = -math.inf
    runs = 0
    for k in range(300):
        d = int(rng.integers(1, 7))
        kappa = 1.0 if d == 1 else float(np.exp(rng.uniform(0, math.log(50))))
        spec = make_quadratic_spec(d, kappa, NoiseRule.constant(float(rng.uniform(0, 3))), seed=k)
        ds = sample_dataset(spec, int(rng.integers(1, 200)), k)
        T = int(rng.integers(1, 300))
        traj = run_pgd(spec, ds, AlgorithmConfig("pgd", T=T), w1=rng.normal(size=d) * spec.domain_radius)
        F_hat = solve_erm(spec, ds).risk
        rate = (1 - spec.mu / spec.gamma) ** T
        # slack left after the contraction bound, per run
        worst = max(worst, (traj.F_S[-1] - F_hat) - (rate * (traj.F_S[0] - F_hat) + 1e-9))
        runs += 1
    report("PGD linear contraction of empirical suboptimality", worst <= 0,
           f"{runs} runs, max excess over (1-mu/gamma)^T gap + 1e-9: {worst:.3e} (<= 0)")


def test_oracle_equivalence():
    rng = np.random.default_rng(99)
    worst_fd, worst_erm = 0.0, 0.0
    for k in range(50):
        d = int(rng.integers(1, 7))
        kappa = 1.0 if d == 1 else float(rng.uniform(1, 20))
        spec = make_quadratic_spec(d, kappa, NoiseRule.constant(float(rng.uniform(0, 2))), seed=k)
        w, z = rng.normal(size=d), rng.normal(size=d) * 2
        _, g = loss_and_grad(spec, w, z)
        h = 1e-6
        fd = np.array([(loss_and_grad(spec, w + h * e, z)[0] - loss_and_grad(spec, w - h * e, z)[0])
                       / (2 * h) for e in np.eye(d)])
        worst_fd = max(worst_fd, np.linalg.norm(fd - g) / np.linalg.norm(g))
        ds = sample_dataset(spec, int(rng.integers(2, 100)), k)
        steps = max(1, math.ceil(60 / -math.log1p(-1 / kappa))) if kappa > 1 else 1
        w_pgd = run_pgd(spec, ds, AlgorithmConfig("pgd", T=steps), store_iterates=False).final
        worst_erm = max(worst_erm, float(np.linalg.norm(w_pgd - solve_erm(spec, ds).w_hat)))
    ok = worst_fd <= 1e-6 and worst_erm <= 1e-8
    report("oracle equivalence", ok,
           f"finite-difference rel. error {worst_fd:.1e} (<= 1e-6); closed-form vs PGD "
           f"{worst_erm:.1e} (<= 1e-8) on 50 instances")


DETERMINISM_RUNS = {
    "scaling": ["algorithm.kind=pgd", "problem.d=3", "problem.kappa=4"],
    "gradient-gap": ["problem.noise=constant", "problem.d=2", "problem.kappa=3"],
    "verify-concentration": ["audit.trials=2000", "audit.resamples=200"],
    "stability": ["stability.audits=60", "stability.kind=sgd", "stability.n_max=40"],
    "bounds-table": ["problem.d=4", "problem.kappa=10", "problem.noise=constant"],
    "run": ["algorithm.kind=sgd", "algorithm.step_rule=strongly_convex", "run.n=128",
            "algorithm.T=20000", "problem.d=3", "problem.kappa=2"],
}


@pytest.fixture(scope="module")
def determinism_root(tmp_path_factory):
    return tmp_path_factory.mktemp("determinism")


def test_manifest_determinism(determinism_root):
    mismatched = []
    for command, sets in DETERMINISM_RUNS.items():
        a, b = determinism_root / f"{command}-1", determinism_root / f"{command}-3"
        argv = [command, "--out", str(a), "--seed", "20231", "--workers", "1"]
        for s in sets:
            argv += ["--set", s]
        assert cli.main(argv) in (0, 1)
        assert cli.main(["replay", str(a / "manifest.txt"), "--out", str(b), "--workers", "3"]) in (0, 1)
        names = sorted(p.name for p in a.iterdir())
        if names != sorted(p.name for p in b.iterdir()):
            mismatched.append(f"{command}: file sets differ")
            continue
        _, bad, err = filecmp.cmpfiles(a, b, names, shallow=False)
        mismatched += [f"{command}/{n}" for n in bad + err]
    files = sum(len(list((determinism_root / f"{c}-1").iterdir())) for c in DETERMINISM_RUNS)
    report("replay from manifest is byte-identical across worker counts", not mismatched,
           f"{len(DETERMINISM_RUNS)} subcommands, {files} files compared at 1 vs 3 workers; "
           f"mismatches: {mismatched or 'none'}")
