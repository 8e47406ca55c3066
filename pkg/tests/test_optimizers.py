import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskbound_lab.errors import NumericFailure
from riskbound_lab.optimizers import (AlgorithmConfig, StepRule, default_stride,
                                      empirical_risk_and_grad, empirical_suboptimality,
                                      pgd_horizon, run_algorithm, run_pgd, run_sgd, sgd_indices,
                                      solve_erm)
from riskbound_lab.problems import (Dataset, NoiseRule, loss_and_grad, make_quadratic_spec,
                                    sample_dataset)


def instance(d=3, kappa=6.0, sigma=1.0, n=40, seed=0):
    spec = make_quadratic_spec(d, kappa, NoiseRule.constant(sigma), seed=seed)
    return spec, sample_dataset(spec, n, seed + 1000)


def brute_risk(spec, ds, w):
    losses = [loss_and_grad(spec, w, z) for z in ds.samples]
    return np.mean([l for l, _ in losses]), np.mean([g for _, g in losses], axis=0)


def test_erm_mean_of_samples():
    spec = make_quadratic_spec(1, 1.0, NoiseRule.constant(5.0), seed=0, b_mean=[0.0])
    ds = Dataset.from_samples(spec, [[0.0], [2.0], [4.0]])
    assert solve_erm(spec, ds).w_hat[0] == 2.0


def test_erm_noiseless_is_exact():
    spec = make_quadratic_spec(4, 9.0, NoiseRule.constant(0.0), seed=3)
    ds = sample_dataset(spec, 10, 1)
    sol = solve_erm(spec, ds)
    assert np.array_equal(sol.w_hat, spec.solve(spec.b_mean))
    assert sol.closed_form


def test_erm_first_order_optimality():
    for seed in range(20):
        spec, ds = instance(d=4, kappa=20.0, seed=seed)
        sol = solve_erm(spec, ds)
        _, g = empirical_risk_and_grad(spec, ds, sol.w_hat)
        assert np.linalg.norm(g) <= 1e-10 * spec.gamma * spec.domain_radius


def test_empirical_risk_linearity():
    spec, ds = instance()
    w = np.array([0.2, -0.4, 0.9])
    risk, grad = empirical_risk_and_grad(spec, ds, w)
    r2, g2 = brute_risk(spec, ds, w)
    assert risk == pytest.approx(r2, rel=1e-10)
    assert np.allclose(grad, g2, atol=1e-12)
    one = Dataset.from_samples(spec, ds.samples[:1])
    r1, g1 = empirical_risk_and_grad(spec, one, w)
    l, g = loss_and_grad(spec, w, ds.samples[0])
    assert r1 == pytest.approx(l, rel=1e-12) and np.allclose(g1, g, atol=1e-14)
    sol = solve_erm(spec, ds)
    assert np.linalg.norm(empirical_risk_and_grad(spec, ds, sol.w_hat)[1]) < 1e-12


def test_pgd_one_step_with_unit_curvature():
    spec = make_quadratic_spec(1, 1.0, NoiseRule.constant(1.0), seed=0, b_mean=[1.0])
    ds = Dataset.from_samples(spec, [[0.5], [1.5]])
    traj = run_pgd(spec, ds, AlgorithmConfig("pgd", T=1))
    assert traj.iterates[0][0] == 0.0 and traj.final[0] == 1.0
    assert empirical_suboptimality(spec, ds, traj.final) == 0.0


def test_pgd_rejects_other_steps():
    spec, ds = instance()
    with pytest.raises(ValueError):
        run_pgd(spec, ds, AlgorithmConfig("pgd", T=3, step_rule=StepRule.constant(0.01)))
    with pytest.raises(ValueError):
        AlgorithmConfig("pgd", T=3, step_rule=StepRule.strongly_convex(100.0))


@settings(max_examples=30, deadline=None)
@given(d=st.integers(2, 5), kappa=st.floats(1.0, 40.0), sigma=st.floats(0.0, 2.0),
       seed=st.integers(0, 10**6), T=st.integers(1, 60))
def test_pgd_contraction_property(d, kappa, sigma, seed, T):
    spec, ds = instance(d, kappa, sigma, n=12, seed=seed)
    traj = run_pgd(spec, ds, AlgorithmConfig("pgd", T=T))
    F_hat = solve_erm(spec, ds).risk
    gap0 = traj.F_S[0] - F_hat
    assert traj.F_S[-1] - F_hat <= (1 - spec.mu / spec.gamma) ** T * gap0 + 1e-9
    assert np.all(np.diff(traj.F_S) <= 1e-12)  # descent
    assert np.all(np.linalg.norm(traj.iterates, axis=1) <= spec.domain_radius * (1 + 1e-12))


def test_erm_matches_converged_pgd():
    rng = np.random.default_rng(7)
    for k in range(50):
        d = int(rng.integers(1, 6))
        kappa = 1.0 if d == 1 else float(rng.uniform(1, 15))
        spec, ds = instance(d, kappa, float(rng.uniform(0, 2)), n=int(rng.integers(2, 30)), seed=k)
        T = 2000  # (1 - 1/15)^2000 is far below rounding
        w = run_pgd(spec, ds, AlgorithmConfig("pgd", T=T), store_iterates=False).final
        assert np.linalg.norm(w - solve_erm(spec, ds).w_hat) <= 1e-8


def test_pgd_horizon():
    assert pgd_horizon(1.0, 1.0, 1000) == 1
    # (1 - 1/2)^{2T} <= 1/n^2  with T = ceil(2 log n / log 2)
    assert pgd_horizon(1.0, 2.0, 64) == 12
    assert pgd_horizon(1.0, 1e9, 10**6, cap=50) == 50
    assert default_stride(10_000) == 1 and default_stride(10_001) == 2


def test_sgd_fixed_point():
    spec = make_quadratic_spec(3, 5.0, NoiseRule.constant(0.0), seed=1)
    ds = sample_dataset(spec, 8, 0)
    w_star = spec.solve(spec.b_mean)
    cfg = AlgorithmConfig("sgd", T=200, step_rule=StepRule.polynomial(0.05, 0.5))
    traj = run_sgd(spec, ds, cfg, w1=w_star)
    assert np.allclose(traj.iterates, w_star, atol=1e-14)


def test_sgd_equal_samples_is_gradient_descent():
    spec = make_quadratic_spec(2, 3.0, NoiseRule.constant(0.0), seed=2)
    ds = sample_dataset(spec, 6, 0)
    rule = StepRule.strongly_convex(12.0)
    traj = run_sgd(spec, ds, AlgorithmConfig("sgd", T=50, step_rule=rule, algo_seed=4))
    w = np.zeros(2)
    for t in range(1, 51):
        w = w - rule.etas([t], spec.mu, spec.gamma)[0] * (spec.A @ w - spec.b_mean)
    assert np.allclose(traj.final, w, atol=1e-13)


def test_sgd_reproducible_and_coupled():
    spec, ds = instance(n=30)
    cfg = AlgorithmConfig("sgd", T=500, step_rule=StepRule.strongly_convex(24.0), algo_seed=11)
    a = run_sgd(spec, ds, cfg).final
    b = run_sgd(spec, ds, cfg).final
    assert a.tobytes() == b.tobytes()
    idx = sgd_indices(11, 30, 500)
    assert np.array_equal(idx, sgd_indices(11, 30, 500))
    assert idx.min() >= 0 and idx.max() < 30
    # index stream is a function of (seed, n, T) only; prefixes agree across T
    assert np.array_equal(sgd_indices(11, 30, 100), idx[:100])
    other = Dataset.from_samples(spec, ds.samples * 2.0)
    other = Dataset(other.samples, ds.spec_fingerprint, ds.noise_scale)
    run_sgd(spec, other, cfg)
    assert np.array_equal(sgd_indices(11, 30, 500), idx)


def test_sgd_strongly_convex_improves_with_T():
    spec, _ = instance(d=2, kappa=3.0, sigma=1.0)
    rule = StepRule.strongly_convex(12.0)
    meds = []
    for T in (50, 200, 800):
        gaps = []
        for s in range(100):
            ds = sample_dataset(spec, 20, s)
            w = run_sgd(spec, ds, AlgorithmConfig("sgd", T=T, step_rule=rule, algo_seed=s),
                        store_iterates=False).final
            gaps.append(empirical_suboptimality(spec, ds, w))
        meds.append(np.median(gaps))
    assert meds[0] > meds[1] > meds[2]


def test_step_rule_validation():
    with pytest.raises(ValueError):
        StepRule.polynomial(0.1, 1.0).validate("sgd", 1.0, 2.0)
    with pytest.raises(ValueError):
        StepRule.polynomial(0.3, 0.5).validate("sgd", 1.0, 2.0)  # eta1 >= 1/(2 gamma)
    with pytest.raises(ValueError):
        StepRule.strongly_convex(3.0).validate("sgd", 1.0, 2.0)  # t0 < 4 gamma/mu
    StepRule.strongly_convex(8.0).validate("sgd", 1.0, 2.0)
    etas = StepRule.polynomial(0.2, 0.5).etas([1, 4], 1.0, 2.0)
    assert np.allclose(etas, [0.2, 0.1])
    assert np.allclose(StepRule.strongly_convex(8.0).etas([2], 1.0, 2.0), [0.2])
    with pytest.raises(ValueError):
        AlgorithmConfig("sgd", T=0)
    with pytest.raises(ValueError):
        AlgorithmConfig("adam", T=3)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_on_overflow():
    spec = make_quadratic_spec(2, 2.0, NoiseRule.constant(0.0), seed=0)
    bad = Dataset(np.full((3, 2), np.inf), spec.fingerprint, 0.0)
    with pytest.raises(NumericFailure) as err:
        run_pgd(spec, bad, AlgorithmConfig("pgd", T=5))
    assert err.value.step == 1


def test_trajectory_recording(tmp_path):
    spec, ds = instance()
    cfg = AlgorithmConfig("sgd", T=25_000, step_rule=StepRule.strongly_convex(24.0),
                          track_population=True)
    traj = run_sgd(spec, ds, cfg, store_iterates=False)
    assert traj.stride == 3 and traj.steps[0] == 1 and traj.steps[-1] == 25_001
    assert traj.iterates is None and traj.weighted_grad_avg > 0
    traj.to_csv(tmp_path / "t.csv")
    head = (tmp_path / "t.csv").read_text().splitlines()
    assert head[0] == "t,eta_t,F_S,grad_norm_S,F_pop,grad_norm_pop"
    assert len(head) == len(traj.steps) + 1


def test_run_algorithm_dispatch():
    spec, ds = instance()
    assert np.array_equal(run_algorithm(spec, ds, AlgorithmConfig("erm")), solve_erm(spec, ds).w_hat)
    w = run_algorithm(spec, ds, AlgorithmConfig("pgd", T=5))
    assert w.shape == (3,)
