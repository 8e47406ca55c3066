"""Measured and theoretical uniform stability in gradients.

For the quadratic family grad f(w; z) - grad f(w'; z) = A (w - w') for every z,
so the supremum over test points is attained exactly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .optimizers import empirical_suboptimality, run_pgd, run_sgd, solve_erm
from .problems import draw_samples, sample_dataset
from .seeding import mix_seed

_REPLACEMENT_STREAM = 0x2E9


def stability_budget(constants, n, config, eps_opt=None):
    """ERM: 4 M gamma / (n mu). PGD: 2 M gamma / (n mu).
    SGD: 2 gamma sqrt(2 eps_opt / mu) + 4 M gamma / (n mu)."""
    c = constants
    base = c.M * c.gamma / (n * c.mu)
    if config.kind == "erm":
        return 4 * base
    if config.kind == "pgd":
        return 2 * base
    if eps_opt is None:
        raise ValueError("SGD stability budget needs eps_opt")
    if eps_opt < 0:
        raise ValueError(f"eps_opt must be >= 0, got {eps_opt}")
    return 2 * c.gamma * math.sqrt(2 * eps_opt / c.mu) + 4 * base


@dataclass(frozen=True)
class StabilityMeasurement:
    algorithm: str
    n: int
    i: int
    measured_beta: float
    theoretical_beta: float
    is_exact_sup: bool = True
    eps_opt: float = None
    seeds: dict = field(default_factory=dict)

    @property
    def ratio(self):
        if self.theoretical_beta == 0:
            return 0.0 if self.measured_beta == 0 else math.inf
        return self.measured_beta / self.theoretical_beta


def _output(spec, dataset, config):
    if config.kind == "erm":
        return solve_erm(spec, dataset, config.erm_tolerance).w_hat
    runner = run_pgd if config.kind == "pgd" else run_sgd
    return runner(spec, dataset, config, store_iterates=False).final


def measure_grad_stability(spec, config, dataset, i, z_new, seeds=None):
    """Stability in gradients between ``dataset`` and its neighbour with row ``i`` replaced.

    SGD runs on both datasets reuse ``config.algo_seed``, so they share the index
    sequence. The SGD budget uses the larger final-iterate optimization error.
    """
    if not 0 <= i < dataset.n:
        raise ValueError(f"replaced index {i} out of range for n={dataset.n}")
    neighbor = dataset.neighbor(i, z_new)
    w = _output(spec, dataset, config)
    w2 = _output(spec, neighbor, config)
    measured = float(np.linalg.norm(spec.A @ (w - w2)))
    eps = None
    if config.kind == "sgd":
        eps = float(max(empirical_suboptimality(spec, dataset, w),
                        empirical_suboptimality(spec, neighbor, w2)))
    budget = float(stability_budget(spec.constants(dataset.n), dataset.n, config, eps))
    return StabilityMeasurement(config.kind, dataset.n, i, measured, budget, True, eps,
                                dict(seeds or {}))


def estimate_grad_stability(spec, config, n, i, data_seed, replacement_seed):
    """Draw S from ``data_seed`` and z'_i from ``replacement_seed``, then measure."""
    if not 0 <= i < n:
        raise ValueError(f"replaced index {i} out of range for n={n}")
    dataset = sample_dataset(spec, n, data_seed)
    z_new = draw_samples(spec, 1, mix_seed(replacement_seed, _REPLACEMENT_STREAM), n=n)[0]
    seeds = {"data_seed": data_seed, "replacement_seed": replacement_seed,
             "algo_seed": config.algo_seed}
    return measure_grad_stability(spec, config, dataset, i, z_new, seeds)


def measurements_to_csv(measurements, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "n", "i", "measured_beta", "theoretical_beta", "ratio"])
        for m in measurements:
            w.writerow([m.algorithm, m.n, m.i, repr(m.measured_beta),
                        repr(m.theoretical_beta), repr(m.ratio)])
