"""Exact ERM, projected gradient descent and projected SGD on the quadratic family.

Iterations run in the eigenbasis of ``A`` where the curvature is diagonal; the
Euclidean ball is rotation invariant so projection commutes with the change of
basis. Recorded iterates are rotated back.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericFailure
from .problems import population_oracle, project
from .seeding import mix_seed

KINDS = ("erm", "pgd", "sgd")
_INDEX_CHUNK = 1 << 16
_INDEX_STREAM = 0x1D5


@dataclass(frozen=True)
class StepRule:
    kind: str
    eta: Optional[float] = None
    eta1: Optional[float] = None
    theta: Optional[float] = None
    t0: Optional[float] = None

    @classmethod
    def constant(cls, eta=None):
        """Constant step; ``None`` means 1/gamma."""
        return cls("constant", eta=eta)

    @classmethod
    def polynomial(cls, eta1, theta):
        return cls("polynomial", eta1=float(eta1), theta=float(theta))

    @classmethod
    def strongly_convex(cls, t0):
        return cls("strongly_convex", t0=float(t0))

    def validate(self, kind, mu, gamma):
        if self.kind == "constant":
            if kind == "pgd" and self.eta is not None and not math.isclose(
                self.eta, 1.0 / gamma, rel_tol=1e-12
            ):
                raise ValueError(f"PGD requires eta = 1/gamma = {1.0 / gamma}, got {self.eta}")
            if self.eta is not None and not self.eta > 0:
                raise ValueError("eta must be positive")
        elif self.kind == "polynomial":
            if not 0 < self.theta < 1:
                raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
            if not 0 < self.eta1 < 1.0 / (2.0 * gamma):
                raise ValueError(
                    f"eta1 must satisfy 0 < eta1 < 1/(2 gamma) = {1.0 / (2.0 * gamma)}, got {self.eta1}"
                )
        elif self.kind == "strongly_convex":
            lower = max(4.0 * gamma / mu, 1.0)
            if not self.t0 >= lower:
                raise ValueError(f"t0 must satisfy t0 >= max(4 gamma/mu, 1) = {lower}, got {self.t0}")
        else:
            raise ValueError(f"unknown step rule {self.kind!r}")

    def etas(self, t, mu, gamma):
        """Step sizes at the (1-based) iteration indices ``t``."""
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full(t.shape, 1.0 / gamma if self.eta is None else self.eta)
        if self.kind == "polynomial":
            return self.eta1 * t ** (-self.theta)
        return 2.0 / (mu * (t + self.t0))

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass(frozen=True)
class AlgorithmConfig:
    kind: str
    T: int = 0
    step_rule: StepRule = field(default_factory=StepRule.constant)
    algo_seed: int = 0
    erm_tolerance: float = 1e-12
    stride: Optional[int] = None
    track_population: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"algorithm kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind != "erm" and self.T < 1:
            raise ValueError("T must be >= 1 for iterative algorithms")
        if self.kind == "pgd" and self.step_rule.kind != "constant":
            raise ValueError("PGD uses the constant rule eta = 1/gamma")

    def validate(self, spec):
        if self.kind != "erm":
            self.step_rule.validate(self.kind, spec.mu, spec.gamma)

    def replace(self, **changes):
        d = dict(self.__dict__)
        d.update(changes)
        return AlgorithmConfig(**d)


def pgd_horizon(mu, gamma, n, cap=10_000):
    """T = ceil(2 log n / log(gamma / (gamma - mu))), at least 1 and at most ``cap``."""
    if gamma <= mu:
        return 1
    T = math.ceil(2.0 * math.log(n) / math.log(gamma / (gamma - mu)))
    return int(min(max(T, 1), cap))


def default_stride(T):
    return 1 if T <= 10_000 else math.ceil(T / 10_000)


class _Empirical:
    """Closed-form pieces of F_S for one dataset, in the eigenbasis."""

    def __init__(self, spec, dataset):
        Q = spec.eigenvectors
        self.spec = spec
        self.lam = spec.eigenvalues
        self.bbar = dataset.mean
        self.bt = dataset.samples @ Q  # rows Q^T b_i
        self.bbar_t = Q.T @ self.bbar
        self.w_hat_t = self.bbar_t / self.lam  # same operations as spec.solve
        dev = self.bt - self.bbar_t
        self.F_min = 0.5 * float(np.sum(dev * dev / self.lam) / dataset.n)

    def subopt_t(self, wt):
        e = wt - self.w_hat_t
        return 0.5 * float(np.dot(self.lam * e, e))

    def risk_t(self, wt):
        return self.subopt_t(wt) + self.F_min

    def grad_norm_t(self, wt):
        return float(np.linalg.norm(self.lam * wt - self.bbar_t))


def empirical_risk_and_grad(spec, dataset, w):
    """F_S(w) and its gradient A w - mean(b)."""
    w = np.asarray(w, dtype=float)
    emp = _Empirical(spec, dataset)
    return emp.risk_t(w @ spec.eigenvectors), spec.A @ w - emp.bbar


def empirical_suboptimality(spec, dataset, w):
    """F_S(w) - min F_S, evaluated as a quadratic form (no cancellation)."""
    emp = _Empirical(spec, dataset)
    return emp.subopt_t(np.asarray(w, dtype=float) @ spec.eigenvectors)


@dataclass(frozen=True, eq=False)
class Solution:
    w_hat: np.ndarray
    risk: float
    grad_norm: float
    closed_form: bool
    iterations: int = 0


def solve_erm(spec, dataset, tolerance=1e-12, max_iter=1_000_000):
    dataset.check(spec)
    emp = _Empirical(spec, dataset)
    w_hat = spec.eigenvectors @ emp.w_hat_t
    if np.linalg.norm(w_hat) <= spec.domain_radius:
        return Solution(w_hat, emp.F_min, emp.grad_norm_t(emp.w_hat_t), True)
    # unreachable under the domain-radius invariant; kept as a guarded fallback
    wt = np.zeros(spec.d)
    eta = 1.0 / spec.gamma
    R = spec.domain_radius
    for k in range(1, max_iter + 1):
        wt = wt - eta * (emp.lam * wt - emp.bbar_t)
        nr = math.sqrt(float(wt @ wt))
        if nr > R:
            wt *= R / nr
        if emp.grad_norm_t(wt) <= tolerance:
            break
    return Solution(spec.eigenvectors @ wt, emp.risk_t(wt), emp.grad_norm_t(wt), False, k)


@dataclass(eq=False)
class Trajectory:
    kind: str
    T: int
    stride: int
    steps: np.ndarray
    eta: np.ndarray
    F_S: np.ndarray
    grad_norm_S: np.ndarray
    final: np.ndarray
    iterates: Optional[np.ndarray] = None
    F_pop: Optional[np.ndarray] = None
    grad_norm_pop: Optional[np.ndarray] = None
    weighted_grad_avg: Optional[float] = None

    def to_csv(self, path):
        cols = ["t", "eta_t", "F_S", "grad_norm_S"]
        if self.F_pop is not None:
            cols += ["F_pop", "grad_norm_pop"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for k, t in enumerate(self.steps):
                row = [int(t), repr(float(self.eta[k])), repr(float(self.F_S[k])),
                       repr(float(self.grad_norm_S[k]))]
                if self.F_pop is not None:
                    row += [repr(float(self.F_pop[k])), repr(float(self.grad_norm_pop[k]))]
                w.writerow(row)


class _Recorder:
    def __init__(self, spec, emp, config, etas, store_iterates):
        self.spec, self.emp = spec, emp
        self.stride = config.stride or default_stride(config.T)
        self.etas = etas
        self.store_iterates = store_iterates
        self.steps, self.F, self.G, self.W = [], [], [], []
        self.oracle = None
        if config.track_population:
            self.oracle = population_oracle(spec, emp.bt.shape[0])
            self.bmean_t = spec.b_mean @ spec.eigenvectors
            self.Fp, self.Gp = [], []

    def due(self, t, T):
        return (t - 1) % self.stride == 0 or t == T + 1

    def record(self, t, wt):
        self.steps.append(t)
        self.F.append(self.emp.risk_t(wt))
        self.G.append(self.emp.grad_norm_t(wt))
        if self.store_iterates:
            self.W.append(self.spec.eigenvectors @ wt)
        if self.oracle is not None:
            e = wt - self.oracle.w_star @ self.spec.eigenvectors
            self.Fp.append(0.5 * float(np.dot(self.emp.lam * e, e)) + self.oracle.F_star)
            self.Gp.append(float(np.linalg.norm(self.emp.lam * wt - self.bmean_t)))

    def finish(self, kind, T, wt, mu, gamma, rule, weighted=None):
        steps = np.array(self.steps, dtype=np.int64)
        return Trajectory(
            kind=kind, T=T, stride=self.stride, steps=steps,
            eta=rule.etas(steps, mu, gamma),
            F_S=np.array(self.F), grad_norm_S=np.array(self.G),
            final=self.spec.eigenvectors @ wt,
            iterates=np.array(self.W) if self.store_iterates else None,
            F_pop=np.array(self.Fp) if self.oracle is not None else None,
            grad_norm_pop=np.array(self.Gp) if self.oracle is not None else None,
            weighted_grad_avg=weighted,
        )


def _start(spec, w1):
    w = np.zeros(spec.d) if w1 is None else project(spec, np.asarray(w1, dtype=float))
    return w @ spec.eigenvectors


def _check(nr, t):
    if not math.isfinite(nr):
        raise NumericFailure(f"nonfinite iterate at step {t}", step=t)


def run_pgd(spec, dataset, config, w1=None, store_iterates=True):
    """w_{t+1} = Proj(w_t - grad F_S(w_t) / gamma), starting from w_1 = 0."""
    if config.kind != "pgd":
        raise ValueError("run_pgd needs an AlgorithmConfig of kind 'pgd'")
    config.validate(spec)
    dataset.check(spec)
    emp = _Empirical(spec, dataset)
    mu, gamma, R, T = spec.mu, spec.gamma, spec.domain_radius, config.T
    eta = 1.0 / gamma
    rec = _Recorder(spec, emp, config, None, store_iterates)
    lam, bbar_t = emp.lam, emp.bbar_t
    wt = _start(spec, w1)
    weighted = 0.0
    for t in range(1, T + 1):
        if rec.due(t, T):
            rec.record(t, wt)
        if rec.oracle is not None:
            g = lam * wt - rec.bmean_t
            weighted += float(g @ g)
        wt = wt - eta * (lam * wt - bbar_t)
        nr = math.sqrt(float(wt @ wt))
        _check(nr, t)
        if nr > R:
            wt = wt * (R / nr)
    rec.record(T + 1, wt)
    w_avg = weighted / T if rec.oracle is not None else None
    return rec.finish("pgd", T, wt, mu, gamma, StepRule.constant(), w_avg)


def sgd_indices(algo_seed, n, T):
    """Uniform draws from {0, ..., n-1}; a function of (algo_seed, n, T) only."""
    rng = np.random.default_rng(mix_seed(algo_seed, _INDEX_STREAM))
    out = np.empty(T, dtype=np.int64)
    for start in range(0, T, _INDEX_CHUNK):
        stop = min(start + _INDEX_CHUNK, T)
        out[start:stop] = rng.integers(0, n, size=_INDEX_CHUNK)[: stop - start]
    return out


def run_sgd(spec, dataset, config, w1=None, store_iterates=True):
    """w_{t+1} = Proj(w_t - eta_t grad f(w_t; z_{i_t})), with i_t uniform on the sample."""
    if config.kind != "sgd":
        raise ValueError("run_sgd needs an AlgorithmConfig of kind 'sgd'")
    config.validate(spec)
    dataset.check(spec)
    emp = _Empirical(spec, dataset)
    mu, gamma, R, T = spec.mu, spec.gamma, spec.domain_radius, config.T
    rule = config.step_rule
    etas = rule.etas(np.arange(1, T + 1), mu, gamma)
    idx = sgd_indices(config.algo_seed, dataset.n, T)
    rec = _Recorder(spec, emp, config, etas, store_iterates)
    lam, bt = emp.lam, emp.bt
    track = rec.oracle is not None
    wt = _start(spec, w1)
    weighted = 0.0
    for k in range(T):
        t = k + 1
        if rec.due(t, T):
            rec.record(t, wt)
        eta = etas[k]
        if track:
            g = lam * wt - rec.bmean_t
            weighted += eta * float(g @ g)
        wt = wt - eta * (lam * wt - bt[idx[k]])
        nr = math.sqrt(float(wt @ wt))
        _check(nr, t)
        if nr > R:
            wt = wt * (R / nr)
    rec.record(T + 1, wt)
    w_avg = weighted / float(np.sum(etas)) if track else None
    return rec.finish("sgd", T, wt, mu, gamma, rule, w_avg)


def run_algorithm(spec, dataset, config, store_iterates=False):
    """Final output A(S) of the configured algorithm."""
    if config.kind == "erm":
        return solve_erm(spec, dataset, config.erm_tolerance).w_hat
    if config.kind == "pgd":
        return run_pgd(spec, dataset, config, store_iterates=store_iterates).final
    return run_sgd(spec, dataset, config, store_iterates=store_iterates).final
