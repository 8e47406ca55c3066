"""Synthetic strongly convex quadratic problems with closed-form population quantities.

Per-sample loss, for a random linear term ``b = b(z)``::

    f(w; z) = 1/2 (w - A^{-1} b)^T A (w - A^{-1} b)
            = 1/2 w^T A w - <b, w> + 1/2 b^T A^{-1} b

so ``f >= 0``, ``grad f = A w - b`` and the curvature bounds are the extreme
eigenvalues of ``A``. The deviation ``b - b_mean`` is an isotropic Gaussian
with total variance ``sigma_b**2`` (per-coordinate ``sigma_b**2 / d``),
truncated to the ball of radius ``support_factor * sigma_b``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .seeding import mix_seed

FORMAT_VERSION = 1

# domain tags keep the spec, dataset and replacement streams apart
_SPEC_STREAM = 0x5EC
_DATA_STREAM = 0xDA7A


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NoiseRule:
    """``constant``: sigma_b fixed at ``value``. ``inverse_n``: sigma_b**2 = value / n."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("constant", "inverse_n"):
            raise ValueError(f"unknown noise rule {self.kind!r}")
        if not (self.value >= 0 and math.isfinite(self.value)):
            raise ValueError(f"noise parameter must be finite and >= 0, got {self.value}")

    @classmethod
    def constant(cls, sigma):
        return cls("constant", float(sigma))

    @classmethod
    def inverse_n(cls, c):
        return cls("inverse_n", float(c))

    def sigma_b(self, n=None):
        """Noise scale at sample size ``n``; ``n=None`` gives the worst case (n = 1)."""
        if self.kind == "constant":
            return self.value
        n = 1 if n is None else n
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        return math.sqrt(self.value / n)

    def to_dict(self):
        key = "sigma" if self.kind == "constant" else "c"
        return {"kind": self.kind, key: self.value}

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == "constant":
            return cls.constant(d["sigma"])
        return cls.inverse_n(d["c"])


def truncated_trace_factor(d, support_factor):
    """E||g||^2 / d for g ~ N(0, I_d) conditioned on ||g||^2 <= factor^2 d."""
    t = support_factor**2 * d
    return float(stats.chi2.cdf(t, d + 2) / stats.chi2.cdf(t, d))


def truncated_norm_moment(d, sigma, p, support_factor):
    """Exact E||eps||^p for the truncated deviation of total scale ``sigma``."""
    if sigma == 0:
        return 0.0
    t = support_factor**2 * d
    log_ratio = (
        0.5 * p * math.log(2.0)
        + math.lgamma(0.5 * (d + p))
        - math.lgamma(0.5 * d)
        + stats.chi2.logcdf(t, d + p)
        - stats.chi2.logcdf(t, d)
    )
    return float((sigma**2 / d) ** (0.5 * p) * math.exp(log_ratio))


def draw_deviations(rng, count, d, sigma, support_factor):
    """``count`` truncated-Gaussian deviation vectors, resampling any outside the ball."""
    g = rng.standard_normal((count, d))
    limit = support_factor**2 * d
    bad = np.einsum("ij,ij->i", g, g) > limit
    while bad.any():
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        bad = np.einsum("ij,ij->i", g, g) > limit
    return g * (sigma / math.sqrt(d))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    b_mean: np.ndarray
    noise: NoiseRule
    domain_radius: float
    support_factor: float = 6.0
    seed: Optional[int] = None
    A: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lam = _frozen(self.eigenvalues)
        Q = _frozen(self.eigenvectors)
        b = _frozen(self.b_mean)
        d = lam.shape[0]
        if lam.ndim != 1 or Q.shape != (d, d) or b.shape != (d,):
            raise ValueError("inconsistent dimensions in problem spec")
        if not np.all(lam > 0):
            raise ValueError("A must be positive definite")
        if not np.allclose(Q.T @ Q, np.eye(d), atol=1e-10):
            raise ValueError("eigenvectors must be orthonormal")
        A = (Q * lam) @ Q.T
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenvectors", Q)
        object.__setattr__(self, "b_mean", b)
        object.__setattr__(self, "A", _frozen(0.5 * (A + A.T)))
        needed = self.minimal_radius()
        if not self.domain_radius > 0 or self.domain_radius < needed * (1 - 1e-12):
            raise ValueError(
                f"domain_radius {self.domain_radius} must be positive and >= {needed}"
            )

    @property
    def d(self):
        return self.eigenvalues.shape[0]

    @property
    def mu(self):
        return float(self.eigenvalues.min())

    @property
    def gamma(self):
        return float(self.eigenvalues.max())

    def noise_scale(self, n=None):
        return self.noise.sigma_b(n)

    def support_radius(self, n=None):
        return self.support_factor * self.noise_scale(n)

    def minimal_radius(self):
        return 2.0 * (float(np.linalg.norm(self.b_mean)) + self.support_radius()) / float(
            self.eigenvalues.min()
        )

    def solve(self, b):
        """A^{-1} b via the eigendecomposition."""
        Q = self.eigenvectors
        return Q @ ((Q.T @ b) / self.eigenvalues)

    def constants(self, n=None):
        return constants(self, n)

    def to_dict(self):
        return {
            "format": "riskbound_lab.ProblemSpec",
            "version": FORMAT_VERSION,
            "d": self.d,
            "A": self.A.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
            "b_mean": self.b_mean.tolist(),
            "noise_rule": self.noise.to_dict(),
            "noise_scale": self.noise_scale(),
            "noise_support_radius": self.support_radius(),
            "support_factor": self.support_factor,
            "domain_radius": self.domain_radius,
            "seed": self.seed,
        }

    @property
    def fingerprint(self):
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def make_quadratic_spec(d, kappa, noise=None, seed=0, b_mean_norm=1.0, b_mean=None,
                        support_factor=6.0):
    """Build a spec with mu = 1, gamma = kappa and log-evenly spaced spectrum.

    The eigenbasis and the direction of ``b_mean`` are drawn once from ``seed``.
    ``d = 1`` admits only ``kappa = 1`` since a scalar curvature cannot reach
    both ends of the spectrum.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if not kappa >= 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    if d == 1 and kappa != 1:
        raise ValueError("d = 1 requires kappa = 1")
    noise = NoiseRule.constant(0.0) if noise is None else noise
    rng = np.random.default_rng(mix_seed(seed, _SPEC_STREAM))
    lam = np.geomspace(1.0, float(kappa), d)
    lam[0], lam[-1] = 1.0, float(kappa)
    if d == 1:
        Q = np.ones((1, 1))
    else:
        Q = stats.ortho_group.rvs(d, random_state=rng)
    if b_mean is None:
        u = rng.standard_normal(d)
        b_mean = u / np.linalg.norm(u) * b_mean_norm
    b_mean = np.asarray(b_mean, dtype=float)
    if b_mean.shape != (d,):
        raise ValueError(f"b_mean must have shape ({d},)")
    worst = 2.0 * (float(np.linalg.norm(b_mean)) + support_factor * noise.sigma_b()) / lam[0]
    return ProblemSpec(lam, Q, b_mean, noise, worst if worst > 0 else 1.0,
                       support_factor, seed)


def spec_to_json(spec):
    return json.dumps(spec.to_dict(), sort_keys=True, indent=1)


def spec_from_json(text):
    d = json.loads(text)
    if d.get("format") != "riskbound_lab.ProblemSpec" or d.get("version") != FORMAT_VERSION:
        raise ValueError("not a version-1 ProblemSpec document")
    return ProblemSpec(
        np.array(d["eigenvalues"]),
        np.array(d["eigenvectors"]),
        np.array(d["b_mean"]),
        NoiseRule.from_dict(d["noise_rule"]),
        d["domain_radius"],
        d["support_factor"],
        d["seed"],
    )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered samples ``b(z_1), ..., b(z_n)`` as rows of ``samples``."""

    samples: np.ndarray
    spec_fingerprint: str
    noise_scale: float
    seed: Optional[int] = None

    def __post_init__(self):
        s = _frozen(self.samples)
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError("samples must be a nonempty (n, d) array")
        object.__setattr__(self, "samples", s)

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def mean(self):
        # shifted so identical rows average to exactly that row
        s = self.samples
        return s[0] + (s - s[0]).mean(axis=0)

    @classmethod
    def from_samples(cls, spec, samples, seed=None):
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if samples.shape[1] != spec.d:
            samples = samples.reshape(-1, spec.d)
        return cls(samples, spec.fingerprint, spec.noise_scale(samples.shape[0]), seed)

    def neighbor(self, i, z):
        """S^(i): copy with row ``i`` (0-based) replaced by ``z``."""
        if not 0 <= i < self.n:
            raise ValueError(f"index {i} out of range for n={self.n}")
        s = np.array(self.samples)
        s[i] = z
        return Dataset(s, self.spec_fingerprint, self.noise_scale, None)

    def check(self, spec):
        if self.spec_fingerprint != spec.fingerprint:
            raise ValueError("dataset was not generated from this problem spec")

    def to_dict(self):
        return {
            "format": "riskbound_lab.Dataset",
            "version": FORMAT_VERSION,
            "n": self.n,
            "seed": self.seed,
            "spec_fingerprint": self.spec_fingerprint,
            "noise_scale": self.noise_scale,
            "samples": self.samples.tolist(),
        }


def dataset_to_json(ds):
    return json.dumps(ds.to_dict(), sort_keys=True)


def dataset_from_json(text):
    d = json.loads(text)
    if d.get("format") != "riskbound_lab.Dataset" or d.get("version") != FORMAT_VERSION:
        raise ValueError("not a version-1 Dataset document")
    return Dataset(np.array(d["samples"], dtype=float), d["spec_fingerprint"],
                   d["noise_scale"], d["seed"])


def draw_samples(spec, count, seed, n=None):
    """``count`` fresh samples using the noise scale of a size-``n`` dataset."""
    rng = np.random.default_rng(mix_seed(seed, _DATA_STREAM))
    sigma = spec.noise_scale(count if n is None else n)
    dev = draw_deviations(rng, count, spec.d, sigma, spec.support_factor)
    return spec.b_mean + dev


def sample_dataset(spec, n, seed):
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return Dataset(draw_samples(spec, n, seed), spec.fingerprint, spec.noise_scale(n), seed)


def _as_vector(spec, w, name="w"):
    w = np.asarray(w, dtype=float)
    if w.shape != (spec.d,):
        raise ValueError(f"{name} must have shape ({spec.d},), got {w.shape}")
    return w


def loss_and_grad(spec, w, z):
    w = _as_vector(spec, w)
    z = _as_vector(spec, z, "z")
    Q = spec.eigenvectors
    u = Q.T @ w - (Q.T @ z) / spec.eigenvalues
    loss = 0.5 * float(np.dot(spec.eigenvalues * u, u))
    return loss, spec.A @ w - z


@dataclass(frozen=True, eq=False)
class Constants:
    mu: float
    gamma: float
    M: float
    B_dev: float
    R: float
    sigma_b_sq: float
    A: np.ndarray = field(repr=False)
    b_mean: np.ndarray = field(repr=False)

    def V_at(self, w):
        """E_Z ||grad f(w; Z)||^2."""
        r = self.A @ np.asarray(w, dtype=float) - self.b_mean
        return float(r @ r) + self.sigma_b_sq


def noise_trace(spec, n=None):
    """tr(Sigma_b), exact for the truncated deviation law."""
    sigma = spec.noise_scale(n)
    return sigma**2 * truncated_trace_factor(spec.d, spec.support_factor)


def constants(spec, n=None):
    B = spec.support_radius(n)
    R = spec.domain_radius
    return Constants(
        mu=spec.mu,
        gamma=spec.gamma,
        M=spec.gamma * R + float(np.linalg.norm(spec.b_mean)) + B,
        B_dev=B,
        R=R,
        sigma_b_sq=noise_trace(spec, n),
        A=spec.A,
        b_mean=spec.b_mean,
    )


@dataclass(frozen=True, eq=False)
class PopulationOracle:
    spec: ProblemSpec
    w_star: np.ndarray
    F_star: float
    trace_cov: float

    def F(self, w):
        e = np.asarray(w, dtype=float) - self.w_star
        return 0.5 * float(e @ (self.spec.A @ e)) + self.F_star

    def excess(self, w):
        """F(w) - F(w*) without cancellation."""
        e = np.asarray(w, dtype=float) - self.w_star
        return 0.5 * float(e @ (self.spec.A @ e))

    def grad_F(self, w):
        return self.spec.A @ np.asarray(w, dtype=float) - self.spec.b_mean

    def V(self, w):
        g = self.grad_F(w)
        return float(g @ g) + self.trace_cov


def population_oracle(spec, n=None):
    tr = noise_trace(spec, n)
    # Sigma_b is isotropic, so tr(A^{-1} Sigma_b) = (tr / d) * sum(1 / lambda)
    F_star = 0.5 * (tr / spec.d) * float(np.sum(1.0 / spec.eigenvalues))
    return PopulationOracle(spec, _frozen(spec.solve(spec.b_mean)), F_star, tr)


def project(spec, w):
    w = np.asarray(w, dtype=float)
    norm = float(np.linalg.norm(w))
    R = spec.domain_radius
    if norm <= R:
        return w
    return w * (R / norm)


def sgd_noise_variance(spec, dataset, w=None):
    """(1/n) sum_i ||b_i - mean(b)||^2; for this family it does not depend on ``w``."""
    dev = dataset.samples - dataset.mean
    return float(np.einsum("ij,ij->", dev, dev) / dataset.n)


def sgc_ratio_estimate(spec, probe_points, floor, n=None):
    """Largest V(w) / ||grad F(w)||^2 over the probes.

    Probes with ``||grad F||^2 < floor`` are skipped in the noiseless case; under
    noise such a probe makes the ratio unbounded and None is returned.
    """
    if not floor > 0:
        raise ValueError("floor must be positive")
    probes = list(probe_points)
    if not probes:
        raise ValueError("probe list is empty")
    oracle = population_oracle(spec, n)
    noisy = oracle.trace_cov > 0
    best = None
    for w in probes:
        g = oracle.grad_F(w)
        gsq = float(g @ g)
        if gsq < floor:
            if noisy:
                return None
            continue
        ratio = oracle.V(w) / gsq
        best = ratio if best is None else max(best, ratio)
    return best
