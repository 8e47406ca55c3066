"""Moment and tail constants for sums of vector-valued functions, plus Monte-Carlo audits.

All logarithms are natural except ``ceil_log2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericFailure
from .problems import draw_deviations, truncated_norm_moment


def ceil_log2(n):
    """ceil(log2 n) computed exactly on integers; 0 at n = 1."""
    n = int(n)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return (n - 1).bit_length()


def _check_p(p):
    if not p >= 2:
        raise ValueError(f"p must be >= 2, got {p}")


def khintchine_constant(p):
    """Best Khintchine-Kahane constant 2^{1/2} (Gamma((p+1)/2) / sqrt(pi))^{1/p}."""
    _check_p(p)
    log_c = 0.5 * math.log(2.0) + (math.lgamma(0.5 * (p + 1)) - 0.5 * math.log(math.pi)) / p
    return math.exp(log_c)


def khintchine_sandwich(p):
    """(lower, C_p^p, upper) with lower < C_p^p < upper for every p >= 2."""
    _check_p(p)
    base = math.sqrt(2.0) * (p / math.e) ** (p / 2.0)
    value = 2.0 ** (p / 2.0) * math.exp(math.lgamma(0.5 * (p + 1))) / math.sqrt(math.pi)
    return math.exp(-1.0 / (4 * p)) * base, value, math.exp(-1.0 / (18 * p)) * base


def mz_coefficient(n, p):
    """2 * 2^{1/(2p)} * sqrt(n p / e): multiplies the per-term p-norm in the
    Hilbert-space Marcinkiewicz-Zygmund inequality."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    _check_p(p)
    return 2.0 * 2.0 ** (1.0 / (2 * p)) * math.sqrt(n * p / math.e)


MCDIARMID_VARIANTS = ("real_valued", "vector_valued", "expectation_only")


def mcdiarmid_pnorm_bound(n, p, beta, variant):
    if variant not in MCDIARMID_VARIANTS:
        raise ValueError(f"variant must be one of {MCDIARMID_VARIANTS}, got {variant!r}")
    if n < 1 or beta < 0:
        raise ValueError("need n >= 1 and beta >= 0")
    if variant == "expectation_only":
        return math.sqrt(n) * beta
    _check_p(p)
    if variant == "real_valued":
        return math.sqrt(2 * p * n) * beta
    return (math.sqrt(2 * p) + 1) * math.sqrt(n) * beta


@dataclass(frozen=True)
class MomentBoundInputs:
    n: int
    p: float
    G: float
    beta: float

    def __post_init__(self):
        if self.n < 1 or self.G < 0 or self.beta < 0:
            raise ValueError("need n >= 1, G >= 0, beta >= 0")
        _check_p(self.p)


def theorem1_terms(inp):
    """(conditional-mean term, bounded-difference term) of the sharper moment bound."""
    n, p = inp.n, inp.p
    first = 2 * (math.sqrt(2 * p) + 1) * math.sqrt(n) * inp.G
    second = (
        4 * 2.0 ** (1 / (2 * p)) * math.sqrt(p / math.e) * (math.sqrt(2 * p) + 1)
        * n * inp.beta * ceil_log2(n)
    )
    return first, second


def theorem1_moment_bound(inp):
    return sum(theorem1_terms(inp))


def eq2_terms(inp):
    """Terms of the earlier moment bound 2(sqrt2+1) sqrt(np) G + 4(sqrt2+1) n p beta ceil(log2 n)."""
    n, p = inp.n, inp.p
    s = math.sqrt(2) + 1
    return 2 * s * math.sqrt(n * p) * inp.G, 4 * s * n * p * inp.beta * ceil_log2(n)


def eq2_moment_bound(inp):
    return sum(eq2_terms(inp))


def tails_from_moments(a, b, delta):
    """e (a sqrt(log(e/delta)) + b log(e/delta)): tail level implied by
    ||X||_p <= sqrt(p) a + p b for all p >= 2."""
    if a < 0 or b < 0:
        raise ValueError("a and b must be nonnegative")
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    L = math.log(math.e / delta)
    return math.e * (a * math.sqrt(L) + b * L)


def vector_bernstein_tail(n, sigma_sq, M_bound, delta):
    if n < 1 or sigma_sq < 0 or M_bound < 0:
        raise ValueError("need n >= 1, sigma_sq >= 0, M >= 0")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    L = math.log(2.0 / delta)
    return math.sqrt(2 * sigma_sq * L / n) + M_bound * L / n


class CenteredProductFamily:
    """g_i(Z) = r(Z_i) s(Z_{i+1 mod n}) u with r, s independent, centered, |r|, |s| <= c.

    Each Z_i is the pair (r_i, s_i). Then E[g_i | Z_i] = 0 and
    E[g_i | Z_{-i}] = 0, and replacing one Z_j moves at most two of the g_i,
    each by at most beta = 2 c^2.
    """

    def __init__(self, n, c=1.0, u=None, seed=0, kind="rademacher"):
        if n < 2:
            raise ValueError(f"n must be >= 2, got {n}")
        if kind not in ("rademacher", "uniform"):
            raise ValueError(f"unknown coordinate law {kind!r}")
        self.n, self.c, self.kind = int(n), float(c), kind
        u = np.array([1.0]) if u is None else np.asarray(u, dtype=float)
        if not math.isclose(float(np.linalg.norm(u)), 1.0, rel_tol=1e-12):
            raise ValueError("u must be a unit vector")
        self.u = u
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    @property
    def beta(self):
        return 2 * self.c**2

    G = 0.0

    def _coords(self, rng, shape):
        if self.kind == "rademacher":
            return self.c * (2.0 * rng.integers(0, 2, size=shape) - 1.0)
        return rng.uniform(-self.c, self.c, size=shape)

    def draw_z(self, rng, size):
        return self._coords(rng, (size, self.n)), self._coords(rng, (size, self.n))

    def values(self, r, s):
        """Scalar coefficients of g_1..g_n (each g_i is coefficient * u)."""
        return r * np.roll(s, -1, axis=-1)

    def draw(self, size=1):
        """(values, sums): values has shape (size, n, d), sums (size, d)."""
        r, s = self.draw_z(self._rng, size)
        coef = self.values(r, s)
        return coef[..., None] * self.u, coef.sum(axis=1)[:, None] * self.u

    def sum_sampler(self):
        def sampler(rng, size):
            r, s = self.draw_z(rng, size)
            return self.values(r, s).sum(axis=1)[:, None] * self.u
        return sampler


def centered_product_family(n, c=1.0, u=None, seed=0, kind="rademacher"):
    return CenteredProductFamily(n, c, u, seed, kind)


def rademacher_sum_sampler(n, c=1.0, u=None):
    """Sum of n i.i.d. vectors c * r_i * u."""
    u = np.array([1.0]) if u is None else np.asarray(u, dtype=float)

    def sampler(rng, size):
        r = 2.0 * rng.integers(0, 2, size=(size, n)) - 1.0
        return (c * r.sum(axis=1))[:, None] * u
    return sampler


def truncated_gaussian_sum_sampler(n, d, sigma, support_factor=6.0):
    """Sum of n i.i.d. centered truncated-Gaussian vectors."""
    def sampler(rng, size):
        out = np.zeros((size, d))
        for _ in range(n):
            out += draw_deviations(rng, size, d, sigma, support_factor)
        return out
    return sampler


def truncated_gaussian_mean_sampler(n, d, sigma, support_factor=6.0):
    """f(Z) - E f(Z) for the vector mean of n centered truncated-Gaussian vectors."""
    inner = truncated_gaussian_sum_sampler(n, d, sigma, support_factor)

    def sampler(rng, size):
        return inner(rng, size) / n
    return sampler


def truncated_gaussian_pnorm(d, sigma, p, support_factor=6.0):
    """Exact (E||X||^p)^{1/p} for one truncated-Gaussian deviation."""
    return truncated_norm_moment(d, sigma, p, support_factor) ** (1.0 / p)


@dataclass(frozen=True)
class PNormEstimate:
    p: float
    point_estimate: float
    ci_low: float
    ci_high: float
    trials: int


def pnorm_from_norms(norms, p, rng, resamples=1000, level=0.95, chunk=50):
    """Point estimate (mean ||X||^p)^{1/p} and percentile-bootstrap interval."""
    norms = np.asarray(norms, dtype=float)
    if not np.all(np.isfinite(norms)):
        raise NumericFailure("nonfinite sample in p-norm estimate")
    trials = norms.shape[0]
    # scale out the maximum so high powers stay in range
    scale = float(norms.max())
    if scale == 0 or float(np.ptp(norms)) == 0:
        return PNormEstimate(p, scale, scale, scale, trials)
    powers = (norms / scale) ** p
    point = scale * float(powers.mean()) ** (1.0 / p)
    boot = np.empty(resamples)
    for start in range(0, resamples, chunk):
        k = min(chunk, resamples - start)
        idx = rng.integers(0, trials, size=(k, trials))
        boot[start:start + k] = powers[idx].mean(axis=1)
    boot = scale * boot ** (1.0 / p)
    alpha = 0.5 * (1 - level)
    lo, hi = np.quantile(boot, [alpha, 1 - alpha])
    return PNormEstimate(p, point, min(float(lo), point), max(float(hi), point), trials)


def mc_pnorm(sampler, p, trials, seed, resamples=1000):
    """Monte-Carlo estimate of (E||X||^p)^{1/p} for X drawn by ``sampler(rng, size)``."""
    if trials < 100:
        raise ValueError(f"trials must be >= 100, got {trials}")
    _check_p(p)
    rng = np.random.default_rng(seed)
    X = np.asarray(sampler(rng, trials), dtype=float).reshape(trials, -1)
    if not np.all(np.isfinite(X)):
        raise NumericFailure("sampler produced a nonfinite value")
    return pnorm_from_norms(np.linalg.norm(X, axis=1), p, rng, resamples)
