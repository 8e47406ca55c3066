"""Generalization and excess-risk bound evaluators.

Bounds with explicit constants are evaluated exactly. Order-level bounds
(written with an unspecified constant) are evaluated with unit constants on
every addend and flagged ``constants_explicit=False``; only their scaling in
``n`` is meaningful.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .concentration import ceil_log2
from .optimizers import AlgorithmConfig, StepRule
from .stability import stability_budget

E = math.e
SQRT_E = math.sqrt(math.e)


@dataclass(frozen=True)
class BoundReport:
    name: str
    inputs: dict
    terms: dict
    total: float
    constants_explicit: bool

    def to_dict(self):
        return {"name": self.name, "inputs": dict(self.inputs), "terms": dict(self.terms),
                "total": self.total, "constants_explicit": self.constants_explicit}


def _report(name, inputs, terms, explicit):
    total = 0.0
    for v in terms.values():
        total += v
    return BoundReport(name, inputs, terms, total, explicit)


def _check(n, delta, **nonneg):
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    for k, v in nonneg.items():
        if not (v >= 0 and math.isfinite(v)):
            raise ValueError(f"{k} must be finite and >= 0, got {v}")


def thm2_bound(M, beta, n, delta):
    """Gradient generalization gap bound with sampling term proportional to M / sqrt(n)."""
    _check(n, delta, M=M, beta=beta)
    L = math.log(E / delta)
    terms = {
        "stability": 2 * beta,
        "sampling": 4 * M * (1 + E * math.sqrt(2 * L)) / math.sqrt(n),
        "moment_tail": 8 * 2 ** 0.25 * (math.sqrt(2) + 1) * SQRT_E * beta * ceil_log2(n) * L,
    }
    return _report("thm2", {"M": M, "beta": beta, "n": n, "delta": delta}, terms, True)


def thm3_bound(V, beta, M, n, delta):
    """Gradient generalization gap bound led by the gradient second moment V."""
    _check(n, delta, V=V, M=M, beta=beta)
    L6 = math.log(6 / delta)
    L3 = math.log(3 / delta)
    L3e = math.log(3 * E / delta)
    k = ceil_log2(n)
    terms = {
        "variance": math.sqrt(4 * V * L6 / n),
        "stability_variance": math.sqrt((0.5 * beta**2 + 32 * n * beta**2 * L3) * L6 / n),
        "range": M * L6 / n,
        "moment_tail": 16 * 2 ** 0.75 * SQRT_E * beta * k * L3e,
        "moment_tail_sqrt": 32 * SQRT_E * beta * k * math.sqrt(L3e),
    }
    return _report("thm3", {"V": V, "beta": beta, "M": M, "n": n, "delta": delta}, terms, True)


def excess_order_bound(opt_grad_sq, F_star, beta, n, delta):
    """||grad F_S(A(S))||^2 + F* log(1/d)/n + log^2(1/d)/n^2 + beta^2 log^2 n log^2(1/d)."""
    _check(n, delta, opt_grad_sq=opt_grad_sq, F_star=F_star, beta=beta)
    L = math.log(1 / delta)
    terms = {
        "optimization": opt_grad_sq,
        "noise": F_star * L / n,
        "tail": L**2 / n**2,
        "stability": beta**2 * math.log(n) ** 2 * L**2,
    }
    inputs = {"opt_grad_sq": opt_grad_sq, "F_star": F_star, "beta": beta, "n": n, "delta": delta}
    return _report("excess_order", inputs, terms, False)


def erm_order_bound(F_star, n, delta):
    """F* log(1/d)/n + log^2 n log^2(1/d)/n^2."""
    _check(n, delta, F_star=F_star)
    L = math.log(1 / delta)
    terms = {"noise": F_star * L / n, "stability": math.log(n) ** 2 * L**2 / n**2}
    return _report("erm_order", {"F_star": F_star, "n": n, "delta": delta}, terms, False)


def pgd_order_bound(mu, gamma, T, F_star, n, delta):
    """(1 - mu/gamma)^{2T} + F* log(1/d)/n + log^2 n log^2(1/d)/n^2."""
    if not 0 < mu <= gamma:
        raise ValueError("need 0 < mu <= gamma")
    base = erm_order_bound(F_star, n, delta)
    terms = {"optimization": (1 - mu / gamma) ** (2 * T), **base.terms}
    inputs = {"mu": mu, "gamma": gamma, "T": T, "F_star": F_star, "n": n, "delta": delta}
    return _report("pgd_order", inputs, terms, False)


def sgd_polynomial_order_bound(theta, T, F_star, n, delta):
    """Weighted average of ||grad F(w_t)||^2 under eta_t = eta1 t^{-theta}.

    Optimization term log^2 n log^3(1/d) T^{-r} with r = theta (theta < 1/2),
    1/2 (theta = 1/2) or 1 - theta (theta > 1/2); statistical part
    log^2 n log^2(1/d)/n^2 + F* log^2(1/d)/n.
    """
    _check(n, delta, F_star=F_star)
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    r = theta if theta < 0.5 else (0.5 if theta == 0.5 else 1 - theta)
    L = math.log(1 / delta)
    ln = math.log(n)
    terms = {
        "optimization": ln**2 * L**3 * T ** (-r),
        "stability": ln**2 * L**2 / n**2,
        "noise": F_star * L**2 / n,
    }
    inputs = {"theta": theta, "T": T, "F_star": F_star, "n": n, "delta": delta}
    return _report("sgd_polynomial_order", inputs, terms, False)


def sgd_polynomial_horizon_exponent(theta):
    """T grows like n to this power so the optimization term is of order 1/n^2."""
    if theta < 0.5:
        return 2 / theta
    if theta == 0.5:
        return 4.0
    return 2 / (1 - theta)


def sgd_strongly_convex_order_bound(F_star, n, delta):
    """log^4 n log^5(1/d)/n^2 + F* log(1/d)/n, for eta_t = 2/(mu(t+t0)) and T ~ n^2."""
    _check(n, delta, F_star=F_star)
    L = math.log(1 / delta)
    terms = {"stability": math.log(n) ** 4 * L**5 / n**2, "noise": F_star * L / n}
    return _report("sgd_strongly_convex_order", {"F_star": F_star, "n": n, "delta": delta},
                   terms, False)


def sample_size_threshold(gamma, mu, delta):
    """16 gamma^2 log(6/delta) / mu^2.

    Any delta in (0, 6) is accepted so the formula can be probed at log(6/delta) = 1.
    """
    if not 0 < mu <= gamma:
        raise ValueError("need gamma >= mu > 0")
    if not 0 < delta < 6:
        raise ValueError(f"delta must lie in (0, 6), got {delta}")
    return 16 * gamma**2 * math.log(6 / delta) / mu**2


def table_rows(constants, n, delta, F_star, V, pgd_T, eps_opt=0.0):
    """Rows mirroring the summary table for ERM, PGD and SGD at (n, delta)."""
    c = constants
    threshold = sample_size_threshold(c.gamma, c.mu, delta)
    configs = {
        "ERM": (AlgorithmConfig("erm"), erm_order_bound(F_star, n, delta)),
        "PGD": (AlgorithmConfig("pgd", T=pgd_T),
                pgd_order_bound(c.mu, c.gamma, pgd_T, F_star, n, delta)),
        "SGD": (AlgorithmConfig("sgd", T=n * n,
                                step_rule=StepRule.strongly_convex(max(4 * c.gamma / c.mu, 1))),
                sgd_strongly_convex_order_bound(F_star, n, delta)),
    }
    rows = []
    for name, (cfg, order) in configs.items():
        beta = stability_budget(c, n, cfg, eps_opt if cfg.kind == "sgd" else None)
        rows.append({
            "algorithm": name,
            "method": "AS",
            "assumptions": "Smooth, SC, LN",
            "sample_size": threshold,
            "n_ok": n >= threshold,
            "beta": beta,
            "thm2": thm2_bound(c.M, beta, n, delta).total,
            "thm3": thm3_bound(V, beta, c.M, n, delta).total,
            "excess_order": order.total,
            "rate": "O(1/n^2)",
        })
    return rows


def render_table(rows):
    cols = ["algorithm", "method", "assumptions", "sample_size", "n_ok", "beta", "thm2",
            "thm3", "excess_order", "rate"]

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    cells = [[fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[k]) for row in cells)) for k, c in enumerate(cols)]
    lines = [" | ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    lines += [" | ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
