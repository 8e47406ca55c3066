"""Flat ``key = value`` configuration with dotted sections.

Blank lines and lines starting with ``#`` are ignored. Every key has a typed
parser and a default; unknown keys are rejected with the key named.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

SEED_ENV = "RISKBOUND_LAB_SEED"


class ConfigError(ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


def _int(s):
    return int(s, 0)


_int.__name__ = "int"


def _seed(s):
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return v


def _bool(s):
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(parse):
    def f(s):
        return None if s.strip().lower() in ("auto", "none", "") else parse(s)
    f.__name__ = parse.__name__
    return f


def _list(parse):
    def f(s):
        items = [x.strip() for x in s.split(",") if x.strip()]
        if not items:
            raise ValueError("empty list")
        return tuple(parse(x) for x in items)
    f.__name__ = f"list of {parse.__name__}"
    return f


def _choice(*options):
    def f(s):
        s = s.strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    f.__name__ = "|".join(options)
    return f


@dataclass(frozen=True)
class Key:
    name: str
    parse: object
    default: object
    help: str
    commands: tuple


_EXP = ("scaling", "gradient-gap")
_PROB = ("scaling", "gradient-gap", "run", "bounds-table")
_ALGO = ("scaling", "gradient-gap", "run")
_ALL = ("verify-concentration", "stability", "scaling", "gradient-gap", "bounds-table", "run")

KEYS = [
    Key("seed", _seed, None, "base seed (flag --seed and $RISKBOUND_LAB_SEED take part in resolution)", _ALL),
    Key("problem.d", _int, 1, "dimension", _PROB),
    Key("problem.kappa", float, 1.0, "condition number gamma/mu (mu = 1)", _PROB),
    Key("problem.noise", _choice("constant", "inverse_n"), "inverse_n",
        "noise regime: constant sigma, or variance c/n", _PROB),
    Key("problem.noise_value", float, 1.0, "sigma for constant noise, c for inverse_n", _PROB),
    Key("problem.b_mean_norm", float, 1.0, "norm of the mean of b", _PROB),
    Key("problem.seed", _int, 0, "seed for the eigenbasis and the direction of the mean", _PROB),
    Key("algorithm.kind", _choice("erm", "pgd", "sgd"), "erm", "algorithm", _ALGO),
    Key("algorithm.step_rule", _choice("constant", "polynomial", "strongly_convex"), "constant",
        "step schedule (PGD always uses 1/gamma)", _ALGO),
    Key("algorithm.eta", _opt(float), None, "constant step; auto = 1/gamma", _ALGO),
    Key("algorithm.eta1", _opt(float), None, "polynomial first step; auto = 1/(4 gamma)", _ALGO),
    Key("algorithm.theta", float, 0.5, "polynomial decay exponent in (0, 1)", _ALGO),
    Key("algorithm.t0", _opt(float), None, "strongly convex offset; auto = max(4 gamma/mu, 1)", _ALGO),
    Key("algorithm.T", _opt(_int), None, "iterations; auto picks a horizon from n", _ALGO),
    Key("algorithm.T_scale", float, 1.0, "multiplier on automatic SGD horizons", _ALGO),
    Key("algorithm.T_cap", _int, 10_000_000, "upper limit on automatic SGD horizons", _ALGO),
    Key("algorithm.erm_tolerance", float, 1e-12, "gradient tolerance for the iterative ERM fallback", _ALGO),
    Key("experiment.n_grid", _list(_int), (32, 64, 128, 256, 512, 1024), "sample sizes", _EXP),
    Key("experiment.replicates", _int, 200, "datasets per sample size (>= 50)", _EXP),
    Key("experiment.delta", float, 0.05, "confidence parameter; reports the 1-delta quantile", _EXP),
    Key("experiment.metric", _opt(_choice("excess_risk", "grad_gap", "pop_grad_norm", "weighted_grad_avg")),
        None, "metric; auto = excess_risk (scaling) or grad_gap (gradient-gap)", _EXP),
    Key("experiment.require_threshold", _bool, False,
        "reject grids with n below 16 gamma^2 log(6/delta)/mu^2", _EXP),
    Key("audit.families", _list(_choice("centered_product", "mz_rademacher",
                                        "mz_truncated_gaussian", "mcdiarmid_vector")),
        ("centered_product", "mz_rademacher", "mz_truncated_gaussian", "mcdiarmid_vector"),
        "families to audit", ("verify-concentration",)),
    Key("audit.n_grid", _list(_int), (8, 16, 32, 64, 128, 256), "sample sizes", ("verify-concentration",)),
    Key("audit.p_grid", _list(float), (2.0, 4.0, 8.0), "moment orders", ("verify-concentration",)),
    Key("audit.trials", _int, 10_000, "Monte-Carlo trials per cell (>= 100)", ("verify-concentration",)),
    Key("audit.resamples", _int, 1000, "bootstrap resamples per cell", ("verify-concentration",)),
    Key("audit.c", float, 1.0, "scale of the bounded families", ("verify-concentration",)),
    Key("audit.d", _int, 3, "dimension of the vector families", ("verify-concentration",)),
    Key("audit.sigma", float, 1.0, "truncated Gaussian scale", ("verify-concentration",)),
    Key("stability.kind", _choice("erm", "pgd", "sgd"), "erm", "algorithm to audit", ("stability",)),
    Key("stability.audits", _int, 500, "number of randomized audits", ("stability",)),
    Key("stability.n_min", _int, 8, "smallest sample size", ("stability",)),
    Key("stability.n_max", _int, 256, "largest sample size", ("stability",)),
    Key("stability.d_max", _int, 6, "largest dimension", ("stability",)),
    Key("stability.kappa_max", float, 20.0, "largest condition number", ("stability",)),
    Key("run.n", _int, 64, "sample size", ("run",)),
    Key("run.track_population", _bool, True, "record population risk along the trajectory", ("run",)),
    Key("bounds.n", _int, 1024, "sample size", ("bounds-table",)),
    Key("bounds.delta", float, 0.05, "confidence parameter", ("bounds-table",)),
    Key("bounds.eps_opt", float, 0.0, "SGD optimization error entering its stability budget",
        ("bounds-table",)),
]
SCHEMA = {k.name: k for k in KEYS}


def keys_for(command):
    return [k for k in KEYS if command in k.commands]


def format_value(v):
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_pairs(lines, source):
    """Raw ``{key: text}`` from config lines; later duplicates win."""
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key] = value
    return out


def read_config_file(path):
    try:
        with open(path) as fh:
            return parse_pairs(fh, path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None


def resolve(command, file_pairs=None, overrides=(), seed_flag=None, env=None):
    """Merge defaults, file values and ``--set`` overrides into typed values.

    Seed resolution: ``--seed``, then the ``seed`` key, then $RISKBOUND_LAB_SEED, then 0.
    """
    env = os.environ if env is None else env
    raw = dict(file_pairs or {})
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = (x.strip() for x in item.split("=", 1))
        raw[k] = v
    raw.pop("artifact_version", None)
    if "subcommand" in raw:
        if raw.pop("subcommand") != command:
            raise ConfigError(f"config is for a different subcommand, not {command!r}", "subcommand")
    allowed = {k.name: k for k in keys_for(command)}
    values = {name: k.default for name, k in allowed.items()}
    for key, text in raw.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} for {command}", key)
        try:
            values[key] = allowed[key].parse(text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})", key) from None
    if seed_flag is not None:
        values["seed"] = seed_flag
    elif values["seed"] is None:
        text = env.get(SEED_ENV)
        if text:
            try:
                values["seed"] = _seed(text)
            except ValueError:
                raise ConfigError(f"bad {SEED_ENV}: {text!r}", "seed") from None
        else:
            values["seed"] = 0
    return values


def manifest_text(command, values, version):
    lines = [f"subcommand = {command}", f"artifact_version = {version}"]
    lines += [f"{k} = {format_value(values[k])}" for k in sorted(values)]
    return "\n".join(lines) + "\n"


def describe_keys(command):
    rows = []
    for k in keys_for(command):
        default = "(resolved)" if k.name == "seed" else format_value(k.default)
        rows.append(f"  {k.name:<28} {k.parse.__name__.lstrip('_'):<14} default {default}\n      {k.help}")
    return "accepted config keys:\n" + "\n".join(rows)
