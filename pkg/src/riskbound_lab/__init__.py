"""Stability-based generalization and excess-risk experiments on strongly convex quadratics."""

__version__ = "0.1.0"

from .errors import NumericFailure  # noqa: E402
from .problems import (Dataset, NoiseRule, ProblemSpec, constants, loss_and_grad,  # noqa: E402
                       make_quadratic_spec, population_oracle, sample_dataset)
from .optimizers import AlgorithmConfig, StepRule, run_algorithm, solve_erm  # noqa: E402

__all__ = [
    "AlgorithmConfig", "Dataset", "NoiseRule", "NumericFailure", "ProblemSpec", "StepRule",
    "constants", "loss_and_grad", "make_quadratic_spec", "population_oracle", "run_algorithm",
    "sample_dataset", "solve_erm", "__version__",
]
