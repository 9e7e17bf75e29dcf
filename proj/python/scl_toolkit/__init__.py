"""Second-order necessary-condition checks for stochastic optimal control."""

from ._core import (
    ConfigError,
    DomainError,
    Problem,
    __version__,
    counterexample_ratio,
    oscillating_thetas,
    preset,
    problem_from_json,
    riccati,
    simulate,
    singularity,
    solve_adjoints,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "Problem",
    "__version__",
    "counterexample_ratio",
    "oscillating_thetas",
    "preset",
    "problem_from_json",
    "riccati",
    "simulate",
    "singularity",
    "solve_adjoints",
]
