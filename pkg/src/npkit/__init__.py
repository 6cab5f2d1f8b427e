"""Neural processes: learned distributions over functions, with regression, image completion, Bayesian optimisation and bandit tooling."""

__version__ = "0.1.0"
