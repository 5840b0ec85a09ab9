"""Monte Carlo laboratory for partially observed zero-sum mean-field games."""

__version__ = "0.1.0"
