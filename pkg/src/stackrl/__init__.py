"""Block-tower stability analysis, synthetic datasets, and goal-conditioned
stacking agents."""

__version__ = "0.1.0"
