"""Global VAR with endogenous stochastic volatility: estimation, stacking and spillover experiments."""

__version__ = "0.1.0"
