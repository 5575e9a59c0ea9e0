"""Empirical-measure convergence rates for ergodic diffusions: simulators,
spectral limit constants and Wasserstein engines."""

__version__ = "0.1.0"
