"""Distributed linear stochastic approximation over time-varying directed graphs."""

from . import analysis, engines, graphs, noise, weights

__version__ = "0.1.0"

__all__ = ["analysis", "engines", "graphs", "noise", "weights", "__version__"]
