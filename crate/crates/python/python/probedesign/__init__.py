"""Probing designs for network latency and loss estimation."""

from ._probedesign import ProbingDistribution, Topology, __version__, run_experiment

__all__ = ["ProbingDistribution", "Topology", "run_experiment", "__version__"]
