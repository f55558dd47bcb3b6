"""Simulation of a two-server blind quantum computation protocol with CHSH and tomography checks."""
from .harness import RunConfig, RunReport, aggregate, run_experiment, simulate, sweep
from .parties import Server, Strategies, ServerStrategy, Honesty, SubProtocol
from .resources import NoiseModel
from .verify import chsh_threshold

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "RunReport",
    "aggregate",
    "run_experiment",
    "simulate",
    "sweep",
    "Server",
    "Strategies",
    "ServerStrategy",
    "Honesty",
    "SubProtocol",
    "NoiseModel",
    "chsh_threshold",
]
