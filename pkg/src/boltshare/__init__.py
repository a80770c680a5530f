"""Load sharing in multi-bolt composite joints: a spring-network solver,
an MLP surrogate, and GA/PSO/grid searches for even load distribution."""

__version__ = "0.1.0"
