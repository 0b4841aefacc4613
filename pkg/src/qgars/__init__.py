"""Quantum-guided adaptive robust scheduling toolkit."""

from . import adaptive, allocator, annealer, domain, harness, kernels, qubo, simengine
from .errors import ContractViolation, QgarsError, ScenarioError

__version__ = "0.1.0"

__all__ = [
    "adaptive",
    "allocator",
    "annealer",
    "domain",
    "harness",
    "kernels",
    "qubo",
    "simengine",
    "ContractViolation",
    "QgarsError",
    "ScenarioError",
    "__version__",
]
