"""Quantum potential energy as the kinetic energy of a concealed flow.

Submodules: :mod:`routh` (discrete Routh reduction), :mod:`qlag`
(Lagrangian quantum fluid and concealed flow), :mod:`eref` (Eulerian
Schrodinger reference), :mod:`energy` (energy identities) and :mod:`cli`.
"""
from .errors import (ConcealedError, ConfigError, NumericalError, SingularMatrixError,
                     StabilityError, TrajectoryCrossingError)

__version__ = "0.1.0"

__all__ = ["ConcealedError", "ConfigError", "NumericalError", "SingularMatrixError",
           "StabilityError", "TrajectoryCrossingError", "__version__"]
