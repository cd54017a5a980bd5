"""Exception hierarchy.

Every error derives from ``TissueKineticsError`` and from the built-in exception
a caller would otherwise expect, so ``except ValueError`` keeps working.

The ``exit_code`` class attribute is the CLI contract:
0 ok / 1 check failed / 2 input / 3 model / 4 samples / 5 convergence.
"""

from __future__ import annotations

from typing import Any, Optional


class TissueKineticsError(Exception):
    """Root of all toolkit errors."""

    exit_code: int = 3


# Input / schema errors (exit 2)


class InputError(TissueKineticsError):
    exit_code = 2


class SchemaViolation(InputError, ValueError):
    """Configuration or table file does not match its schema."""


class InvalidGrid(InputError, ValueError):
    """Time grid is empty, non-increasing or has non-positive times."""


class MissingWholeBlood(InputError, ValueError):
    """A mixing model was requested without a whole-blood curve."""


class InvalidWholeBlood(InputError, ValueError):
    """Whole-blood samples violate the scale-resolution preconditions."""


class UnknownRegion(InputError, KeyError):
    """Region id not present in the configuration."""


# Model errors (exit 3)


class ModelError(TissueKineticsError):
    exit_code = 3


class InvalidParameter(ModelError, ValueError):
    """Parameter outside its admissible range."""


class DegenerateParams(ModelError, ValueError):
    """(k2+k3+k4)^2 <= 4*k2*k4: equal or complex eigenvalues."""


class QuadratureFailure(ModelError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


class NonFiniteState(ModelError, ArithmeticError):
    """ODE integration produced a non-finite state."""


class IllConditioned(ModelError, ArithmeticError):
    """Exponential basis matrix is too ill-conditioned to solve reliably."""

    def __init__(self, message: str, condition: float) -> None:
        super().__init__(message)
        self.condition = condition


class RankDeficient(ModelError, ArithmeticError):
    """Sample times make a nonlinear system singular."""


class NoSolution(ModelError, RuntimeError):
    """Newton iteration failed from every start."""


class ExhaustedRedraws(ModelError, RuntimeError):
    """Random sampler rejected too many draws in a row."""


# Sample-count errors (exit 4)


class InsufficientSamples(TissueKineticsError, ValueError):
    exit_code = 4


# Convergence errors (exit 5)


class NoConvergence(TissueKineticsError, RuntimeError):
    """No start reached the residual tolerance.

    The best (non-converged) result is kept on ``result``.
    """

    exit_code = 5

    def __init__(self, message: str, result: Optional[Any] = None) -> None:
        super().__init__(message)
        self.result = result
