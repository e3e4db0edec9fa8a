"""Exception types raised across the package."""

from __future__ import annotations


class WassmanError(Exception):
    """Base class for all package-specific errors."""


# -- measures ---------------------------------------------------------------


class EmptySupport(WassmanError):
    """A measure was constructed with no support points."""


class NegativeWeight(WassmanError):
    """A measure was constructed with a negative weight."""


class LengthMismatch(WassmanError):
    """Points, weights, or velocity arrays disagree in length."""


class BadResolution(WassmanError):
    """A template was discretized with a non-positive resolution."""


# -- transport solvers ------------------------------------------------------


class DimensionMismatch(WassmanError):
    """Source and target live in different ambient dimensions."""


class NoConvergence(WassmanError):
    """Sinkhorn failed to meet the marginal tolerance within its budget."""

    def __init__(self, iterations: int, err: float | None = None):
        self.iterations = iterations
        self.err = err
        msg = f"no convergence after {iterations} iterations"
        if err is not None:
            msg += f" (marginal error {err:.3e})"
        super().__init__(msg)


class ZeroRow(WassmanError):
    """Barycentric projection hit a source atom with zero plan mass."""


# -- deformation families ---------------------------------------------------


class OutOfParameterBox(WassmanError):
    """A parameter point lies outside the family's parameter box."""


class OdeStepFailure(WassmanError):
    """The deformation ODE integrator produced a non-finite state."""


class OutsideRange(WassmanError):
    """A point could not be mapped back through the deformation."""


class NonMonotone(WassmanError):
    """A 1d deformation is not strictly increasing on its support."""


# -- flows and energies -----------------------------------------------------


class BadQuadrature(WassmanError):
    """Unknown quadrature rule or non-positive step count."""


# -- graph metrics ----------------------------------------------------------


class DisconnectedGraph(WassmanError):
    """The neighborhood graph split into more than one component."""


class NotACorrespondence(WassmanError):
    """A relation between sample sets misses points on one side."""


# -- spectral recovery ------------------------------------------------------


class EigFailure(WassmanError):
    """Eigendecomposition did not converge."""


class CountMismatch(WassmanError):
    """Velocity collections disagree in size where they must pair up."""


class RankDeficient(WassmanError):
    """An operation needed more independent fields than were supplied."""


# -- gradient projection ----------------------------------------------------


class EmptyMask(WassmanError):
    """Gradient projection was asked to run on an all-false mask."""


class CgNoConvergence(WassmanError):
    """Conjugate gradients stalled before reaching its residual target."""

    def __init__(self, iterations: int, residual: float | None = None):
        self.iterations = iterations
        self.residual = residual
        msg = f"CG did not converge in {iterations} iterations"
        if residual is not None:
            msg += f" (relative residual {residual:.3e})"
        super().__init__(msg)


# -- configuration ----------------------------------------------------------


class ConfigError(WassmanError):
    """Invalid experiment configuration; `field` names the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class BadCsv(WassmanError):
    """CSV file unusable for plotting (empty or missing columns)."""
