"""Exception hierarchy.

Validation errors (bad inputs, incompatible objects) derive from
``ValidationError``; numerical failures of the solvers derive from
``SolverError``. The CLI maps the two families to different exit codes.
"""

from __future__ import annotations


class InfoGeoError(Exception):
    """Base class for every error raised by the package."""

    reason = "error"

    def __init__(self, message: str = "", **details):
        super().__init__(message)
        self.details = details


class ValidationError(InfoGeoError, ValueError):
    reason = "validation"


class SolverError(InfoGeoError, ArithmeticError):
    reason = "solver"


class InvalidRange(ValidationError):
    reason = "invalid_range"


class ZeroMass(ValidationError):
    reason = "zero_mass"


class GridMismatch(ValidationError):
    reason = "grid_mismatch"


class SupportViolation(ValidationError):
    reason = "support_violation"


class DomainViolation(ValidationError):
    reason = "domain_violation"


class ZeroPrice(ValidationError):
    reason = "zero_price"


class ZeroEvidence(ValidationError):
    reason = "zero_evidence"


class ZeroExposure(ValidationError):
    reason = "zero_exposure"


class FamilyEvaluationError(ValidationError):
    reason = "family_evaluation"


class OverflowRisk(ValidationError):
    reason = "overflow_risk"


class DivisionByZero(ValidationError):
    reason = "division_by_zero"


class TargetUnreachable(SolverError):
    reason = "target_unreachable"


class Infeasible(SolverError):
    reason = "infeasible"


class MaxIterations(SolverError):
    reason = "max_iterations"


class NegativeDensity(SolverError):
    reason = "negative_density"


class SingularSystem(SolverError):
    reason = "singular_system"


class BudgetInfeasible(SolverError):
    reason = "budget_infeasible"


class StiffProfile(SolverError):
    reason = "stiff_profile"


class PayoffDomainViolation(DomainViolation, SolverError):
    """A solver produced a payoff outside the admissible (nonnegative) region."""

    reason = "payoff_domain_violation"
