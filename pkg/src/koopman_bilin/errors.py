"""Exception hierarchy.

Every error carries a short machine-readable ``code`` used by the CLI for
structured failure reports. ``exit_status`` separates mathematical condition
failures (2) from runtime failures (1).
"""

from __future__ import annotations

from typing import Any


class KoopmanError(Exception):
    code = "runtime_error"
    exit_status = 1

    def __init__(self, message: str, **detail: Any):
        super().__init__(message)
        self.detail = detail

    def to_dict(self) -> dict:
        return {"code": self.code, "message": str(self), "detail": self.detail}


class DimensionMismatch(KoopmanError, ValueError):
    code = "dimension_mismatch"


class ConfigError(KoopmanError, ValueError):
    code = "config_error"


# spectral
class NonDiagonalizable(KoopmanError):
    code = "non_diagonalizable"


class ContourTouchesSpectrum(KoopmanError):
    code = "contour_touches_spectrum"


class NearSingular(KoopmanError):
    code = "near_singular"


# conditions
class BudgetExceeded(KoopmanError):
    code = "budget_exceeded"


# flow
class StepLimitExceeded(KoopmanError):
    code = "step_limit_exceeded"


class NonFinite(KoopmanError):
    code = "non_finite"


# linearize / bilinearize: mathematical hypotheses not met
class ConditionError(KoopmanError):
    code = "condition_failed"
    exit_status = 2


class NotGES(ConditionError):
    code = "not_ges"


class ResonantDenominator(ConditionError):
    code = "resonant_denominator"


class ConditionFailed(ConditionError):
    code = "condition_failed"


class CertificateNotIsomorphic(ConditionError):
    code = "certificate_not_isomorphic"


class ResidualTooLarge(KoopmanError):
    code = "residual_too_large"


# liealg
class DimensionExplosion(KoopmanError):
    code = "dimension_explosion"


class NotInvariant(KoopmanError):
    code = "not_invariant"


# gedmd
class IllConditioned(KoopmanError):
    code = "ill_conditioned"


class NoMatch(KoopmanError):
    code = "no_match"
