"""Error types shared by the solver, the simulator and the CLI.

Every error carries an ``error`` dict (code, description, plus whatever context the
raiser attached) and an exit code. The CLI turns one into the other at its top
level and nowhere else, so library callers get ordinary exceptions.
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2


class RidgeRiskError(Exception):
    """Base error with a machine-readable code and a process exit code"""

    code = "ridgerisk_error"
    exit_code = EXIT_NUMERIC

    def __init__(self, description, **context):
        super().__init__(description)
        self.error = {"code": self.code, "description": description, **context}

    @property
    def description(self):
        return self.error["description"]

    def tag(self, **context):
        """Attach more context (grid index, trial index) and return self for re-raising."""
        self.error.update(context)
        return self


class UsageError(RidgeRiskError):
    code = "usage_error"
    exit_code = EXIT_USAGE


class NumericError(RidgeRiskError):
    code = "numeric_error"
    exit_code = EXIT_NUMERIC


class InvalidMeasure(UsageError):
    code = "invalid_measure"


class NonPositiveArgument(UsageError):
    code = "non_positive_argument"


class EmptySpectrum(UsageError):
    code = "empty_spectrum"


class InvalidParameter(UsageError):
    code = "invalid_parameter"


class InvalidCoefficients(UsageError):
    code = "invalid_coefficients"


class CaseMismatch(UsageError):
    code = "case_mismatch"


class ConfigError(UsageError):
    code = "config_error"


class NoBracket(NumericError):
    code = "no_bracket"


class MaxIterations(NumericError):
    code = "max_iterations"


class DegenerateDenominator(NumericError):
    code = "degenerate_denominator"


class SolveFailure(NumericError):
    code = "solve_failure"
