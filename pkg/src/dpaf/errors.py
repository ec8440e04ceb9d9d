"""Exception hierarchy.

Every class name doubles as the machine-parseable error class the CLI prints.
"""


class DPAFError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 4


class ConfigError(DPAFError):
    pass


class NonConvergence(DPAFError):
    pass


class WeightError(DPAFError):
    pass


class InsufficientCohort(DPAFError):
    pass


class OutOfScopeRate(DPAFError):
    pass


class TierError(DPAFError):
    pass


class ParseError(DPAFError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownVariant(DPAFError):
    pass


class EmptyInput(DPAFError):
    pass


class EmptyExplanation(DPAFError):
    pass


class TagParseError(DPAFError):
    def __init__(self, category: str, message: str):
        self.category = category
        super().__init__(f"{category}: {message}")


class DegenerateData(DPAFError):
    pass


class SeparationError(DPAFError):
    pass


class SingularDesign(DPAFError):
    pass


class NoPairs(DPAFError):
    pass


class InsufficientOverlap(DPAFError):
    pass


class MissingStage(DPAFError):
    exit_code = 3


class IntegrityError(DPAFError):
    pass


class LockedExperiment(DPAFError):
    pass
