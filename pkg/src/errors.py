from typing import Optional


class DCRatesError(ValueError):
    """Base class for every error raised by the library."""


class DomainError(DCRatesError):
    """Curvature parameters or arguments outside the domain of a formula."""


class RangeError(DCRatesError):
    """A tilted argmin was requested for a slope outside the range of the subdifferential."""


class SingularError(DCRatesError):
    """A quadratic tilted argmin has no solution along a flat direction."""


class StepsizeError(DCRatesError):
    pass


class ScheduleError(DCRatesError):
    pass


class WeightError(DCRatesError):
    pass


class NoRootError(DCRatesError):
    pass


class DecompositionError(DCRatesError):
    def __init__(
        self,
        message: str,
        lemma: Optional[str] = None,
        label: Optional[str] = None,
        value: Optional[float] = None,
    ) -> None:
        super().__init__(message)
        self.lemma = lemma
        self.label = label
        self.value = value
