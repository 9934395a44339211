from __future__ import annotations

from typing import Iterable, Sequence


class DemError(ValueError):
    """Base class for every error raised by the estimator library."""


class ArgumentError(DemError):
    pass


class DimensionError(DemError):
    pass


class DomainError(DemError):
    pass


class CapacityError(DemError):
    pass


class EmptyDataError(DemError):
    pass


class ContractError(DemError):
    pass


class UnsupportedClassError(DemError):
    pass


class FormatError(DemError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None) -> None:
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{message}")
        self.path = path
        self.line = line


class IdentifiabilityError(DemError):
    def __init__(self, message: str, events: Iterable[object] = ()) -> None:
        self.events = list(events)
        names = ", ".join(str(e) for e in self.events)
        super().__init__(f"{message}: {names}" if names else message)


class EstimationError(DemError):
    """Raised when the data cannot support the requested estimate.

    `parities` lists the parity masks whose polarizations were statistically
    indistinguishable from zero.
    """

    def __init__(self, message: str, parities: Sequence[object] = ()) -> None:
        self.parities = list(parities)
        shown = ", ".join(str(p) for p in self.parities[:10])
        if len(self.parities) > 10:
            shown += f", ... ({len(self.parities)} total)"
        super().__init__(f"{message} [{shown}]" if shown else message)
