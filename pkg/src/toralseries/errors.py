"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class ToralSeriesError(Exception):
    """Base class for all errors raised by toralseries."""


class DimensionMismatch(ToralSeriesError, ValueError):
    pass


class NotUnimodular(ToralSeriesError, ValueError):
    pass


class NotHyperbolic(ToralSeriesError, ValueError):
    pass


class ComplexSpectrum(ToralSeriesError, ValueError):
    """Raised by the 1-D splitting path; complex pairs need block mode."""


class DegenerateModuli(ToralSeriesError, ValueError):
    pass


class GapViolation(ToralSeriesError, ValueError):
    pass


class ResonantPair(ToralSeriesError, ValueError):
    pass


class ResonantBlocks(ToralSeriesError, ValueError):
    pass


class BudgetExceeded(ToralSeriesError, RuntimeError):
    """Dropped Fourier mass exceeded the configured cap."""

    def __init__(self, dropped: float, cap: float, where: str = ""):
        self.dropped = dropped
        self.cap = cap
        msg = f"dropped mass {dropped:.3e} exceeds budget {cap:.3e}"
        super().__init__(f"{msg} ({where})" if where else msg)


class OrderOverflow(ToralSeriesError, RuntimeError):
    def __init__(self, order: int, norm: float):
        self.order = order
        self.norm = norm
        super().__init__(f"coefficient norm {norm:.3e} at order {order} exceeds overflow guard")


class GershgorinFailure(ToralSeriesError, RuntimeError):
    def __init__(self, points, margins):
        self.points = points
        self.margins = margins
        super().__init__(f"Gershgorin dominance fails at {len(points)} sample point(s)")


class BetaTooLarge(ToralSeriesError, ValueError):
    pass


class InsufficientOrders(ToralSeriesError, ValueError):
    pass


class NotDiffeomorphism(ToralSeriesError, ValueError):
    pass


class NonConvergence(ToralSeriesError, RuntimeError):
    pass


class NoContraction(ToralSeriesError, RuntimeError):
    pass


class MaxIterations(ToralSeriesError, RuntimeError):
    pass


class ZeroMultiplier(ToralSeriesError, RuntimeError):
    pass


class IllConditionedFit(ToralSeriesError, ValueError):
    pass


class WrongSignature(ToralSeriesError, ValueError):
    pass


class SpectrumMismatch(ToralSeriesError, RuntimeError):
    pass


class ConfigError(ToralSeriesError, ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{message} [{', '.join(where)}]" if where else message)
