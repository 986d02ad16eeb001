"""Exception types shared across the package.

Each exception carries the CLI exit code it maps to.
"""


class ReflectDimError(Exception):
    exit_code = 1


class ValidationError(ReflectDimError, ValueError):
    """Invalid session, scenario or configuration input."""

    exit_code = 1

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class UnstableQueueError(ReflectDimError):
    """Traffic intensity rho >= 1; no steady state exists."""

    exit_code = 2

    def __init__(self, rho):
        self.rho = rho
        super().__init__(f"unstable queue: rho = {rho:.6g} >= 1")


class InsufficientMassError(ReflectDimError):
    exit_code = 3

    def __init__(self, probs, attained):
        self.probs = list(probs)
        self.attained = attained
        plist = ", ".join(f"{p:g}" for p in self.probs)
        super().__init__(
            f"probability mass insufficient for p = {plist} "
            f"(attained {attained:.6g}); increase i_max mass threshold"
        )


class NumericalError(ReflectDimError):
    """Quadrature or recursion produced values outside their valid range."""

    exit_code = 1


class MonteCarloBudgetError(NumericalError):
    def __init__(self, i, points, integral, stddev):
        self.component = i
        self.points = points
        self.integral = integral
        self.stddev = stddev
        super().__init__(
            f"component {i}: tolerance not met at max_points={points} "
            f"(integral {integral:.6g}, est. stddev {stddev:.3g})"
        )


class DimensioningError(ReflectDimError):
    exit_code = 4
