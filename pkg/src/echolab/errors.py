"""Exception hierarchy shared by all echolab modules."""


class EchoLabError(Exception):
    """Base class for every error raised by echolab."""


class InvalidSpec(EchoLabError, ValueError):
    pass


class NotMinMaxForm(EchoLabError, ValueError):
    """The forbidden words encode more than run-length constraints."""


class EmptyOverlap(EchoLabError, ValueError):
    pass


class OutOfDomain(EchoLabError, ValueError):
    pass


class NoStablePoints(EchoLabError):
    pass


class BoundaryStraddle(EchoLabError):
    """An attractor of one map does not settle into any basin of another."""

    def __init__(self, i, j, k):
        super().__init__(f"attractor {j} of map {i} hits no basin ball of map {k}")
        self.cell = (i, j, k)


class InvalidSeed(EchoLabError, ValueError):
    pass


class HorizonExceeded(EchoLabError):
    pass


class NotFunneling(EchoLabError):
    pass


class WindowExhausted(EchoLabError, IndexError):
    pass


class WindowTooShort(EchoLabError, ValueError):
    pass


class EmptySet(EchoLabError, ValueError):
    pass


class ConfigError(EchoLabError, ValueError):
    pass
