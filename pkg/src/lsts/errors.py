"""Exception types raised across the package."""


class LstsError(Exception):
    pass


class SpecSyntaxError(LstsError, ValueError):
    def __init__(self, message, line, col, expected=(), found=None):
        self.line = line
        self.col = col
        self.expected = frozenset(expected)
        self.found = found
        exp = ", ".join(sorted(self.expected))
        detail = f" (expected one of: {exp})" if exp else ""
        super().__init__(f"{line}:{col}: {message}{detail}")


class EmptyTraceError(LstsError, ValueError):
    pass


class EmptyGraphError(LstsError, ValueError):
    pass


class UnknownEdgeError(LstsError, KeyError):
    pass


class PathExplosionError(LstsError, RuntimeError):
    pass


class InvalidLayoutError(LstsError, ValueError):
    pass


class EmptyActiveSetError(LstsError, RuntimeError):
    pass


class InsufficientHistoryError(LstsError, RuntimeError):
    pass


class MissingOrderedListError(LstsError, RuntimeError):
    pass


class DegenerateVarianceError(LstsError, ValueError):
    pass


class ConfigError(LstsError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
