"""Exception hierarchy. Each class carries the CLI exit code for its category."""


class BlipsumError(Exception):
    category = "error"
    exit_code = 1


class DomainError(BlipsumError, ValueError):
    category = "domain"
    exit_code = 2


class ExtrapolationError(DomainError):
    category = "extrapolation"


class ConfigError(BlipsumError, ValueError):
    category = "config"
    exit_code = 2


class ConvergenceError(BlipsumError, ArithmeticError):
    category = "convergence"
    exit_code = 3


class ResourceError(BlipsumError, MemoryError):
    category = "resource"
    exit_code = 4
