"""Exception hierarchy shared by all hyprec modules."""


class HyprecError(Exception):
    """Base class for errors raised by hyprec."""


class DimensionError(HyprecError, ValueError):
    """Array shapes do not agree."""


class DomainError(HyprecError, ValueError):
    """Input lies outside the domain of an operation (e.g. outside the unit ball)."""


class SingularityError(HyprecError, ArithmeticError):
    """A gradient denominator fell below the singularity floor."""


class ConfigError(HyprecError, ValueError):
    """Inconsistent or incomplete configuration."""


class DataError(HyprecError, ValueError):
    """Malformed or insufficient input data."""


class FitError(HyprecError, ValueError):
    """A statistical fit could not be carried out."""
