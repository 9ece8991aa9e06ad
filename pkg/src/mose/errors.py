"""Exception types raised across the package."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to converge or produced non-finite output."""


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ConstructionError(RuntimeError):
    """A randomized constructor could not satisfy its invariants."""


class LayerSelectionError(RuntimeError):
    """No layer survived the exclusion rules of layer selection."""


class ConfigError(ValueError):
    """Invalid experiment configuration.

    ``field`` holds the dotted path of the offending entry.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
