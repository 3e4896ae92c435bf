"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with inputs that violate its contract."""


class DimensionError(ContractError):
    """Shape mismatch inside a tensor primitive or network."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class ParseError(ValueError):
    """Malformed benchmark file. Carries the offending line number when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f"{':' if where else 'line '}{line}"
        super().__init__(f"{where}: {message}" if where else message)


class GenerationError(RuntimeError):
    """Random instance generation ran out of its retry budget."""
