"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated a documented precondition (shapes, ranges, arity)."""


class DomainError(ValueError):
    """A numeric operation was asked to evaluate outside its domain."""


class ConfigError(ValueError):
    """A run configuration is inconsistent or incomplete."""


class DatasetFormatError(ValueError):
    """A dataset or checkpoint file could not be parsed."""

    def __init__(self, path, offset, reason):
        self.path = str(path)
        self.offset = offset
        self.reason = reason
        super().__init__(f"{self.path} (offset {offset}): {reason}")
