"""Exception hierarchy; each class carries a short machine-readable code."""


class SocmobError(Exception):
    code = "error"

    def __init__(self, message: str | None = None):
        super().__init__(message or self.code)


class ConfigError(SocmobError):
    code = "config-error"


class DataValidationError(SocmobError):
    code = "data-validation"


class NumericalError(SocmobError):
    code = "numerical-failure"


class DegenerateVariableError(NumericalError):
    code = "degenerate-variable"


class SingularDesignError(NumericalError):
    code = "singular-design"


class InsufficientPairsError(NumericalError):
    code = "insufficient-pairs"


class UnstableBootstrapError(NumericalError):
    code = "unstable-bootstrap"
