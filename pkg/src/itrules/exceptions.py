"""Exception types shared across the package."""


class ItrulesError(Exception):
    """Base class for all itrules errors."""


class ParameterError(ItrulesError, ValueError):
    """An argument violates a precondition (range, shape, or kind)."""


class IngestionError(ItrulesError):
    """A dataset file or its schema sidecar is malformed.

    Messages include the offending row/column when one can be named.
    """


class SchemaMismatchError(ItrulesError):
    """Prediction input does not conform to the schema a model was fit on."""


class DegenerateCateError(ItrulesError):
    """Treatment-effect vector has zero spread, so confounded assignment
    probabilities are undefined."""


class InfeasibleCorrelationError(ItrulesError, ValueError):
    """The requested potential-outcome correlation admits no valid joint
    distribution for the given marginals."""

    def __init__(self, rho: float, rho_min: float, rho_max: float, context: str = ""):
        self.rho = rho
        self.rho_min = rho_min
        self.rho_max = rho_max
        where = f" ({context})" if context else ""
        super().__init__(
            f"correlation {rho} is infeasible for the supplied marginals{where}; "
            f"feasible interval is [{rho_min:.6g}, {rho_max:.6g}]"
        )
