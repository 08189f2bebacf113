from typing import Optional


class TransformerClassifierError(Exception):
    """Base error; `detail` carries the message shown to CLI users."""

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ShapeMismatchError(TransformerClassifierError):
    pass


class InitializationError(TransformerClassifierError):
    pass


class PreconditionError(TransformerClassifierError):
    pass


class ConstructionError(TransformerClassifierError):
    pass


class ThresholdError(ConstructionError):
    """Raised when a hard-max head's separation constant is below the argmax threshold."""

    def __init__(self, detail: str, threshold: Optional[float] = None):
        super().__init__(detail)
        self.threshold = threshold


class OracleError(TransformerClassifierError):
    pass
