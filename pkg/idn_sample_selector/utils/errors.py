"""
Exception hierarchy for the IDN Sample Selector
"""


class SelectorError(Exception):
    """Base class for every error raised by this package"""


class ConfigError(SelectorError, ValueError):
    """Invalid configuration value, preset or command-line input"""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None and field not in message:
            message = f"{field}: {message}"
        super().__init__(message)


class NumericalError(SelectorError, ArithmeticError):
    """Non-finite loss or gradient; `term` names the loss term involved"""

    def __init__(self, message, term=None):
        self.term = term
        if term is not None:
            message = f"[{term}] {message}"
        super().__init__(message)


class DimensionError(SelectorError, ValueError):
    """Operand shapes do not agree"""


class DegenerateFeatureError(SelectorError, ValueError):
    """A feature vector has zero norm and cannot be normalized"""


class DegenerateCenterError(SelectorError, ValueError):
    """Normalized member features of a class sum to the zero vector"""

    def __init__(self, class_id, message=None):
        self.class_id = class_id
        super().__init__(message or f"class {class_id}: member features sum to zero")


class InsufficientDataError(SelectorError, ValueError):
    """Too few values for a two-component mixture fit"""


class DegenerateDataError(SelectorError, ValueError):
    """All values equal; a two-component mixture is not identifiable"""


class UndefinedAUCError(SelectorError, ValueError):
    """AUC requested with only one class present in the ground truth"""
