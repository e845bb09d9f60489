"""Exception types shared across the package."""


class GraphPillarsError(Exception):
    pass


class ConfigError(GraphPillarsError, ValueError):
    """Invalid configuration or incompatible layer setup."""


class DimensionError(GraphPillarsError, ValueError):
    """Tensor shapes do not agree."""


class GenerationError(GraphPillarsError):
    """The scene generator could not place objects."""


class SceneFormatError(GraphPillarsError, ValueError):
    """A scene or detection file line could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaError(SceneFormatError):
    """A parsed record does not match the expected schema."""


class AlignmentError(GraphPillarsError, ValueError):
    """Detection and scene files do not cover the same scene ids."""


class NonFiniteLossError(GraphPillarsError, ArithmeticError):
    """A loss term became NaN or infinite during training."""

    def __init__(self, term: str, value: float):
        self.term = term
        self.value = value
        super().__init__(f"non-finite loss term {term!r}: {value}")
