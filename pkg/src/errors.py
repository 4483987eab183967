from typing import Any, Dict, Tuple


class LatentSegError(Exception):
    pass


class ValidationError(LatentSegError):
    pass


class NormalizationError(ValidationError):
    def __init__(self, max_deviation: float, message: str = None):
        self.max_deviation = max_deviation
        super().__init__(message or f"Probability map is not normalized (max channel-sum deviation {max_deviation:.3e})")


class RangeError(ValidationError):
    def __init__(self, min_value: float, message: str = None):
        self.min_value = min_value
        super().__init__(message or f"Probability map has entries outside [0, 1] (min {min_value:.3e})")


class LabelRangeError(ValidationError):
    def __init__(self, position: Tuple[int, ...], value: int, message: str = None):
        self.position = position
        self.value = value
        super().__init__(message or f"Invalid label {value} at pixel {position}")


class DimensionError(LatentSegError):
    pass


class ShapeError(LatentSegError):
    def __init__(self, required_multiple: int, message: str):
        self.required_multiple = required_multiple
        super().__init__(message)


class ConfigurationError(LatentSegError):
    pass


class StateError(LatentSegError):
    pass


class GenerationError(LatentSegError):
    pass


class LoadError(LatentSegError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class UndefinedMetricError(LatentSegError):
    pass


class NonFiniteLossError(LatentSegError):
    def __init__(self, components: Dict[str, Any], message: str = None):
        self.components = components
        super().__init__(message or f"Non-finite training loss, components: {components}")
